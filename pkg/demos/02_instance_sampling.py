"""Instance subsampling: index selection, matrix gathers, feature generation.

Instances are cut from a base map in well under a millisecond: pick distinct
indices, gather the matching rows/columns of the big matrices, then attach
task features (demands, capacity, time windows). Uniform sampling covers the
city; cluster sampling concentrates around a few seed points for
out-of-distribution evaluation.
"""

import time

import numpy as np

from rrnco.ingest import SynthConfig, synth_basemap
from rrnco.instances import make_instance

bmap = synth_basemap(SynthConfig(n=1000, seed=3, asymmetry=0.5))
print(f"base map: {bmap.n_tot} locations")

print("\n== throughput ==")
for _ in range(20):  # warm up
    make_instance(bmap, "atsp", 100, seed=0)
t0 = time.perf_counter()
count = 1000
for i in range(count):
    make_instance(bmap, "atsp", 100, seed=i)
elapsed = time.perf_counter() - t0
print(f"{count} instances of n=100 in {elapsed:.3f}s ({elapsed / count * 1e3:.2f} ms each)")

print("\n== uniform vs cluster sampling ==")
uni = make_instance(bmap, "atsp", 50, sampler="uniform", seed=11)
clu = make_instance(bmap, "atsp", 50, sampler="cluster", seed=11, n_clusters=3)
for name, inst in (("uniform", uni), ("cluster", clu)):
    coords = bmap.coords_norm[inst.indices]
    spread = np.linalg.norm(coords - coords.mean(axis=0), axis=1).mean()
    print(f"{name:8s}: mean spread around centroid {spread:.3f} (city units)")

print("\n== task features ==")
acvrp = make_instance(bmap, "acvrp", 100, seed=5)
print(f"acvrp   : capacity {acvrp.capacity}, demands in "
      f"[{acvrp.demands[1:].min():.2f}, {acvrp.demands[1:].max():.2f}], depot demand 0")
tw = make_instance(bmap, "acvrptw", 100, seed=5)
width = tw.tw[1:, 1] - tw.tw[1:, 0]
print(f"acvrptw : horizon {tw.tw[0, 1]}, window widths "
      f"[{width.min():.2f}, {width.max():.2f}] time units")

print("\n== the gather definition ==")
inst = make_instance(bmap, "atsp", 5, seed=9)
s = inst.indices
print("index vector:", s)
print("instance dist equals the base-map gather:",
      np.array_equal(inst.dist, bmap.dist[np.ix_(s, s)]))
print("instance coords are re-normalized to [0,1]^2:",
      inst.coords.min(axis=0), inst.coords.max(axis=0))
