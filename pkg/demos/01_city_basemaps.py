"""Base maps: geography primitives, normalization, and the binary container.

A base map is a city's sampled locations plus full asymmetric distance and
duration matrices in normalized [0, 1] units. This script builds a synthetic
city, injects an unreachable arc to show the normalization rules, and round
trips the container format.
"""

import tempfile
from pathlib import Path

import numpy as np

from rrnco.geo import (GeoPoint, bbox_for_area, haversine, normalize_basemap,
                       read_basemap, write_basemap, basemap_equal)
from rrnco.ingest import SynthConfig, synth_basemap

print("== geography primitives ==")
km_per_degree = haversine(GeoPoint(0, 0), GeoPoint(0, 1))
print(f"one degree along the equator : {km_per_degree:8.3f} km")
print(f"pole to equator              : {haversine(GeoPoint(0, 0), GeoPoint(90, 0)):8.3f} km")

box_eq = bbox_for_area(GeoPoint(0, 0), 3.0)
box_60 = bbox_for_area(GeoPoint(60, 0), 3.0)
print(f"3 km box at the equator      : lon half-width {box_eq.lon_max:.6f} deg")
print(f"3 km box at latitude 60      : lon half-width {box_60.lon_max:.6f} deg "
      f"({box_60.lon_max / box_eq.lon_max:.2f}x wider)")

print("\n== synthetic city ==")
bmap = synth_basemap(SynthConfig(n=300, seed=7, asymmetry=0.5))
off = ~np.eye(bmap.n_tot, dtype=bool)
asym = np.abs(bmap.dist - bmap.dist.T)[off]
print(f"{bmap.name}: {bmap.n_tot} locations, dist_scale {bmap.dist_scale:.0f} m/unit")
print(f"asymmetry |d_ij - d_ji|: mean {asym.mean():.4f}, max {asym.max():.4f} (normalized units)")

print("\n== normalization with an unreachable arc ==")
raw_dist = np.array([
    [0.0, 900.0, 400.0],
    [850.0, 0.0, np.nan],   # arc 1 -> 2 is unreachable
    [420.0, 300.0, 0.0],
])
raw_dur = np.where(np.isnan(raw_dist), np.nan, raw_dist / 8.0)
coords = np.array([[0.0, 0.0], [0.01, 0.0], [0.0, 0.01]])
small = normalize_basemap(raw_dist, raw_dur, coords, name="toy")
print("normalized dist:\n", np.round(small.dist, 4))
print("unreachable mask:\n", small.unreachable_mask)
print("the unreachable arc lands at exactly 1.0 (twice the largest real arc)")

print("\n== container round trip ==")
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "city.rrnc"
    write_basemap(bmap, path)
    again = read_basemap(path)
    print(f"wrote {path.stat().st_size / 1024:.0f} KiB, "
          f"bit-exact round trip: {basemap_equal(bmap, again)}")
