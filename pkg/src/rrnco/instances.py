"""Millisecond-scale VRP instance subsampling from base maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geo import BaseMap, angle_matrix, minmax_normalize

TASKS = ("atsp", "acvrp", "acvrptw")
TW_HORIZON = 4.6  # service horizon in normalized time units
TW_START_FRAC = 0.75   # customer window start ~ U[0, 0.75 * H]
TW_WIDTH_LO = 0.15     # width ~ U[0.15 * H, 0.3 * H]
TW_WIDTH_HI = 0.30
MAX_GEN_ATTEMPTS = 200


class InstanceGenerationError(RuntimeError):
    pass


@dataclass
class RoutingInstance:
    task: str
    n: int
    coords: np.ndarray           # (n, 2) float32 in [0, 1]^2
    dist: np.ndarray             # (n, n) float32
    dur: np.ndarray              # (n, n) float32
    angle: np.ndarray            # (n, n) float32 in (-1, 1]
    demands: np.ndarray | None = None   # (n,) float64, demands[0] = 0
    capacity: float | None = None
    tw: np.ndarray | None = None        # (n, 2) float64 [start, end]
    depot_index: int = 0
    source_city: str = ""
    seed: int = 0
    indices: np.ndarray | None = field(default=None, repr=False)  # provenance, not serialized

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        n = self.n
        if self.coords.shape != (n, 2) or self.dist.shape != (n, n) \
                or self.dur.shape != (n, n) or self.angle.shape != (n, n):
            raise ValueError("array shapes inconsistent with n")
        if np.any(np.diagonal(self.dist) != 0) or np.any(np.diagonal(self.dur) != 0):
            raise ValueError("matrix diagonals must be 0")
        if self.task in ("acvrp", "acvrptw"):
            if self.demands is None or self.capacity is None:
                raise ValueError("capacitated task needs demands and capacity")
            if self.demands[0] != 0:
                raise ValueError("depot demand must be 0")
            if np.any(self.demands > self.capacity):
                raise ValueError("demands must not exceed capacity")
        if self.task == "acvrptw":
            if self.tw is None:
                raise ValueError("acvrptw needs time windows")
            if np.any(self.tw[:, 0] > self.tw[:, 1]):
                raise ValueError("window start must not exceed end")


def sample_indices_uniform(n_tot: int, n_sub: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw of n_sub distinct indices, order randomized."""
    if n_sub < 2 or n_sub > n_tot:
        raise ValueError(f"need 2 <= n_sub <= n_tot, got n_sub={n_sub}, n_tot={n_tot}")
    return rng.choice(n_tot, size=n_sub, replace=False)


def sample_indices_cluster(n_tot: int, n_sub: int, n_clusters: int,
                           coords_norm: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Clustered draw: uniform seeds, then round-robin nearest unchosen neighbors."""
    if n_sub < 2 or n_sub > n_tot:
        raise ValueError(f"need 2 <= n_sub <= n_tot, got n_sub={n_sub}, n_tot={n_tot}")
    if not 1 <= n_clusters <= n_sub:
        raise ValueError("need 1 <= n_clusters <= n_sub")
    seeds = rng.choice(n_tot, size=n_clusters, replace=False)
    chosen = list(seeds)
    taken = np.zeros(n_tot, dtype=bool)
    taken[seeds] = True
    coords = np.asarray(coords_norm, dtype=np.float64)
    # precompute distances from each seed to every base-map location
    seed_dists = np.linalg.norm(coords[seeds][:, None, :] - coords[None, :, :], axis=-1)
    for t in range(n_sub - n_clusters):
        d = seed_dists[t % n_clusters].copy()
        d[taken] = np.inf
        pick = int(np.argmin(d))  # ties break to lowest index
        taken[pick] = True
        chosen.append(pick)
    return np.asarray(chosen, dtype=np.int64)


def subsample_matrices(bmap: BaseMap, indices: np.ndarray):
    """Gather (dist_sub, dur_sub) with dist_sub[i][j] = dist[s_i][s_j]."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= bmap.n_tot):
        raise IndexError("index out of range for base map")
    grid = np.ix_(idx, idx)
    return bmap.dist[grid], bmap.dur[grid]


def gen_features(task: str, n: int, rng: np.random.Generator):
    """Task-specific features: (demands, capacity, tw), absent entries None.

    Demands are integers 1..9 scaled by the capacity constant (50 at n=100,
    max(20, ceil(n/2)) otherwise), so instance capacity is 1.0.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if n < 2:
        raise ValueError("n must be >= 2")
    if task == "atsp":
        return None, None, None
    cap_int = 50 if n == 100 else max(20, (n + 1) // 2)
    demands = rng.integers(1, 10, size=n).astype(np.float64) / cap_int
    demands[0] = 0.0
    capacity = 1.0
    if task == "acvrp":
        return demands, capacity, None
    h = TW_HORIZON
    start = rng.uniform(0.0, TW_START_FRAC * h, size=n)
    width = rng.uniform(TW_WIDTH_LO * h, TW_WIDTH_HI * h, size=n)
    end = np.minimum(start + width, h)
    tw = np.column_stack([start, end])
    tw[0] = (0.0, h)
    return demands, capacity, tw


def _tw_first_visit_ok(dur_sub: np.ndarray, tw: np.ndarray) -> bool:
    """Every customer must be serviceable as the first stop of a fresh trip."""
    arrive = np.maximum(dur_sub[0, 1:].astype(np.float64), tw[1:, 0])
    return bool(np.all(arrive <= tw[1:, 1]) and np.all(arrive + dur_sub[1:, 0] <= tw[0, 1]))


def make_instance(bmap: BaseMap, task: str, n_sub: int, sampler: str = "uniform",
                  seed: int = 0, n_clusters: int = 4) -> RoutingInstance:
    """Compose index selection, matrix gather, and feature generation.

    Pure function of (bmap, task, n_sub, sampler, seed). Instance coordinates
    are re-min-max-normalized to [0, 1]^2; the matrices are untouched and stay
    authoritative for cost. ACVRPTW draws are rejected and redrawn until every
    customer is feasible as a first visit (see _tw_first_visit_ok).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if sampler not in ("uniform", "cluster"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_GEN_ATTEMPTS):
        if sampler == "uniform":
            idx = sample_indices_uniform(bmap.n_tot, n_sub, rng)
        else:
            idx = sample_indices_cluster(bmap.n_tot, n_sub, n_clusters, bmap.coords_norm, rng)
        dist_sub, dur_sub = subsample_matrices(bmap, idx)
        demands, capacity, tw = gen_features(task, n_sub, rng)
        if task == "acvrptw" and not _tw_first_visit_ok(dur_sub, tw):
            continue
        coords = minmax_normalize(bmap.coords_norm[idx])
        return RoutingInstance(
            task=task, n=n_sub, coords=coords,
            dist=dist_sub, dur=dur_sub, angle=angle_matrix(coords),
            demands=demands, capacity=capacity, tw=tw,
            source_city=bmap.name, seed=seed, indices=idx,
        )
    raise InstanceGenerationError(
        f"no feasible instance after {MAX_GEN_ATTEMPTS} draws (seed={seed})")


def instance_to_json(inst: RoutingInstance) -> str:
    doc = {
        "task": inst.task,
        "n": inst.n,
        "coords": inst.coords.astype(np.float64).tolist(),
        "dist": inst.dist.astype(np.float64).tolist(),
        "dur": inst.dur.astype(np.float64).tolist(),
    }
    if inst.demands is not None:
        doc["demands"] = inst.demands.tolist()
        doc["capacity"] = inst.capacity
    if inst.tw is not None:
        doc["tw"] = inst.tw.tolist()
    doc["source_city"] = inst.source_city
    doc["seed"] = inst.seed
    return json.dumps(doc)


def instance_from_json(text: str) -> RoutingInstance:
    doc = json.loads(text)
    coords = np.asarray(doc["coords"], dtype=np.float32)
    demands = np.asarray(doc["demands"], dtype=np.float64) if "demands" in doc else None
    tw = np.asarray(doc["tw"], dtype=np.float64) if "tw" in doc else None
    inst = RoutingInstance(
        task=doc["task"], n=int(doc["n"]), coords=coords,
        dist=np.asarray(doc["dist"], dtype=np.float32),
        dur=np.asarray(doc["dur"], dtype=np.float32),
        angle=angle_matrix(coords),
        demands=demands, capacity=doc.get("capacity"), tw=tw,
        source_city=doc.get("source_city", ""), seed=int(doc.get("seed", 0)),
    )
    inst.validate()
    return inst


def write_dataset(instances, path) -> None:
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(instance_to_json(inst) + "\n")


def read_dataset(path) -> list[RoutingInstance]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(instance_from_json(line))
    return out
