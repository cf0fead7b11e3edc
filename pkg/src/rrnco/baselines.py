"""Classical oracles and heuristics for gap computation on asymmetric instances."""

from __future__ import annotations

import numpy as np

from .envs import EPS_CAPACITY

HELD_KARP_MAX_N = 14
CVRP_BRUTEFORCE_MAX_CUSTOMERS = 9


def tour_cost(dist: np.ndarray, tour) -> float:
    """Directed cycle cost including the closing arc."""
    total = 0.0
    for a, b in zip(tour, tour[1:]):
        total += float(dist[a, b])
    total += float(dist[tour[-1], tour[0]])
    return total


def held_karp_atsp(dist: np.ndarray, max_n: int = HELD_KARP_MAX_N):
    """Exact directed Hamiltonian cycle optimum by subset DP, O(2^n n^2).

    Returns (cost, tour starting at node 0). Ties break to the lowest index.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n > max_n:
        raise ValueError(f"held_karp_atsp limited to n <= {max_n}, got {n}")
    if n < 2:
        raise ValueError("need at least 2 nodes")
    full = 1 << n
    cost = np.full((full, n), np.inf)
    parent = np.full((full, n), -1, dtype=np.int32)
    cost[1, 0] = 0.0  # path {0} ending at 0
    for mask in range(3, full, 2):  # masks containing node 0
        for j in range(1, n):
            if not (mask >> j) & 1:
                continue
            pm = mask ^ (1 << j)
            cand = cost[pm] + dist[:, j]
            i = int(np.argmin(cand))
            cost[mask, j] = cand[i]
            parent[mask, j] = i
    closing = cost[full - 1] + dist[:, 0]
    last = int(np.argmin(closing))
    best = float(closing[last])
    tour = []
    mask, j = full - 1, last
    while j != -1:
        tour.append(j)
        mask, j = mask ^ (1 << j), int(parent[mask, j])
    tour.reverse()
    return best, tour


def nearest_neighbor(dist: np.ndarray, start: int = 0) -> list[int]:
    """Greedy tour: next = argmin over unvisited, ties to the lowest index."""
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < 2:
        raise ValueError("need at least 2 nodes")
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    tour = [start]
    for _ in range(n - 1):
        row = dist[tour[-1]].copy()
        row[visited] = np.inf
        nxt = int(np.argmin(row))
        visited[nxt] = True
        tour.append(nxt)
    return tour


def or_opt_improve(tour, dist: np.ndarray, max_iters: int = 10_000) -> list[int]:
    """Best-improvement relocation of 1-3 node segments, never reversed.

    Asymmetric-safe: segment orientation is preserved, so arc costs stay
    valid. Cost is non-increasing per accepted move; stops at a local optimum
    or after max_iters accepted moves.
    """
    dist = np.asarray(dist, dtype=np.float64)
    tour = list(tour)
    n = len(tour)
    if n < 4:
        return tour
    for _ in range(max_iters):
        best_delta = -1e-12
        best_move = None
        for seg_len in (1, 2, 3):
            if seg_len > n - 2:
                break
            for i in range(n - seg_len + 1):
                prev = tour[i - 1]
                first, last = tour[i], tour[i + seg_len - 1]
                nxt = tour[(i + seg_len) % n]
                gain = dist[prev, first] + dist[last, nxt] - dist[prev, nxt]
                rest = tour[i + seg_len:] + tour[:i]  # cycle without the segment
                for j in range(len(rest) - 1):
                    a, b = rest[j], rest[j + 1]
                    delta = dist[a, first] + dist[last, b] - dist[a, b] - gain
                    if delta < best_delta:
                        best_delta = delta
                        best_move = (i, seg_len, j)
        if best_move is None:
            break
        i, seg_len, j = best_move
        segment = tour[i:i + seg_len]
        rest = tour[i + seg_len:] + tour[:i]
        tour = rest[:j + 1] + segment + rest[j + 1:]
    return tour


def _path_dp(dist: np.ndarray, customers: list[int]):
    """Cheapest depot-rooted open path cost per (subset, endpoint)."""
    m = len(customers)
    cost = np.full((1 << m, m), np.inf)
    for j, c in enumerate(customers):
        cost[1 << j, j] = dist[0, c]
    for mask in range(1, 1 << m):
        for j in range(m):
            if not (mask >> j) & 1 or not np.isfinite(cost[mask, j]):
                continue
            for j2 in range(m):
                if (mask >> j2) & 1:
                    continue
                nm = mask | (1 << j2)
                cand = cost[mask, j] + dist[customers[j], customers[j2]]
                if cand < cost[nm, j2]:
                    cost[nm, j2] = cand
    return cost


def cvrp_bruteforce(instance, max_customers: int = CVRP_BRUTEFORCE_MAX_CUSTOMERS) -> float:
    """Exact capacitated optimum over ordered partitions into feasible trips.

    Per-subset trip cost is an exact depot-to-depot path DP; the outer DP
    minimizes over submask partitions. Capacity feasibility matches the env's
    tolerance.
    """
    n_cust = instance.n - 1
    if n_cust > max_customers:
        raise ValueError(f"cvrp_bruteforce limited to {max_customers} customers, got {n_cust}")
    if n_cust < 1:
        raise ValueError("need at least 1 customer")
    dist = np.asarray(instance.dist, dtype=np.float64)
    customers = list(range(1, instance.n))
    demands = np.asarray(instance.demands, dtype=np.float64)[customers]
    capacity = float(instance.capacity)
    m = n_cust
    path_cost = _path_dp(dist, customers)

    trip = np.full(1 << m, np.inf)
    for mask in range(1, 1 << m):
        members = [j for j in range(m) if (mask >> j) & 1]
        if demands[members].sum() > capacity + EPS_CAPACITY:
            continue
        ends = path_cost[mask, members] + dist[[customers[j] for j in members], 0]
        trip[mask] = ends.min()

    best = np.full(1 << m, np.inf)
    best[0] = 0.0
    for mask in range(1, 1 << m):
        sub = mask
        while sub:
            if np.isfinite(trip[sub]) and np.isfinite(best[mask ^ sub]):
                cand = trip[sub] + best[mask ^ sub]
                if cand < best[mask]:
                    best[mask] = cand
            sub = (sub - 1) & mask
    return float(best[(1 << m) - 1])
