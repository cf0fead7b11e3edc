"""Exact state machines for ATSP / ACVRP / ACVRPTW over asymmetric matrices.

Cost convention: the objective sums the dist matrix; dur enters only through
time-window feasibility. Returning to the depot refills capacity and, if the
tour continues, resets the clock to 0 (one action sequence, one trip horizon
per depot departure).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .instances import RoutingInstance

# Demands are small decimal ratios (k/50 etc.) that are inexact in binary;
# the tolerance keeps sequential subtraction consistent with subset sums.
EPS_CAPACITY = 1e-9


class InfeasibleActionError(ValueError):
    pass


class IncompleteRouteError(ValueError):
    pass


class DeadEndError(RuntimeError):
    pass


@dataclass
class EnvState:
    instance: RoutingInstance
    current_node: int
    visited: np.ndarray        # (n,) bool
    remaining_capacity: float
    clock: float
    step_count: int
    done: bool
    start_node: int


def reset(instance: RoutingInstance, start_node: int = 0) -> EnvState:
    n = instance.n
    if instance.task == "atsp":
        if not 0 <= start_node < n:
            raise ValueError(f"start_node {start_node} out of range")
    else:
        if start_node != instance.depot_index:
            raise ValueError("capacitated tasks must start at the depot")
    visited = np.zeros(n, dtype=bool)
    visited[start_node] = True
    return EnvState(
        instance=instance,
        current_node=start_node,
        visited=visited,
        remaining_capacity=float(instance.capacity) if instance.capacity is not None else 0.0,
        clock=0.0,
        step_count=0,
        done=False,
        start_node=start_node,
    )


def feasible_mask(state: EnvState) -> np.ndarray:
    """Boolean mask of legal next nodes; never all-false on generated instances."""
    if state.done:
        raise ValueError("feasible_mask called on a done state")
    inst = state.instance
    if inst.task == "atsp":
        return ~state.visited
    mask = ~state.visited
    mask[0] = False
    mask &= inst.demands <= state.remaining_capacity + EPS_CAPACITY
    if inst.task == "acvrptw":
        travel = inst.dur[state.current_node].astype(np.float64)
        arrive = np.maximum(state.clock + travel, inst.tw[:, 0])
        mask &= arrive <= inst.tw[:, 1]
        mask &= arrive + inst.dur[:, 0] <= inst.tw[0, 1]
    mask[0] = state.current_node != 0
    return mask


def step(state: EnvState, action: int) -> EnvState:
    mask = feasible_mask(state)
    if not mask[action]:
        raise InfeasibleActionError(
            f"action {action} infeasible at node {state.current_node}")
    inst = state.instance
    visited = state.visited.copy()
    visited[action] = True
    remaining = state.remaining_capacity
    clock = state.clock
    if inst.task == "atsp":
        done = bool(visited.all())
    else:
        if action == 0:
            remaining = float(inst.capacity)
        else:
            remaining = max(0.0, remaining - float(inst.demands[action]))
        done = bool(visited[1:].all()) and action == 0
        if inst.task == "acvrptw":
            arrive = max(clock + float(inst.dur[state.current_node, action]),
                         float(inst.tw[action, 0]))
            clock = arrive if (action != 0 or done) else 0.0
    return replace(state, current_node=action, visited=visited,
                   remaining_capacity=remaining, clock=clock,
                   step_count=state.step_count + 1, done=done)


def route_cost(instance: RoutingInstance, actions) -> float:
    """Total dist-matrix cost of a complete feasible route.

    ATSP: actions is a permutation of all nodes; the closing arc back to the
    first node is added. ACVRP/ACVRPTW: actions is the depot-interleaved visit
    sequence after the initial depot departure and must end at the depot; the
    sequence is replayed through the state machine to verify feasibility.
    """
    actions = list(int(a) for a in actions)
    n = instance.n
    dist = instance.dist
    if instance.task == "atsp":
        if len(actions) != n or sorted(actions) != list(range(n)):
            raise IncompleteRouteError("ATSP route must be a permutation of all nodes")
        total = 0.0
        for a, b in zip(actions, actions[1:]):
            total += float(dist[a, b])
        total += float(dist[actions[-1], actions[0]])
        return total
    if not actions:
        raise IncompleteRouteError("empty route")
    state = reset(instance, 0)
    total = 0.0
    prev = 0
    for a in actions:
        state = step(state, a)  # raises InfeasibleActionError on bad moves
        total += float(dist[prev, a])
        prev = a
    if not state.done:
        raise IncompleteRouteError("route does not serve all customers and return to depot")
    return total
