"""Exact tour computation: dynamic-programming solver plus a brute-force oracle.

``solve_exact`` runs Held-Karp over subsets (O(2^n * n^2), vectorized over
same-popcount mask layers), which returns a provably optimal tour. The
optimal tour LENGTH is therefore identical (within float tolerance) to what
any exact formulation, including a MILP subtour-elimination model, would
produce; only tie-breaking between co-optimal tours can differ, and ours is
fixed: canonical form, then lexicographic minimum.

Routes are closed tours stored open-form as a permutation of 1..n. The
canonical form rotates node 1 to the front and picks the lexicographically
smaller direction of travel, so rotations and reversals of the same cycle
compare equal.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .instances import Instance

SOLVE_EXACT_MAX_N = 25
BRUTE_FORCE_MAX_N = 10
LENGTH_TOLERANCE = 1e-9
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Route:
    """Open-form node ID sequence of a closed tour."""

    order: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.order) < 3:
            raise ValueError("a route needs at least 3 nodes")


@dataclass(frozen=True)
class SolvedInstance:
    instance: Instance
    optimal_route: Route
    optimal_length: float


def validate_route(order: tuple[int, ...] | list[int], n: int) -> None:
    if sorted(order) != list(range(1, n + 1)):
        raise ValueError(f"route {list(order)} is not a permutation of 1..{n}")


def canonicalize(order: tuple[int, ...] | list[int]) -> Route:
    """Canonical representative of a cycle: starts at 1, smaller direction first."""
    order = tuple(order)
    validate_route(order, len(order))
    pivot = order.index(1)
    forward = order[pivot:] + order[:pivot]
    backward = (forward[0],) + tuple(reversed(forward[1:]))
    return Route(min(forward, backward))


def tour_length(route: Route, instance: Instance) -> float:
    """Closed-tour Euclidean length of ``route`` over ``instance``'s points."""
    coords = instance.coords()
    order = route.order
    if sorted(order) != sorted(coords):
        unknown = set(order) - set(coords)
        if unknown:
            raise ValueError(f"route references unknown node IDs {sorted(unknown)}")
        raise ValueError("route does not visit every node exactly once")
    total = 0.0
    for a, b in zip(order, order[1:] + order[:1]):
        ax, ay = coords[a]
        bx, by = coords[b]
        total += math.hypot(ax - bx, ay - by)
    return total


def distance_matrix(instance: Instance) -> np.ndarray:
    """(n, n) float64 Euclidean distances, row/col i for node ID i+1."""
    pts = np.array([[p.x, p.y] for p in sorted(instance.points, key=lambda p: p.id)], dtype=np.float64)
    delta = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((delta * delta).sum(axis=2))


def brute_force_solve(instance: Instance) -> SolvedInstance:
    """Enumerate all (n-1)!/2 undirected tours; the reference oracle.

    Ties on exactly equal length resolve to the lexicographically smallest
    canonical route.
    """
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force is capped at n={BRUTE_FORCE_MAX_N}, got {n}")
    dist = distance_matrix(instance)
    best_length = math.inf
    best_orders: list[tuple[int, ...]] = []
    for perm in itertools.permutations(range(1, n)):
        if perm[0] > perm[-1]:
            continue  # each undirected tour enumerated once
        length = dist[0, perm[0]] + dist[perm[-1], 0]
        for a, b in zip(perm, perm[1:]):
            length += dist[a, b]
        if length < best_length:
            best_length = length
            best_orders = [perm]
        elif length == best_length:
            best_orders.append(perm)
    routes = [canonicalize((1,) + tuple(i + 1 for i in perm)) for perm in best_orders]
    best_route = min(routes, key=lambda r: r.order)
    return SolvedInstance(instance, best_route, tour_length(best_route, instance))


def _held_karp(dist: np.ndarray) -> tuple[float, list[int]]:
    """Held-Karp over masks of nodes 1..n-1, node 0 fixed as the start.

    dp[mask, j] is the cheapest path 0 -> ... -> j visiting exactly the
    nodes in mask. Masks are processed in popcount layers and each layer is
    evaluated as one batched numpy min-reduction; every (new_mask, j) cell
    is written exactly once, so no scatter-min is needed.
    """
    n = dist.shape[0]
    m = n - 1
    sub = dist[1:, 1:]
    from_start = dist[0, 1:]
    full = (1 << m) - 1
    dp = np.full((1 << m, m), np.inf)
    for j in range(m):
        dp[1 << j, j] = from_start[j]
    arange_m = np.arange(m, dtype=np.int64)
    chunk = 16384
    for size in range(1, m):
        masks = np.fromiter(
            (sum(1 << b for b in combo) for combo in itertools.combinations(range(m), size)),
            dtype=np.int64,
        )
        for lo in range(0, len(masks), chunk):
            batch = masks[lo : lo + chunk]
            best_to = (dp[batch][:, :, None] + sub[None, :, :]).min(axis=1)
            in_mask = ((batch[:, None] >> arange_m[None, :]) & 1).astype(bool)
            new_masks = batch[:, None] | (np.int64(1) << arange_m[None, :])
            grow = ~in_mask
            flat = new_masks[grow] * m + np.broadcast_to(arange_m, new_masks.shape)[grow]
            dp.reshape(-1)[flat] = best_to[grow]
    totals = dp[full] + from_start
    last = int(np.argmin(totals))
    best_length = float(totals[last])
    # walk back through dp; smallest predecessor index on ties
    order = [last]
    mask = full
    j = last
    while mask != (1 << j):
        prev_mask = mask ^ (1 << j)
        cand = dp[prev_mask] + sub[:, j]
        cand = np.where(np.isfinite(dp[prev_mask]), cand, np.inf)
        matches = np.flatnonzero(np.abs(cand - dp[mask, j]) <= 1e-9)
        i = int(matches[0]) if len(matches) else int(np.argmin(cand))
        order.append(i)
        mask = prev_mask
        j = i
    order.reverse()
    # sub-indices shift by one: matrix node 0 is the fixed start
    return best_length, [0] + [i + 1 for i in order]


def _indices_to_ids(order: list[int]) -> list[int]:
    return [i + 1 for i in order]


def solve_exact(instance: Instance) -> SolvedInstance:
    """Optimal tour via Held-Karp; valid for 3 <= n <= 25."""
    n = instance.n
    if not 3 <= n <= SOLVE_EXACT_MAX_N:
        raise ValueError(f"solve_exact handles 3 <= n <= {SOLVE_EXACT_MAX_N}, got {n}")
    dist = distance_matrix(instance)
    _, order = _held_karp(dist)
    route = canonicalize(_indices_to_ids(order))
    return SolvedInstance(instance, route, tour_length(route, instance))


def _solution_dict(solved: SolvedInstance) -> dict:
    return {
        "instance_id": solved.instance.instance_id,
        "optimal_route": list(solved.optimal_route.order),
        "optimal_length": solved.optimal_length,
    }


def save_solutions(solved: list[SolvedInstance], path: str | Path) -> None:
    payload = {"schema": SCHEMA_VERSION, "solutions": [_solution_dict(s) for s in solved]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def load_solutions(path: str | Path, instances_by_id: dict[str, Instance]) -> dict[str, SolvedInstance]:
    """Load solutions and re-attach them to their instances.

    Each route is validated against its instance and the stored length is
    cross-checked against a recomputation.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: missing or unsupported schema version")
    out: dict[str, SolvedInstance] = {}
    for entry in data["solutions"]:
        instance = instances_by_id.get(entry["instance_id"])
        if instance is None:
            raise ValueError(f"{path}: solution for unknown instance {entry['instance_id']!r}")
        route = canonicalize(entry["optimal_route"])
        length = tour_length(route, instance)
        if abs(length - entry["optimal_length"]) > 1e-6:
            raise ValueError(
                f"{path}: stored length {entry['optimal_length']} disagrees with "
                f"recomputed {length} for {entry['instance_id']}"
            )
        out[instance.instance_id] = SolvedInstance(instance, route, length)
    return out
