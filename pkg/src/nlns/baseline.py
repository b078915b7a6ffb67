"""Non-learned repair policies: sequential insertion with blinks, and uniform random."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SDVRP, Solution, Tour
from .destroy import DestroyedSolution
from .repair_state import RepairState

CRITERIA = ("demand", "far", "random")


@dataclass(frozen=True)
class InsertionConfig:
    """``greediness`` is the chance of taking each position in cost order."""

    greediness: float = 0.9
    criteria: tuple = CRITERIA

    def __post_init__(self):
        if not 0.0 < self.greediness <= 1.0:
            raise ValueError("greediness must lie in (0, 1]")
        unknown = set(self.criteria) - set(CRITERIA)
        if not self.criteria or unknown:
            raise ValueError(f"criteria must be a non-empty subset of {CRITERIA}")


def _partial_routes(destroyed: DestroyedSolution):
    """Rejoin the surviving pieces of each destroyed tour; collect removed visits."""
    routes = [[list(t.customers), list(t.deliveries)] for t in destroyed.tours]
    pieces = {}
    pool = []
    for k, f in enumerate(destroyed.fragments):
        if f.is_singleton:
            pool.append((f.customers[0], f.deliveries[0]))
            continue
        key = f.origin if f.origin >= 0 else ("lone", k)
        pieces.setdefault(key, []).append(f)
    for frags in pieces.values():
        frags = sorted(frags, key=lambda f: f.order)
        cs, qs = [], []
        for f in frags:
            cs.extend(f.customers)
            qs.extend(f.deliveries)
        routes.append([cs, qs])
    return routes, pool


def _sort_pool(pool, criterion, instance, rng):
    if criterion == "demand":
        return sorted(pool, key=lambda v: -v[1])
    if criterion == "far":
        return sorted(pool, key=lambda v: -instance.dist[0, v[0]])
    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


def handcrafted_repair(destroyed: DestroyedSolution, config: InsertionConfig | None,
                       rng: np.random.Generator) -> Solution:
    """Reinsert removed customers one by one at (mostly) cheap positions."""
    return _handcrafted(destroyed, config or InsertionConfig(), rng)[0]


def _handcrafted(destroyed, config, rng):
    inst = destroyed.instance
    d = inst.dist
    Q = inst.capacity
    sdvrp = inst.variant == SDVRP
    routes, pool = _partial_routes(destroyed)
    criterion = config.criteria[int(rng.integers(len(config.criteria)))]
    pool = _sort_pool(pool, criterion, inst, rng)
    loads = [sum(q) for _, q in routes]
    evaluated = 0

    for v, qty in pool:
        cand_cost = [2.0 * d[0, v]]
        cand_where = [(-1, 0)]
        for r, (cs, _) in enumerate(routes):
            if loads[r] + qty > Q:
                continue
            if sdvrp and v in cs:
                # top up the existing visit, no detour needed
                cand_cost.append(0.0)
                cand_where.append((r, -1))
                continue
            prev = np.array([0, *cs])
            nxt = np.array([*cs, 0])
            delta = d[prev, v] + d[v, nxt] - d[prev, nxt]
            cand_cost.extend(delta.tolist())
            cand_where.extend((r, pos) for pos in range(len(cs) + 1))
        evaluated += len(cand_cost)
        order = np.argsort(np.asarray(cand_cost), kind="stable")
        if config.greediness >= 1.0:
            pick = order[0]
        else:
            take = rng.random(len(order)) < config.greediness
            hit = np.flatnonzero(take)
            pick = order[hit[0]] if hit.size else order[0]
        r, pos = cand_where[pick]
        if r < 0:
            routes.append([[v], [qty]])
            loads.append(qty)
        elif pos < 0:
            k = routes[r][0].index(v)
            routes[r][1][k] += qty
            loads[r] += qty
        else:
            routes[r][0].insert(pos, v)
            routes[r][1].insert(pos, qty)
            loads[r] += qty

    tours = [Tour(tuple(cs), tuple(qs)) for cs, qs in routes if cs]
    return Solution(inst, tours), evaluated


def random_repair(destroyed: DestroyedSolution, rng: np.random.Generator) -> Solution:
    """Connect fragment ends uniformly at random among legal actions."""
    state = RepairState(destroyed)
    while not state.done:
        ref = state.select_reference(rng)
        mask = state.mask(ref)
        legal = np.flatnonzero(mask)
        state.apply(ref, int(legal[rng.integers(len(legal))]), mask)
    return state.solution()
