"""Problem and solution representation for the CVRP and the SDVRP.

Node 0 is always the depot.  Tours store only their customer sequence; the
depot at both ends is implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CVRP = "cvrp"
SDVRP = "sdvrp"
EXACT = "exact"
NEAREST = "nearest"

VARIANTS = (CVRP, SDVRP)
ROUNDINGS = (EXACT, NEAREST)


class InstanceError(ValueError):
    """Raised when instance data violates the problem invariants."""


def nint(x):
    """Round half up, the usual convention for integer routing distances."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


class Instance:
    """A routing instance: coordinates, integer demands and a vehicle capacity.

    ``feature_offset`` and ``feature_scale`` map raw coordinates to the unit
    square for the neural repair model; they never influence costs.
    """

    def __init__(
        self,
        coords,
        demands,
        capacity: int,
        *,
        rounding: str = EXACT,
        variant: str = CVRP,
        name: str = "",
        feature_offset=(0.0, 0.0),
        feature_scale: float = 1.0,
    ):
        coords = np.array(coords, dtype=np.float64)
        demands = np.array(demands, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise InstanceError("coordinates must be an (n+1, 2) array")
        if demands.shape != (coords.shape[0],):
            raise InstanceError(
                f"expected {coords.shape[0]} demands, got {demands.shape[0]}"
            )
        if coords.shape[0] < 2:
            raise InstanceError("an instance needs at least one customer")
        if rounding not in ROUNDINGS:
            raise InstanceError(f"unknown rounding mode {rounding!r}")
        if variant not in VARIANTS:
            raise InstanceError(f"unknown variant {variant!r}")
        capacity = int(capacity)
        if capacity <= 0:
            raise InstanceError("capacity must be positive")
        if demands[0] != 0:
            raise InstanceError("depot demand must be 0")
        if np.any(demands[1:] < 1):
            bad = int(np.flatnonzero(demands[1:] < 1)[0]) + 1
            raise InstanceError(f"customer {bad} has demand {demands[bad]} < 1")
        if variant == CVRP and np.any(demands > capacity):
            bad = int(np.flatnonzero(demands > capacity)[0])
            raise InstanceError(
                f"customer {bad} demand {demands[bad]} exceeds capacity {capacity}"
            )
        if feature_scale <= 0:
            raise InstanceError("feature_scale must be positive")

        self.coords = coords
        self.demands = demands
        self.capacity = capacity
        self.rounding = rounding
        self.variant = variant
        self.name = name
        self.feature_offset = np.array(feature_offset, dtype=np.float64)
        self.feature_scale = float(feature_scale)
        self.coords.setflags(write=False)
        self.demands.setflags(write=False)

        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        if rounding == NEAREST:
            dist = nint(dist)
        dist.setflags(write=False)
        self.dist = dist

    @property
    def n_customers(self) -> int:
        return self.coords.shape[0] - 1

    @property
    def customers(self) -> range:
        return range(1, self.coords.shape[0])

    def features(self) -> np.ndarray:
        """Coordinates mapped into the model's unit square."""
        return (self.coords - self.feature_offset) / self.feature_scale

    def with_rounding(self, rounding: str) -> "Instance":
        return Instance(
            self.coords,
            self.demands,
            self.capacity,
            rounding=rounding,
            variant=self.variant,
            name=self.name,
            feature_offset=self.feature_offset,
            feature_scale=self.feature_scale,
        )

    def with_variant(self, variant: str) -> "Instance":
        return Instance(
            self.coords,
            self.demands,
            self.capacity,
            rounding=self.rounding,
            variant=variant,
            name=self.name,
            feature_offset=self.feature_offset,
            feature_scale=self.feature_scale,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            np.array_equal(self.coords, other.coords)
            and np.array_equal(self.demands, other.demands)
            and self.capacity == other.capacity
            and self.rounding == other.rounding
            and self.variant == other.variant
            and self.name == other.name
            and np.array_equal(self.feature_offset, other.feature_offset)
            and self.feature_scale == other.feature_scale
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"Instance(name={self.name!r}, n={self.n_customers}, Q={self.capacity}, "
            f"variant={self.variant}, rounding={self.rounding})"
        )


def travel_cost(instance: Instance, i: int, j: int) -> float:
    return float(instance.dist[i, j])


def tour_cost(instance: Instance, customers: Sequence[int]) -> float:
    if len(customers) == 0:
        return 0.0
    d = instance.dist
    path = [0, *customers, 0]
    return float(sum(d[a, b] for a, b in zip(path, path[1:])))


@dataclass(frozen=True)
class Tour:
    """A depot-to-depot route.  ``deliveries[k]`` is what ``customers[k]`` receives."""

    customers: tuple
    deliveries: tuple

    @property
    def load(self) -> int:
        return int(sum(self.deliveries))

    @property
    def path(self) -> tuple:
        return (0, *self.customers, 0)

    def reversed(self) -> "Tour":
        return Tour(self.customers[::-1], self.deliveries[::-1])

    @classmethod
    def full(cls, instance: Instance, customers: Iterable[int]) -> "Tour":
        customers = tuple(int(c) for c in customers)
        return cls(customers, tuple(int(instance.demands[c]) for c in customers))


@dataclass(frozen=True, eq=False)
class Solution:
    """An immutable set of tours with its cached total cost."""

    instance: Instance
    tours: tuple
    cost: float = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "tours", tuple(self.tours))
        if self.cost is None:
            object.__setattr__(
                self, "cost", sum(tour_cost(self.instance, t.customers) for t in self.tours)
            )

    def routes(self) -> list[list[int]]:
        return [list(t.customers) for t in self.tours]

    def same_tours(self, other: "Solution") -> bool:
        return self.tours == other.tours

    def __repr__(self) -> str:
        return f"Solution(cost={self.cost:.4f}, tours={len(self.tours)})"


def solution_cost(solution: Solution) -> float:
    """Recompute the total travel cost from scratch."""
    return sum(tour_cost(solution.instance, t.customers) for t in solution.tours)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    tour: int | None = None
    customer: int | None = None


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(
            f"{v.kind}: {v.message}" for v in self.violations
        )


def validate(instance: Instance, solution: Solution) -> ValidationReport:
    """Check every solution invariant for the instance's variant."""
    report = ValidationReport()
    add = report.violations.append
    n = instance.n_customers
    delivered = np.zeros(n + 1, dtype=np.int64)
    visits = np.zeros(n + 1, dtype=np.int64)

    for k, tour in enumerate(solution.tours):
        if len(tour.customers) != len(tour.deliveries):
            add(Violation("structure", f"tour {k} has mismatched deliveries", tour=k))
            continue
        if not tour.customers:
            add(Violation("structure", f"tour {k} is empty", tour=k))
            continue
        seen = set()
        structural = False
        for c, q in zip(tour.customers, tour.deliveries):
            if not 1 <= c <= n:
                add(Violation("structure", f"tour {k} visits invalid node {c}", tour=k, customer=c))
                structural = True
                continue
            if c in seen:
                add(Violation("duplicate", f"customer {c} appears twice in tour {k}", tour=k, customer=c))
            seen.add(c)
            if q <= 0:
                add(Violation("delivery", f"customer {c} receives {q} in tour {k}", tour=k, customer=c))
            if instance.variant == CVRP and q != instance.demands[c]:
                add(Violation(
                    "delivery",
                    f"customer {c} receives {q} of demand {instance.demands[c]} in tour {k}",
                    tour=k, customer=c,
                ))
            delivered[c] += q
            visits[c] += 1
        if tour.load > instance.capacity:
            add(Violation(
                "capacity", f"tour {k} carries {tour.load} > capacity {instance.capacity}", tour=k
            ))
        if structural:
            return report

    for c in instance.customers:
        if visits[c] == 0:
            add(Violation("coverage", f"customer {c} is not visited", customer=c))
        elif instance.variant == CVRP and visits[c] > 1:
            add(Violation("coverage", f"customer {c} is visited {visits[c]} times", customer=c))
        elif delivered[c] != instance.demands[c]:
            add(Violation(
                "demand",
                f"customer {c} receives {delivered[c]} of demand {instance.demands[c]}",
                customer=c,
            ))

    recomputed = solution_cost(solution)
    if solution.cost is None or abs(recomputed - solution.cost) > 1e-9 * max(1.0, abs(recomputed)):
        add(Violation("cost", f"cached cost {solution.cost} != recomputed {recomputed}"))
    return report


def greedy_construct(instance: Instance) -> Solution:
    """Nearest-neighbour construction.

    The current route is extended with the closest unserved customer (ties go
    to the lowest index).  When that customer does not fit into the remaining
    load the vehicle returns to the depot and a new route starts there.  A
    customer is only split when its demand exceeds a whole vehicle (SDVRP).
    """
    d = instance.dist
    Q = instance.capacity
    remaining = instance.demands.astype(np.int64).copy()
    unserved = np.ones(instance.n_customers + 1, dtype=bool)
    unserved[0] = False
    tours = []
    customers: list[int] = []
    deliveries: list[int] = []
    load = 0
    current = 0
    while unserved.any():
        cand = np.flatnonzero(unserved)
        nxt = int(cand[np.argmin(d[current, cand])])
        need = int(remaining[nxt])
        if need <= Q - load:
            customers.append(nxt)
            deliveries.append(need)
            load += need
            remaining[nxt] = 0
            unserved[nxt] = False
            current = nxt
        elif load == 0:
            # only reachable in SDVRP with demand > Q: deliver a full load
            customers.append(nxt)
            deliveries.append(Q)
            load = Q
            remaining[nxt] -= Q
            current = nxt
        else:
            tours.append(Tour(tuple(customers), tuple(deliveries)))
            customers, deliveries, load, current = [], [], 0, 0
    if customers:
        tours.append(Tour(tuple(customers), tuple(deliveries)))
    return Solution(instance, tours)
