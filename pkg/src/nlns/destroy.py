"""Point-based and tour-based destroy procedures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Instance, Solution, Tour

POINT = "point"
TOUR = "tour"


@dataclass
class Fragment:
    """An incomplete tour.

    The depot may be attached to at most one end.  ``origin`` and ``order``
    remember which tour the piece came from and where it sat in that tour.
    """

    customers: list
    deliveries: list
    head_depot: bool = False
    tail_depot: bool = False
    origin: int = -1
    order: int = 0

    @property
    def demand(self) -> int:
        return int(sum(self.deliveries))

    @property
    def contains_depot(self) -> bool:
        return self.head_depot or self.tail_depot

    @property
    def is_singleton(self) -> bool:
        return len(self.customers) == 1 and not self.contains_depot

    def reverse(self) -> None:
        self.customers.reverse()
        self.deliveries.reverse()
        self.head_depot, self.tail_depot = self.tail_depot, self.head_depot

    def open_ends(self) -> tuple:
        """Ends that are not attached to the depot ("head"/"tail")."""
        if self.is_singleton:
            return ("tail",)
        ends = []
        if not self.head_depot:
            ends.append("head")
        if not self.tail_depot:
            ends.append("tail")
        return tuple(ends)

    def end_node(self, end: str) -> int:
        return self.customers[0] if end == "head" else self.customers[-1]

    def cost(self, instance: Instance) -> float:
        d = instance.dist
        c = self.customers
        total = float(sum(d[a, b] for a, b in zip(c, c[1:])))
        if self.head_depot:
            total += d[0, c[0]]
        if self.tail_depot:
            total += d[c[-1], 0]
        return total

    def copy(self) -> "Fragment":
        return Fragment(
            list(self.customers), list(self.deliveries),
            self.head_depot, self.tail_depot, self.origin, self.order,
        )


@dataclass
class DestroyedSolution:
    instance: Instance
    tours: tuple
    fragments: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        """Travel cost of everything that survived the destroy step."""
        from .core import tour_cost

        inst = self.instance
        return sum(tour_cost(inst, t.customers) for t in self.tours) + sum(
            f.cost(inst) for f in self.fragments
        )

    def removed_customers(self) -> set:
        return {f.customers[0] for f in self.fragments if f.is_singleton}


@dataclass(frozen=True)
class DestroySpec:
    """A destroy operator: procedure plus degree of destruction."""

    procedure: str
    degree: float

    def __post_init__(self):
        if self.procedure not in (POINT, TOUR):
            raise ValueError(f"unknown destroy procedure {self.procedure!r}")
        if not 0.0 < self.degree <= 1.0:
            raise ValueError("degree of destruction must lie in (0, 1]")

    def n_remove(self, n_customers: int) -> int:
        return min(n_customers, max(1, int(np.floor(self.degree * n_customers + 0.5))))

    @property
    def label(self) -> str:
        return f"{self.procedure}{round(self.degree * 100)}"

    @classmethod
    def parse(cls, text: str) -> "DestroySpec":
        """Parse ``point:0.2`` / ``tour:0.1`` (or ``point20``)."""
        text = text.strip().lower()
        if ":" in text:
            proc, deg = text.split(":", 1)
            return cls(proc, float(deg))
        for proc in (POINT, TOUR):
            if text.startswith(proc):
                return cls(proc, float(text[len(proc):]) / 100.0)
        raise ValueError(f"cannot parse destroy operator {text!r}")


DEFAULT_OPERATORS = (
    DestroySpec(POINT, 0.1),
    DestroySpec(POINT, 0.2),
    DestroySpec(TOUR, 0.1),
    DestroySpec(TOUR, 0.2),
)


def random_point(instance: Instance, rng: np.random.Generator) -> np.ndarray:
    lo = instance.coords.min(axis=0)
    hi = instance.coords.max(axis=0)
    return lo + rng.random(2) * (hi - lo)


def _check(solution: Solution) -> None:
    if not any(t.customers for t in solution.tours):
        raise ValueError("cannot destroy a solution without customers")


def _singletons(tour: Tour, origin: int) -> list:
    return [
        Fragment([c], [q], origin=origin, order=k)
        for k, (c, q) in enumerate(zip(tour.customers, tour.deliveries))
    ]


def split_tour(tour: Tour, removed, origin: int = -1) -> list:
    """Cut ``tour`` at every customer in ``removed``.

    Returns the surviving pieces and one singleton per removed visit, in
    tour order; empty pieces are dropped.
    """
    pieces = []
    cur_c, cur_q = [], []
    head = True
    order = 0

    def flush(tail_depot: bool):
        nonlocal order
        if cur_c:
            pieces.append(Fragment(list(cur_c), list(cur_q), head, tail_depot, origin, order))
            order += 1

    for c, q in zip(tour.customers, tour.deliveries):
        if c in removed:
            flush(False)
            cur_c.clear()
            cur_q.clear()
            head = False
            pieces.append(Fragment([c], [q], origin=origin, order=order))
            order += 1
        else:
            cur_c.append(c)
            cur_q.append(q)
    flush(True)
    return pieces


def point_destroy(solution: Solution, spec: DestroySpec, rng: np.random.Generator) -> DestroyedSolution:
    """Remove the customers closest to a random point of the bounding box."""
    _check(solution)
    inst = solution.instance
    k = spec.n_remove(inst.n_customers)
    p = random_point(inst, rng)
    dist = np.hypot(*(inst.coords[1:] - p).T)
    chosen = set((np.argsort(dist, kind="stable")[:k] + 1).tolist())

    tours, fragments = [], []
    for t_idx, tour in enumerate(solution.tours):
        if chosen.isdisjoint(tour.customers):
            tours.append(tour)
        else:
            fragments.extend(split_tour(tour, chosen, t_idx))
    return DestroyedSolution(inst, tuple(tours), fragments)


def tour_destroy(solution: Solution, spec: DestroySpec, rng: np.random.Generator) -> DestroyedSolution:
    """Remove whole tours nearest to a random point until enough customers are gone."""
    _check(solution)
    inst = solution.instance
    k = spec.n_remove(inst.n_customers)
    p = random_point(inst, rng)
    tour_dist = [
        float(np.min(np.hypot(*(inst.coords[list(t.customers)] - p).T))) if t.customers else np.inf
        for t in solution.tours
    ]
    ranking = np.argsort(tour_dist, kind="stable")

    drop = set()
    removed = set()
    for t_idx in ranking:
        if len(removed) >= k:
            break
        drop.add(int(t_idx))
        removed.update(solution.tours[t_idx].customers)

    tours, fragments = [], []
    for t_idx, tour in enumerate(solution.tours):
        if t_idx in drop:
            fragments.extend(_singletons(tour, t_idx))
        else:
            tours.append(tour)
    return DestroyedSolution(inst, tuple(tours), fragments)


def destroy(solution: Solution, spec: DestroySpec, rng: np.random.Generator) -> DestroyedSolution:
    if spec.procedure == POINT:
        return point_destroy(solution, spec, rng)
    return tour_destroy(solution, spec, rng)
