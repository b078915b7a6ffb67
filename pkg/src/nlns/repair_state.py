"""Sequential repair of a destroyed solution as a step-by-step environment.

At every step the open end of one fragment (the *reference*) is connected
either to the depot or to an open end of another fragment.  Input 0 is always
the depot; the other inputs are the open fragment ends in fragment order.
"""

from __future__ import annotations

import numpy as np

from .core import CVRP, SDVRP, Solution, Tour
from .destroy import DestroyedSolution, Fragment

DEPOT_STATE = 0
SINGLETON_STATE = 1
OPEN_STATE = 2
DEPOT_FRAGMENT_STATE = 3


class RepairError(RuntimeError):
    """Raised when an action violates the mask (a caller bug)."""


def _index_of(items: list, obj) -> int:
    for i, x in enumerate(items):
        if x is obj:
            return i
    raise ValueError("object not in list")


class RepairState:
    """Mutable repair environment for one destroyed solution."""

    def __init__(self, destroyed: DestroyedSolution):
        self.instance = destroyed.instance
        self.variant = self.instance.variant
        self.tours = list(destroyed.tours)
        self.fragments = [f.copy() for f in destroyed.fragments]
        self.initial_cost = destroyed.cost
        self.t = 0
        self._ref = None  # (Fragment, end) carried over from the last action
        self._xy = self.instance.features()
        self._inputs = None

    # -- inputs ---------------------------------------------------------

    @property
    def done(self) -> bool:
        return not self.fragments

    def inputs(self) -> list:
        """Input list: ``None`` for the depot, then ``(fragment, end)`` pairs."""
        if self._inputs is None:
            inputs = [None]
            for f in self.fragments:
                for end in f.open_ends():
                    inputs.append((f, end))
            self._inputs = inputs
        return self._inputs

    def features(self, normalized: bool = True) -> np.ndarray:
        """``(|X_t|, 4)`` array of (x, y, demand, state) rows."""
        inst = self.instance
        inputs = self.inputs()
        nodes = np.empty(len(inputs), dtype=np.int64)
        dem = np.empty(len(inputs), dtype=np.float64)
        st = np.empty(len(inputs), dtype=np.float64)
        nodes[0], dem[0], st[0] = 0, -1.0, DEPOT_STATE
        for i, (f, end) in enumerate(inputs[1:], start=1):
            nodes[i] = f.end_node(end)
            dem[i] = f.demand
            if f.is_singleton:
                st[i] = SINGLETON_STATE
            elif f.contains_depot:
                st[i] = DEPOT_FRAGMENT_STATE
            else:
                st[i] = OPEN_STATE
        coords = self._xy if normalized else inst.coords
        if normalized:
            dem[1:] = dem[1:] / inst.capacity
        out = np.empty((len(inputs), 4))
        out[:, :2] = coords[nodes]
        out[:, 2] = dem
        out[:, 3] = st
        return out

    # -- reference ------------------------------------------------------

    def select_reference(self, rng: np.random.Generator) -> int:
        """Carry the reference over from the last action, or draw one uniformly."""
        inputs = self.inputs()
        if len(inputs) < 2:
            raise RepairError("no fragment end to repair")
        if self._ref is not None:
            frag, end = self._ref
            for i in range(1, len(inputs)):
                if inputs[i][0] is frag and inputs[i][1] == end:
                    return i
        return int(rng.integers(1, len(inputs)))

    # -- mask -----------------------------------------------------------

    def mask(self, ref: int) -> np.ndarray:
        inputs = self.inputs()
        F = inputs[ref][0]
        Q = self.instance.capacity
        dF = F.demand
        out = np.zeros(len(inputs), dtype=bool)
        out[0] = True
        split_ok = self.variant == SDVRP and dF < Q
        fset = set(F.customers) if self.variant == SDVRP else None
        for j in range(1, len(inputs)):
            G = inputs[j][0]
            if G is F:
                continue
            if fset is not None and not fset.isdisjoint(G.customers):
                continue
            if dF + G.demand <= Q:
                out[j] = True
            elif split_ok and G.is_singleton:
                out[j] = True
        return out

    # -- transitions ----------------------------------------------------

    def _complete(self, F: Fragment) -> None:
        self.fragments.pop(_index_of(self.fragments, F))
        self.tours.append(Tour(tuple(F.customers), tuple(F.deliveries)))
        self._ref = None

    def _close_at_depot(self, F: Fragment) -> None:
        # F's open reference end is its tail
        F.tail_depot = True
        if F.head_depot:
            self._complete(F)
        else:
            self._ref = (F, "head")

    def apply(self, ref: int, target: int, mask: np.ndarray | None = None) -> None:
        inputs = self.inputs()
        if mask is None:
            mask = self.mask(ref)
        if not 0 <= target < len(inputs) or not mask[target]:
            raise RepairError(f"action {target} is masked")
        F, end_f = inputs[ref]
        if end_f == "head" and not F.is_singleton:
            F.reverse()
        self._inputs = None
        self.t += 1

        if target == 0:
            self._close_at_depot(F)
            return

        G, end_g = inputs[target]
        Q = self.instance.capacity
        if self.variant == SDVRP and F.demand + G.demand > Q:
            # split: fill the vehicle, close it, keep the remainder as a singleton
            q = Q - F.demand
            F.customers.append(G.customers[0])
            F.deliveries.append(q)
            G.deliveries[0] -= q
            self._close_at_depot(F)
            return

        if end_g == "tail" and not G.is_singleton:
            G.reverse()
        F.customers.extend(G.customers)
        F.deliveries.extend(G.deliveries)
        F.tail_depot = G.tail_depot
        self.fragments.pop(_index_of(self.fragments, G))
        if F.head_depot and F.tail_depot:
            self._complete(F)
        elif F.tail_depot:
            self._ref = (F, "head")
        else:
            self._ref = (F, "tail")

    # -- result ---------------------------------------------------------

    def solution(self) -> Solution:
        if not self.done:
            raise RepairError("repair is not finished")
        return Solution(self.instance, self.tours)


def encode_inputs(destroyed: DestroyedSolution) -> RepairState:
    if not destroyed.fragments:
        raise ValueError("nothing to repair: the solution has no fragments")
    return RepairState(destroyed)


def select_reference(state: RepairState, rng: np.random.Generator) -> int:
    return state.select_reference(rng)


def action_mask(state: RepairState, ref: int) -> np.ndarray:
    return state.mask(ref)


def apply_action(state: RepairState, ref: int, target: int) -> RepairState:
    state.apply(ref, target)
    return state


__all__ = [
    "CVRP",
    "SDVRP",
    "RepairError",
    "RepairState",
    "encode_inputs",
    "select_reference",
    "action_mask",
    "apply_action",
]
