"""Destroy/repair operator pairs used by the searches.

Every repair operator exposes ``repair_batch(destroyed_list, rng)`` and
``work(destroyed_list)``; the latter is a nominal CPU-seconds estimate used by
the deterministic work clock.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline import InsertionConfig, _handcrafted, random_repair
from .destroy import DEFAULT_OPERATORS, DestroySpec
from .paramfile import load_params
from .policy import Params
from .repair_state import RepairState
from .training import rollout_batch

# Nominal costs (seconds) per destroyed-and-repaired solution, fitted with
# scripts/calibrate_work.py on a single CPU core; only the work clock uses them.
# Handcrafted and random repair, with n customers and f fragments:
#   fixed + per_customer*n + linear*f + quadratic*f^2.
# The fixed and per-customer terms cover the destroy step and bookkeeping; the
# random walk re-scores every input at every step.
WORK_MODEL = {
    "handcrafted": (2.4e-5, 4.6e-6, 1.6e-5, 3.8e-7),
    "random": (4.6e-5, 1.3e-6, 2.1e-5, 4.9e-7),
}
# The learned policy is charged per solution, per customer, per state action and
# per padded network input row (the counts come from the rollout itself).
LEARNED_WORK = (1.6e-5, 3.3e-6, 2.5e-5, 8.3e-6)


def _nominal(kind: str, destroyed: list) -> float:
    fixed, per_customer, linear, quadratic = WORK_MODEL[kind]
    total = 0.0
    for d in destroyed:
        f = len(d.fragments)
        total += fixed + per_customer * d.instance.n_customers + linear * f + quadratic * f * f
    return total


class LearnedRepair:
    kind = "learned"

    def __init__(self, params: Params, greedy: bool = False, name: str | None = None):
        self.params = params
        self.greedy = greedy
        self.name = name or params.meta.get("destroy", "learned")

    def repair_batch(self, destroyed: list, rng: np.random.Generator) -> list:
        states = [RepairState(d) for d in destroyed]
        counter = {}
        traces = rollout_batch(states, self.params, rng, greedy=self.greedy, record=False, counter=counter)
        self._last = (id(destroyed), counter)
        return [t.solution for t in traces]

    def work(self, destroyed: list) -> float:
        # charged from the network work actually performed on the last repaired batch
        key, counter = getattr(self, "_last", (None, None))
        if key != id(destroyed):
            raise ValueError("work() must follow repair_batch() on the same list")
        fixed, per_customer, per_step, per_row = LEARNED_WORK
        n = sum(d.instance.n_customers for d in destroyed)
        return (fixed * len(destroyed) + per_customer * n + per_step * counter.get("steps", 0)
                + per_row * counter.get("rows", 0))


class HandcraftedRepair:
    kind = "handcrafted"

    def __init__(self, config: InsertionConfig | None = None):
        self.config = config or InsertionConfig()
        self.name = "insert"

    def repair_batch(self, destroyed: list, rng: np.random.Generator) -> list:
        return [_handcrafted(d, self.config, rng)[0] for d in destroyed]

    def work(self, destroyed: list) -> float:
        return _nominal(self.kind, destroyed)


class RandomRepair:
    kind = "random"
    name = "random"

    def repair_batch(self, destroyed: list, rng: np.random.Generator) -> list:
        return [random_repair(d, rng) for d in destroyed]

    def work(self, destroyed: list) -> float:
        return _nominal(self.kind, destroyed)


@dataclass
class OperatorPair:
    destroy: DestroySpec
    repair: object

    @property
    def name(self) -> str:
        return f"{self.destroy.label}/{self.repair.kind}"


def handcrafted_pairs(specs=DEFAULT_OPERATORS, config: InsertionConfig | None = None) -> list:
    repair = HandcraftedRepair(config)
    return [OperatorPair(s, repair) for s in specs]


def random_pairs(specs=DEFAULT_OPERATORS) -> list:
    repair = RandomRepair()
    return [OperatorPair(s, repair) for s in specs]


def learned_pair(params: Params, greedy: bool = False) -> OperatorPair:
    label = params.meta.get("destroy")
    if not label:
        raise ValueError("parameter file does not name its destroy operator")
    return OperatorPair(DestroySpec.parse(label), LearnedRepair(params, greedy))


def load_learned_pairs(paths, greedy: bool = False) -> list:
    return [learned_pair(load_params(Path(p)), greedy) for p in paths]
