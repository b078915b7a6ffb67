"""Instance generators for the experimental distributions.

``uniform`` instances follow the usual learning-for-routing convention:
customers and depot uniform on the unit square, integer demands in [1, 9].
``xe`` instances live on a 1000x1000 grid and are parameterized by depot
placement, customer positioning, demand distribution and capacity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .core import CVRP, EXACT, NEAREST, Instance, InstanceError

UNIFORM_CAPACITY = {10: 20, 20: 30, 50: 40, 100: 50}
GRID = 1000
CLUSTER_SCALE = 40.0


def sample_uniform(n: int, rng: np.random.Generator, *, variant: str = CVRP,
                   capacity: int | None = None, rounding: str = EXACT, name: str = "") -> Instance:
    if capacity is None:
        if n not in UNIFORM_CAPACITY:
            raise InstanceError(f"no default capacity for {n} customers; pass one explicitly")
        capacity = UNIFORM_CAPACITY[n]
    coords = rng.random((n + 1, 2))
    demands = np.concatenate([[0], rng.integers(1, 10, size=n)])
    return Instance(coords, demands, capacity, variant=variant, rounding=rounding, name=name)


def generate_uniform(n: int, count: int, seed: int, **kwargs) -> list:
    rng = np.random.default_rng(seed)
    return [
        sample_uniform(n, rng, name=f"uniform{n}_s{seed}_{i:05d}", **kwargs)
        for i in range(count)
    ]


@dataclass(frozen=True)
class XESpec:
    """Instance characteristics on the 1000-unit grid.

    depot: R (random), C (centre), E (eccentric, corner); positioning: R, C or
    RC with ``seeds`` cluster seeds; demand: "a-b", "U", "Q" or "SL".
    """

    n: int
    depot: str
    positioning: str
    seeds: int
    demand: str
    capacity: int

    @classmethod
    def parse(cls, n: int, depot: str, positioning: str, demand: str, capacity: int) -> "XESpec":
        m = re.fullmatch(r"(RC|C|R)(?:\((\d+)\))?", positioning.strip().upper())
        if not m:
            raise InstanceError(f"bad customer positioning code {positioning!r}")
        seeds = int(m.group(2) or 0)
        if m.group(1) != "R" and seeds < 1:
            raise InstanceError("clustered positioning needs a seed count, e.g. C(5)")
        return cls(n, depot.strip().upper(), m.group(1), seeds, demand.strip().upper(), capacity)

    def demand_bounds(self) -> tuple:
        if self.demand == "U":
            return 1, 1
        if self.demand == "Q":
            return 1, 100
        if self.demand == "SL":
            return 1, 100
        m = re.fullmatch(r"(\d+)-(\d+)", self.demand)
        if not m:
            raise InstanceError(f"bad demand code {self.demand!r}")
        lo, hi = int(m.group(1)), int(m.group(2))
        if not 1 <= lo <= hi:
            raise InstanceError(f"bad demand range {self.demand!r}")
        return lo, hi

    def check(self, variant: str = CVRP) -> None:
        if self.n < 1:
            raise InstanceError("need at least one customer")
        if self.depot not in ("R", "C", "E"):
            raise InstanceError(f"bad depot code {self.depot!r}")
        if self.positioning not in ("R", "C", "RC"):
            raise InstanceError(f"bad positioning code {self.positioning!r}")
        if self.capacity < 1:
            raise InstanceError("capacity must be positive")
        lo, hi = self.demand_bounds()
        if variant == CVRP and hi > self.capacity:
            raise InstanceError(
                f"demands up to {hi} cannot fit capacity {self.capacity} without splitting"
            )


# Instance groups: customers, depot, positioning, demand, capacity
XE_PRESETS = {
    "XE_1": (100, "R", "RC(7)", "1-100", 206),
    "XE_2": (124, "R", "C(5)", "Q", 188),
    "XE_3": (128, "E", "RC(8)", "1-10", 39),
    "XE_4": (161, "C", "RC(8)", "50-100", 1174),
    "XE_5": (180, "R", "C(6)", "U", 8),
    "XE_6": (185, "R", "R", "50-100", 974),
    "XE_7": (199, "R", "C(8)", "Q", 402),
    "XE_8": (203, "C", "RC(6)", "50-100", 836),
    "XE_9": (213, "C", "C(4)", "1-100", 944),
    "XE_10": (218, "E", "R", "U", 3),
    "XE_11": (236, "E", "R", "U", 18),
    "XE_12": (241, "E", "R", "1-10", 28),
    "XE_13": (269, "C", "RC(5)", "50-100", 585),
    "XE_14": (274, "R", "C(3)", "U", 10),
    "XE_15": (279, "E", "R", "SL", 192),
    "XE_16": (293, "C", "R", "1-100", 285),
    "XE_17": (297, "R", "R", "1-100", 55),
}


def xe_preset(name: str) -> XESpec:
    try:
        return XESpec.parse(*XE_PRESETS[name.upper()])
    except KeyError:
        raise InstanceError(f"unknown instance group {name!r}") from None


def _clustered(rng, count: int, seeds: np.ndarray) -> np.ndarray:
    pick = rng.integers(0, len(seeds), size=count)
    radius = rng.exponential(CLUSTER_SCALE, size=count)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=count)
    pts = seeds[pick] + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return np.clip(np.rint(pts), 0, GRID)


def _demands(spec: XESpec, rng, coords: np.ndarray) -> np.ndarray:
    n = spec.n
    if spec.demand == "U":
        return np.ones(n, dtype=np.int64)
    if spec.demand == "Q":
        # one randomly chosen quadrant gets large demands, the rest small ones
        qx, qy = rng.integers(0, 2, size=2)
        half = GRID / 2
        inside = ((coords[:, 0] >= half) == bool(qx)) & ((coords[:, 1] >= half) == bool(qy))
        return np.where(inside, rng.integers(51, 101, size=n), rng.integers(1, 51, size=n))
    if spec.demand == "SL":
        small_share = rng.uniform(0.7, 0.95)
        small = rng.random(n) < small_share
        return np.where(small, rng.integers(1, 11, size=n), rng.integers(50, 101, size=n))
    lo, hi = spec.demand_bounds()
    return rng.integers(lo, hi + 1, size=n)


def sample_xe(spec: XESpec, rng: np.random.Generator, *, variant: str = CVRP,
              rounding: str = NEAREST, name: str = "") -> Instance:
    spec.check(variant)
    if spec.depot == "C":
        depot = np.array([GRID / 2, GRID / 2])
    elif spec.depot == "E":
        depot = np.array([0.0, 0.0])
    else:
        depot = rng.integers(0, GRID + 1, size=2).astype(np.float64)

    n = spec.n
    if spec.positioning == "R":
        cust = rng.integers(0, GRID + 1, size=(n, 2)).astype(np.float64)
    else:
        seeds = rng.integers(0, GRID + 1, size=(spec.seeds, 2)).astype(np.float64)
        n_clustered = n if spec.positioning == "C" else n // 2
        clustered = _clustered(rng, n_clustered, seeds)
        random_part = rng.integers(0, GRID + 1, size=(n - n_clustered, 2)).astype(np.float64)
        cust = np.concatenate([clustered, random_part])
        cust = cust[rng.permutation(n)]
    demands = np.concatenate([[0], _demands(spec, rng, cust)])
    coords = np.vstack([depot, cust])
    return Instance(coords, demands, spec.capacity, variant=variant, rounding=rounding,
                    name=name, feature_offset=(0.0, 0.0), feature_scale=float(GRID))


def generate_xe_style(spec: XESpec, count: int, seed: int, **kwargs) -> list:
    spec.check(kwargs.get("variant", CVRP))
    rng = np.random.default_rng(seed)
    return [sample_xe(spec, rng, name=f"xe{spec.n}_s{seed}_{i:05d}", **kwargs) for i in range(count)]


def instance_sampler(text: str, *, variant: str = CVRP, rounding: str | None = None):
    """Build an ``rng -> Instance`` sampler from a distribution string.

    Accepted forms: ``uniform:20``, ``uniform:30:q=40`` and ``xe:XE_3``.
    """
    parts = text.strip().split(":")
    kind = parts[0].lower()
    if kind == "uniform" and len(parts) >= 2:
        n = int(parts[1])
        cap = None
        for extra in parts[2:]:
            key, _, val = extra.partition("=")
            if key.lower() == "q":
                cap = int(val)
        r = rounding or EXACT
        return lambda rng: sample_uniform(n, rng, variant=variant, capacity=cap, rounding=r)
    if kind == "xe" and len(parts) == 2:
        spec = xe_preset(parts[1])
        spec.check(variant)
        r = rounding or NEAREST
        return lambda rng: sample_xe(spec, rng, variant=variant, rounding=r)
    raise InstanceError(f"unknown instance distribution {text!r}")
