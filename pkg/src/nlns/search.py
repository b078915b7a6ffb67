"""Single-instance search (annealing with reheats over a batch of solutions)
and batch search (improve-only acceptance with EMA operator selection)."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Instance, Solution, greedy_construct, validate
from .destroy import destroy

WALL = "wall"
WORK = "work"


# -- clocks ----------------------------------------------------------------


class WallClock:
    """Counts real time, but only while running (so workers can share a core)."""

    deterministic = False

    def __init__(self):
        self._spent = 0.0
        self._mark = None

    def start(self):
        self._mark = time.perf_counter()

    def stop(self):
        if self._mark is not None:
            self._spent += time.perf_counter() - self._mark
            self._mark = None

    def charge(self, seconds: float) -> None:
        pass

    def elapsed(self) -> float:
        run = time.perf_counter() - self._mark if self._mark is not None else 0.0
        return self._spent + run


class WorkClock:
    """Deterministic clock advanced by the operators' nominal work estimates."""

    deterministic = True

    def __init__(self):
        self._spent = 0.0

    def start(self):
        pass

    def stop(self):
        pass

    def charge(self, seconds: float) -> None:
        self._spent += seconds

    def elapsed(self) -> float:
        return self._spent


def make_clock(kind: str):
    if kind == WALL:
        return WallClock()
    if kind == WORK:
        return WorkClock()
    raise ValueError(f"unknown clock {kind!r}")


# -- configuration ---------------------------------------------------------


@dataclass
class SearchConfig:
    time_limit: float = 60.0
    batch_size: int = 300
    reset_fraction: float = 0.8
    min_temperature: float = 1.0
    start_temperature: float | None = None  # None: interquartile range of the batch
    reheat_temperature: float | None = None  # None: interquartile range of the batch
    cooling: float | None = None  # None: derived from the time budget
    reheats: int | None = None  # None: 5 below 200 customers, else 10
    accept_against: str = "incumbent"  # "incumbent" (as in the pseudocode) or "current"
    workers: int = 1
    parallel: str = "process"  # how workers > 1 run: "process" or "sequential"
    seed: int = 0
    clock: str = WALL
    ema_alpha: float = 0.2
    max_iterations: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.reset_fraction <= 1.0:
            raise ValueError("reset_fraction must lie in [0, 1]")
        if self.min_temperature <= 0:
            raise ValueError("min_temperature must be positive")
        if self.reheat_temperature is not None and self.reheat_temperature < self.min_temperature:
            raise ValueError("reheat temperature must be at least the minimum temperature")
        if self.batch_size < 1 or self.workers < 1:
            raise ValueError("batch_size and workers must be positive")
        if self.accept_against not in ("incumbent", "current"):
            raise ValueError("accept_against must be 'incumbent' or 'current'")

    def reheat_count(self, n_customers: int) -> int:
        if self.reheats is not None:
            return self.reheats
        return 5 if n_customers < 200 else 10


def metropolis_accept(candidate: float, reference: float, T: float, rng: np.random.Generator) -> bool:
    if T <= 0:
        raise ValueError("temperature must be positive")
    if candidate <= reference:
        return True
    return bool(rng.random() < math.exp(-(candidate - reference) / T))


def interquartile_range(costs) -> float:
    q75, q25 = np.percentile(costs, [75, 25])
    return float(q75 - q25)


def _destroy_repair(solutions: list, pair, rng, clock) -> list:
    destroyed = [destroy(s, pair.destroy, rng) for s in solutions]
    out = pair.repair.repair_batch(destroyed, rng)
    clock.charge(pair.repair.work(destroyed))
    return out


# -- single instance search -------------------------------------------------


@dataclass
class SearchWorker:
    """State of one instantiation of the annealing loop."""

    instance: Instance
    pairs: list
    config: SearchConfig
    rng: np.random.Generator
    current: Solution
    incumbent: Solution
    worker_id: int = 0
    loops_done: int = 0
    reheats_done: int = 0
    finished: bool = False
    iterations: int = 0
    iter_time: float = 0.0  # summed clock time of all iterations
    clock: object = None
    log: list = field(default_factory=list)

    @property
    def total_loops(self) -> int:
        return self.config.reheat_count(self.instance.n_customers) + 1

    def _initial_temperature(self, costs) -> float:
        cfg = self.config
        fixed = cfg.start_temperature if self.loops_done == 0 else cfg.reheat_temperature
        if fixed is not None:
            return max(fixed, cfg.min_temperature * (1 + 1e-9))
        iqr = interquartile_range(costs)
        if iqr <= 0:
            iqr = 0.01 * self.current.cost
        return max(iqr, cfg.min_temperature + 1.0)

    def _cooling(self, T0: float) -> float:
        cfg = self.config
        if cfg.cooling is not None:
            return cfg.cooling
        remaining_loops = self.total_loops - self.loops_done
        remaining = cfg.time_limit - self.clock.elapsed()
        per_iter = self.iter_time / max(1, self.iterations)
        budget = max(1, int(remaining / (remaining_loops * per_iter))) if per_iter > 0 else 1
        return (cfg.min_temperature / T0) ** (1.0 / budget)

    def run_inner_loop(self, callback=None) -> None:
        """Execute one inner loop (from a fresh batch of incumbent copies)."""
        cfg = self.config
        clock = self.clock
        clock.start()
        try:
            self._inner(cfg, clock, callback)
        finally:
            clock.stop()

    def _out_of_budget(self) -> bool:
        cfg = self.config
        if self.clock.elapsed() >= cfg.time_limit:
            return True
        return cfg.max_iterations is not None and self.iterations >= cfg.max_iterations

    def _inner(self, cfg, clock, callback):
        if self.finished or self._out_of_budget() or self.loops_done >= self.total_loops:
            self.finished = True
            return
        size = cfg.batch_size
        n_reset = math.ceil(cfg.reset_fraction * size)
        batch = [self.incumbent] * size
        T = None
        delta = None
        k = 0
        while True:
            if self._out_of_budget():
                self.finished = True
                break
            t0 = clock.elapsed()
            pair_idx = int(self.rng.integers(len(self.pairs)))
            batch = _destroy_repair(batch, self.pairs[pair_idx], self.rng, clock)
            costs = np.array([s.cost for s in batch])
            self.iterations += 1
            self.iter_time += clock.elapsed() - t0
            if T is None:
                T = self._initial_temperature(costs)
                if self.loops_done > 0:
                    self.reheats_done += 1
                delta = self._cooling(T)
            b = int(np.argmin(costs))
            best = batch[b]
            reference = self.incumbent if cfg.accept_against == "incumbent" else self.current
            accepted = metropolis_accept(best.cost, reference.cost, T, self.rng)
            if accepted:
                self.current = best
            if best.cost < self.incumbent.cost:
                self.incumbent = best
            batch[:n_reset] = [self.current] * n_reset
            record = {
                "worker": self.worker_id,
                "loop": self.loops_done,
                "iteration": k,
                "temperature": T,
                "batch_best": best.cost,
                "current": self.current.cost,
                "incumbent": self.incumbent.cost,
                "pair": pair_idx,
                "accepted": accepted,
                "reset": n_reset,
                "time": clock.elapsed(),
            }
            self.log.append(record)
            if callback is not None:
                callback(self, record, batch)
            k += 1
            T *= delta
            if T <= cfg.min_temperature * (1 + 1e-12):
                break
        self.loops_done += 1
        if self.loops_done >= self.total_loops:
            self.finished = True

    def adopt(self, solution: Solution) -> None:
        if solution.cost < self.incumbent.cost:
            self.incumbent = solution


def _make_worker(instance, pairs, config, worker_id, start):
    seq = np.random.SeedSequence(config.seed).spawn(worker_id + 1)[worker_id]
    return SearchWorker(
        instance, pairs, config, np.random.default_rng(seq), start, start,
        worker_id=worker_id, clock=make_clock(config.clock),
    )


def _run_loop(worker: SearchWorker) -> SearchWorker:
    worker.run_inner_loop()
    return worker


def parallel_single_search(instance: Instance, pairs: list, config: SearchConfig,
                           log: list | None = None, callback=None,
                           start: Solution | None = None) -> Solution:
    """Several annealing loops that share their incumbent after every inner loop.

    Workers advance in rounds (one inner loop each) and then exchange the best
    incumbent, which keeps results reproducible for a fixed worker count.
    ``time_limit`` is the compute budget of each worker.
    """
    if not pairs:
        raise ValueError("need at least one operator pair")
    start = start or greedy_construct(instance)
    workers = [_make_worker(instance, pairs, config, w, start) for w in range(config.workers)]
    pool = None
    if config.workers > 1 and config.parallel == "process" and callback is None:
        pool = ProcessPoolExecutor(max_workers=config.workers)
    try:
        while not all(w.finished for w in workers):
            if pool is not None:
                workers = list(pool.map(_run_loop, workers))
            else:
                for w in workers:
                    w.run_inner_loop(callback)
            best = min(workers, key=lambda w: w.incumbent.cost).incumbent
            if validate(instance, best).ok:
                for w in workers:
                    w.adopt(best)
    finally:
        if pool is not None:
            pool.shutdown()
    if log is not None:
        for w in workers:
            log.extend(w.log)
    return min((w.incumbent for w in workers), key=lambda s: s.cost)


def single_instance_search(instance: Instance, pairs: list, config: SearchConfig,
                           log: list | None = None, callback=None,
                           start: Solution | None = None) -> Solution:
    return parallel_single_search(instance, pairs, replace(config, workers=1), log, callback, start)


# -- batch search ------------------------------------------------------------


class EmaTracker:
    """Exponential moving average of each operator pair's mean-cost improvement."""

    def __init__(self, n_pairs: int, alpha: float = 0.2):
        self.values = np.zeros(n_pairs)
        self.tried = np.zeros(n_pairs, dtype=bool)
        self.alpha = alpha

    def select(self) -> int:
        untried = np.flatnonzero(~self.tried)
        if untried.size:
            return int(untried[0])
        return int(np.argmax(self.values))

    def update(self, idx: int, improvement: float) -> None:
        if not self.tried[idx]:
            self.values[idx] = improvement
            self.tried[idx] = True
        else:
            self.values[idx] = (1 - self.alpha) * self.values[idx] + self.alpha * improvement


def ema_select(tracker: EmaTracker) -> int:
    return tracker.select()


def _batch_chunk(args):
    instances, pairs, config, seq, log_enabled = args
    rng = np.random.default_rng(seq)
    clock = make_clock(config.clock)
    clock.start()
    solutions = [greedy_construct(i) for i in instances]
    tracker = EmaTracker(len(pairs), config.ema_alpha)
    log = []
    it = 0
    while clock.elapsed() < config.time_limit:
        if config.max_iterations is not None and it >= config.max_iterations:
            break
        k = tracker.select()
        pair = pairs[k]
        before = float(np.mean([s.cost for s in solutions]))
        candidates = _destroy_repair(solutions, pair, rng, clock)
        solutions = [c if c.cost < s.cost else s for s, c in zip(solutions, candidates)]
        after = float(np.mean([s.cost for s in solutions]))
        tracker.update(k, before - after)
        it += 1
        if log_enabled:
            log.append({"iteration": it, "pair": k, "mean_cost": after,
                        "improvement": before - after, "time": clock.elapsed()})
    clock.stop()
    return solutions, log


def batch_search(instances: list, pairs: list, config: SearchConfig, log: list | None = None) -> list:
    """Improve a set of instances together; one operator pair per iteration.

    With ``workers > 1`` the instances are split into that many chunks that
    are searched independently, each with its own budget and EMA tracker.
    """
    if not instances:
        raise ValueError("need at least one instance")
    if not pairs:
        raise ValueError("need at least one operator pair")
    n_chunks = min(config.workers, len(instances))
    bounds = np.linspace(0, len(instances), n_chunks + 1).astype(int)
    seqs = np.random.SeedSequence(config.seed).spawn(n_chunks)
    jobs = [
        (instances[bounds[c]:bounds[c + 1]], pairs, config, seqs[c], log is not None)
        for c in range(n_chunks)
    ]
    if n_chunks > 1 and config.parallel == "process":
        with ProcessPoolExecutor(max_workers=n_chunks) as pool:
            results = list(pool.map(_batch_chunk, jobs))
    else:
        results = [_batch_chunk(j) for j in jobs]
    out = []
    for c, (sols, chunk_log) in enumerate(results):
        out.extend(sols)
        if log is not None:
            for rec in chunk_log:
                rec["chunk"] = c
            log.extend(chunk_log)
    return out
