"""Fit the work-clock constants in ``nlns.operators`` to timings on this machine.

Times full search iterations (destroy, repair, cost evaluation) over a grid of
instance sizes and destroy operators, then fits by relative least squares with
non-negative coefficients:
- handcrafted and random repair: fixed + per_customer*n + linear*f + quadratic*f^2
  per solution (the ``WORK_MODEL`` tuples);
- learned repair: fixed*B + per_customer*sum(n) + per_step*steps + per_row*rows
  over the batch, with steps and rows counted by the rollout (``LEARNED_WORK``).
Learned batches are timed both over many instances (batch search) and as copies of
one solution (single-instance search), since padding differs between the two.
Run on an otherwise idle machine:

    python3 scripts/calibrate_work.py
"""

import time
from pathlib import Path

import numpy as np

from nlns.destroy import destroy
from nlns.generate import generate_uniform
from nlns.operators import handcrafted_pairs, load_learned_pairs, random_pairs
from nlns.search import SearchConfig, batch_search

SIZES = (3, 5, 7, 10, 20, 35, 50, 100)
BATCH = 300
REPEATS = 3


def _starts(n):
    capacity = None if n in (20, 50, 100) else max(10, 3 * n // 2)
    insts = generate_uniform(n, BATCH, seed=n, capacity=capacity)
    # solutions near the search's operating point
    return batch_search(insts, handcrafted_pairs(), SearchConfig(time_limit=1e9, max_iterations=20, clock="work"))


def _time_iteration(solutions, spec, repair, rng):
    best = float("inf")
    for _ in range(REPEATS):
        t = time.perf_counter()
        destroyed = [destroy(s, spec, rng) for s in solutions]
        out = repair.repair_batch(destroyed, rng)
        np.array([s.cost for s in out])
        best = min(best, time.perf_counter() - t)
    f = np.mean([len(d.fragments) for d in destroyed])
    counter = getattr(repair, "_last", (None, {}))[1]
    return best, f, counter


def _fit(cols, t):
    names = list(cols)
    while True:
        A = np.stack([cols[k] for k in names], axis=1) / t[:, None]
        coef, *_ = np.linalg.lstsq(A, np.ones_like(t), rcond=None)
        neg = [k for k, c in zip(names, coef) if c < 0]
        if not neg:
            break
        names.remove(neg[0])
    fit = {k: 0.0 for k in cols}
    fit.update(zip(names, coef))
    pred = sum(fit[k] * cols[k] for k in cols)
    return fit, float(np.max(np.abs(pred / t - 1.0)))


def main():
    rng = np.random.default_rng(0)
    kinds = {
        "learned": load_learned_pairs(sorted(Path("models").glob("*.prm"))),
        "handcrafted": handcrafted_pairs(),
        "random": random_pairs(),
    }
    rows = {k: [] for k in kinds}
    for n in SIZES:
        starts = _starts(n)
        for k, pairs in kinds.items():
            batches = [("mixed", starts)]
            if k == "learned":
                batches.append(("single", [starts[0]] * BATCH))
            for mode, sols in batches:
                for pair in pairs:
                    t, f, c = _time_iteration(sols, pair.destroy, pair.repair, rng)
                    rows[k].append((n, f, t, c.get("steps", 0), c.get("rows", 0)))
                    print(f"{k:<12} {mode:<6} n={n:<4} {pair.destroy.label:<8} f={f:6.2f} "
                          f"{1e6 * t / BATCH:8.1f} us/solution", flush=True)
    for k in kinds:
        n, f, t, steps, nrows = (np.array(c, dtype=float) for c in zip(*rows[k]))
        if k == "learned":
            cols = {"fixed": np.full_like(n, BATCH), "per_customer": n * BATCH, "per_step": steps,
                    "per_row": nrows}
        else:
            t = t / BATCH
            cols = {"fixed": np.ones_like(n), "per_customer": n, "linear": f, "quadratic": f * f}
        fit, err = _fit(cols, t)
        print(f"{k}: ({', '.join(f'{fit[c]:.2g}' for c in fit)})  max relative error {err:.2f}")


if __name__ == "__main__":
    main()
