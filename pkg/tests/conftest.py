import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nlns.core import CVRP, NEAREST, SDVRP, Instance, greedy_construct  # noqa: E402
from nlns.generate import generate_uniform  # noqa: E402

DATA = Path(__file__).parent / "data"
MODELS = Path(__file__).resolve().parents[1] / "models"
DESK_OPERATORS = ("point:0.1", "point:0.2", "tour:0.1", "tour:0.2")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cvrp20():
    return generate_uniform(20, 30, seed=101)


@pytest.fixture(scope="session")
def cvrp50():
    return generate_uniform(50, 10, seed=102)


@pytest.fixture(scope="session")
def sdvrp20():
    return generate_uniform(20, 30, seed=103, variant=SDVRP)


def small_instance(rng, n, capacity=30, grid=1000, variant=CVRP):
    coords = rng.integers(0, grid + 1, size=(n + 1, 2))
    demands = np.concatenate([[0], rng.integers(1, 10, size=n)])
    return Instance(coords, demands, capacity, rounding=NEAREST, variant=variant,
                    feature_scale=float(grid))


def greedy_all(instances):
    return [greedy_construct(i) for i in instances]


def desk_operators() -> list:
    """The four CVRP-20 operators, trained with the default recipe if not present."""
    from nlns.paramfile import load_params, save_params
    from nlns.training import TrainConfig, train_operator

    params = []
    for i, spec in enumerate(DESK_OPERATORS):
        cfg = TrainConfig(destroy=spec, instances="uniform:20", batches=5000, batch_size=64, seed=i)
        path = MODELS / f"cvrp20_{cfg.destroy_spec().label}.prm"
        if not path.exists():
            MODELS.mkdir(exist_ok=True)
            save_params(train_operator(cfg, log_path=path.with_suffix(".log.jsonl")), path)
        params.append(load_params(path))
    return params


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
