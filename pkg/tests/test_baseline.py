import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DESK_OPERATORS, desk_operators, greedy_all, small_instance
from nlns.baseline import InsertionConfig, handcrafted_repair, random_repair
from nlns.core import CVRP, SDVRP, Instance, Tour, greedy_construct, validate
from nlns.destroy import DEFAULT_OPERATORS, DestroyedSolution, DestroySpec, Fragment, destroy
from nlns.generate import generate_uniform
from nlns.repair_state import RepairState
from nlns.training import rollout_batch
from oracles import demand_accounting, route_cost

GREEDY = InsertionConfig(greediness=1.0)


class TestConfig:
    @pytest.mark.parametrize("g", [0.0, -0.1, 1.5])
    def test_bad_greediness(self, g):
        with pytest.raises(ValueError):
            InsertionConfig(greediness=g)

    def test_bad_criteria(self):
        with pytest.raises(ValueError):
            InsertionConfig(criteria=("nearest",))
        with pytest.raises(ValueError):
            InsertionConfig(criteria=())


class TestHandcrafted:
    def test_cheapest_position(self):
        coords = [[0, 0], [10, 0], [20, 0], [0, 10], [0, 20], [11, 1]]
        inst = Instance(coords, [0, 1, 1, 1, 1, 1], 10)
        tours = (Tour((1, 2), (1, 1)), Tour((3, 4), (1, 1)))
        d = DestroyedSolution(inst, tours, [Fragment([5], [1])])
        out = handcrafted_repair(d, GREEDY, np.random.default_rng(0))
        # brute force every insertion position, including a new tour
        options = [[list(t.customers) for t in tours] + [[5]]]
        for t in range(2):
            for pos in range(3):
                ts = [list(x.customers) for x in tours]
                ts[t].insert(pos, 5)
                options.append(ts)
        best = min(route_cost(inst, [(c, None) for c in ts]) for ts in options)
        assert out.cost == pytest.approx(best)
        assert validate(inst, out).ok

    def test_greedy_deterministic_given_order(self, cvrp20):
        rng = np.random.default_rng(3)
        cfg = InsertionConfig(greediness=1.0, criteria=("demand",))
        for s in greedy_all(cvrp20)[:10]:
            d = destroy(s, DEFAULT_OPERATORS[1], rng)
            a = handcrafted_repair(d, cfg, np.random.default_rng(1))
            b = handcrafted_repair(d, cfg, np.random.default_rng(999))
            assert a.same_tours(b)

    def test_kept_pieces_rejoined(self):
        inst = Instance([[0, 0], [1, 0], [2, 0], [3, 0]], [0, 1, 1, 1], 10)
        frags = [Fragment([1], [1], head_depot=True, origin=0, order=0),
                 Fragment([3], [1], tail_depot=True, origin=0, order=1)]
        d = DestroyedSolution(inst, (), frags + [Fragment([2], [1])])
        out = handcrafted_repair(d, GREEDY, np.random.default_rng(0))
        assert [t.customers for t in out.tours] == [(1, 2, 3)]

    def test_sdvrp_tops_up(self):
        inst = Instance([[0, 0], [5, 0]], [0, 8], 5, variant=SDVRP)
        d = DestroyedSolution(inst, (Tour((1,), (4,)),), [Fragment([1], [4])])
        out = handcrafted_repair(d, GREEDY, np.random.default_rng(0))
        assert validate(inst, out).ok
        assert demand_accounting(inst, [(t.customers, t.deliveries) for t in out.tours])["exact"]


class TestRandom:
    def test_only_depot_legal(self):
        inst = Instance([[0, 0], [1, 0], [2, 0]], [0, 1, 1], 10)
        d = DestroyedSolution(inst, (), [Fragment([1, 2], [1, 1], head_depot=True)])
        out = random_repair(d, np.random.default_rng(0))
        assert [t.customers for t in out.tours] == [(1, 2)]


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 30), op=st.integers(0, 3),
       variant=st.sampled_from([CVRP, SDVRP]), q=st.integers(9, 40), g=st.floats(0.05, 1.0))
def test_both_feasible(seed, n, op, variant, q, g):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng, n, capacity=q, variant=variant)
    d = destroy(greedy_construct(inst), DEFAULT_OPERATORS[op], rng)
    for out in (handcrafted_repair(d, InsertionConfig(greediness=g), rng), random_repair(d, rng)):
        assert validate(inst, out).ok
        acc = demand_accounting(inst, [(t.customers, t.deliveries) for t in out.tours])
        assert acc["exact"] and acc["capacity_ok"]


def test_handcrafted_beats_random(cvrp20):
    rng = np.random.default_rng(11)
    hand, rand = [], []
    for s in greedy_all(cvrp20):
        for spec in DEFAULT_OPERATORS:
            d = destroy(s, spec, rng)
            hand.append(handcrafted_repair(d, None, rng).cost)
            rand.append(random_repair(d, rng).cost)
    assert np.mean(hand) < np.mean(rand)


@pytest.mark.slow
def test_random_no_better_than_desk_operators():
    insts = generate_uniform(20, 500, seed=4040)
    rng = np.random.default_rng(1)
    for spec_text, params in zip(DESK_OPERATORS, desk_operators()):
        spec = DestroySpec.parse(spec_text)
        destroyed = [destroy(greedy_construct(i), spec, rng) for i in insts]
        learned = np.mean([t.loss for t in rollout_batch([RepairState(d) for d in destroyed], params, rng)])
        rand = np.mean([random_repair(d, rng).cost - d.cost for d in destroyed])
        print(f"{spec_text}: learned {learned:.4f}, random {rand:.4f}")
        assert rand >= learned
