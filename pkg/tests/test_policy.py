import numpy as np
import pytest

from nlns.paramfile import MAGIC, ParamFileError, load_params, read_container, save_params, write_container
from nlns.policy import (
    Adam, adam_step, backward_batch, clip_gradients, forward, forward_batch, greedy_action,
    init_policy, sample_action, sample_from,
)
from nlns.training import critic_forward, critic_forward_batch, critic_mse_grad, init_critic
from oracles import central_difference, max_relative_error, scalar_critic, scalar_policy_forward


def random_params(d, rng, bias_scale=0.3):
    p = init_policy(d, rng)
    for k, v in p.tensors.items():
        if ".b" in k:
            v[...] = rng.normal(scale=bias_scale, size=v.shape)
    return p


def random_inputs(n, rng):
    X = np.empty((n, 4))
    X[:, :2] = rng.random((n, 2))
    X[:, 2] = rng.random(n)
    X[:, 3] = rng.integers(1, 4, size=n)
    X[0] = [rng.random(), rng.random(), -1.0, 0.0]
    return X


def random_mask(n, ref, rng):
    m = rng.random(n) < 0.6
    m[0] = True
    m[ref] = False
    return m


def log_prob_objective(params, X, ref, mask, actions, weights, valid=None):
    p = forward_batch(params, X, ref, mask, valid)
    return float(sum(w * np.log(p[b, a]) for b, (a, w) in enumerate(zip(actions, weights))))


class TestForward:
    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            d = int(rng.choice([4, 8, 16]))
            n = int(rng.integers(2, 12))
            p = random_params(d, rng)
            X = random_inputs(n, rng)
            ref = int(rng.integers(1, n))
            mask = random_mask(n, ref, rng)
            ours = forward(p, X, ref, mask)
            oracle = np.array(scalar_policy_forward(p.tensors, X, ref, mask))
            assert np.max(np.abs(ours - oracle)) < 1e-10
            assert np.all(ours[~mask] == 0.0)
            assert abs(ours.sum() - 1.0) < 1e-9

    def test_identical_inputs_equal_probability(self):
        rng = np.random.default_rng(0)
        p = random_params(8, rng)
        X = random_inputs(4, rng)
        X[3] = X[2]
        mask = np.array([False, False, True, True])
        probs = forward(p, X, 1, mask)
        assert probs[2] == pytest.approx(probs[3], abs=1e-15)

    def test_single_legal_action(self):
        rng = np.random.default_rng(0)
        p = random_params(8, rng)
        probs = forward(p, random_inputs(5, rng), 2, np.array([True, False, False, False, False]))
        assert probs.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        p = random_params(16, rng)
        X = random_inputs(7, rng)
        mask = random_mask(7, 3, rng)
        base = forward(p, X, 3, mask)
        perm = np.concatenate([[0], 1 + rng.permutation(6)])
        inv = np.argsort(perm)
        out = forward(p, X[perm], int(inv[3]), mask[perm])
        assert np.allclose(out, base[perm], atol=1e-13)

    def test_padding_is_ignored(self):
        rng = np.random.default_rng(6)
        p = random_params(8, rng)
        X = random_inputs(5, rng)
        mask = random_mask(5, 2, rng)
        alone = forward(p, X, 2, mask)
        Xp = np.concatenate([X, rng.random((3, 4))])[None]
        mp = np.concatenate([mask, [False] * 3])[None]
        valid = np.array([[True] * 5 + [False] * 3])
        padded = forward_batch(p, Xp, [2], mp, valid)[0]
        assert np.allclose(padded[:5], alone, atol=1e-14) and np.all(padded[5:] == 0)

    def test_all_masked_rejected(self):
        rng = np.random.default_rng(0)
        p = random_params(4, rng)
        with pytest.raises(ValueError):
            forward(p, random_inputs(3, rng), 1, np.zeros(3, dtype=bool))

    def test_parameter_count(self):
        d = 8
        expected = 2 * (4 * d + d + d * d + d) + 2 * d * d + d + 2 * d * d + d + d * d + d + 2 * d * d + d
        assert init_policy(d).n_parameters() == expected


class TestSampling:
    def test_certain_action(self):
        rng = np.random.default_rng(0)
        p = random_params(4, rng)
        a, lp = sample_action(p, random_inputs(3, rng), 1, np.array([False, False, True]), rng)
        assert a == 2 and lp == 0.0

    def test_log_prob_matches_forward(self):
        rng = np.random.default_rng(1)
        p = random_params(8, rng)
        X = random_inputs(6, rng)
        mask = random_mask(6, 1, rng)
        a, lp = sample_action(p, X, 1, mask, rng)
        assert lp == pytest.approx(np.log(forward(p, X, 1, mask)[a]), abs=1e-15)

    def test_reproducible(self):
        probs = np.array([[0.2, 0.0, 0.5, 0.3]] * 50)
        a = sample_from(probs, np.random.default_rng(9))
        b = sample_from(probs, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_monte_carlo_frequencies(self):
        probs = np.array([0.1, 0.0, 0.25, 0.4, 0.25])
        n = 100_000
        draws = sample_from(np.tile(probs, (n, 1)), np.random.default_rng(2))
        freq = np.bincount(draws, minlength=5) / n
        sigma = np.sqrt(probs * (1 - probs) / n)
        assert freq[1] == 0
        assert np.all(np.abs(freq - probs) <= 3 * sigma + 1e-12)

    def test_greedy_ties_lowest(self):
        rng = np.random.default_rng(0)
        p = random_params(8, rng)
        X = random_inputs(4, rng)
        X[3] = X[2]
        assert greedy_action(p, X, 1, np.array([False, False, True, True])) == 2


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            d = int(rng.choice([4, 8]))
            B = 3
            n = int(rng.integers(2, 9))
            p = random_params(d, rng)
            X = np.stack([random_inputs(n, rng) for _ in range(B)])
            ref = rng.integers(1, n, size=B)
            mask = np.stack([random_mask(n, r, rng) for r in ref])
            actions = [int(rng.choice(np.flatnonzero(m))) for m in mask]
            weights = rng.normal(size=B)
            g = backward_batch(p, X, ref, mask, actions, weights)
            fd = central_difference(lambda: log_prob_objective(p, X, ref, mask, actions, weights), p.tensors)
            assert max_relative_error(g, fd) <= 1e-4

    def test_zero_weights(self):
        rng = np.random.default_rng(0)
        p = random_params(8, rng)
        X = random_inputs(5, rng)[None]
        g = backward_batch(p, X, [1], random_mask(5, 1, rng)[None], [0], [0.0])
        assert all(not v.any() for v in g.values())

    def test_tie_branches(self):
        # two identical targets: choosing either gives the same gradient, and when
        # they are the only legal actions the choice carries no signal at all
        rng = np.random.default_rng(4)
        p = random_params(8, rng)
        X = random_inputs(4, rng)
        X[3] = X[2]
        mask = np.array([True, False, True, True])[None]
        g2 = backward_batch(p, X[None], [1], mask, [2], [1.0])
        g3 = backward_batch(p, X[None], [1], mask, [3], [1.0])
        g0 = backward_batch(p, X[None], [1], mask, [0], [1.0])
        for k in g2:
            assert np.allclose(g2[k], g3[k], atol=1e-13)
        assert any(np.abs(g2[k]).max() > 1e-6 for k in g2)
        # p(depot) + 2 p(tie) = 1, so p(tie) * d log p(tie) = -p(depot) * d log p(depot) / 2
        pr = forward(p, X, 1, mask[0])
        for k in g2:
            assert np.allclose(pr[2] * g2[k], -0.5 * pr[0] * g0[k], atol=1e-12)
        only = np.array([False, False, True, True])[None]
        gz = backward_batch(p, X[None], [1], only, [2], [1.0])
        assert all(np.abs(v).max() < 1e-12 for v in gz.values())

    def test_padding_does_not_change_gradient(self):
        rng = np.random.default_rng(8)
        p = random_params(8, rng)
        X = random_inputs(4, rng)
        mask = random_mask(4, 1, rng)
        a = int(np.flatnonzero(mask)[0])
        g = backward_batch(p, X[None], [1], mask[None], [a], [1.3])
        Xp = np.concatenate([X, rng.random((2, 4))])[None]
        mp = np.concatenate([mask, [False, False]])[None]
        valid = np.array([[True] * 4 + [False] * 2])
        gp = backward_batch(p, Xp, [1], mp, [a], [1.3], valid)
        for k in g:
            assert np.allclose(g[k], gp[k], atol=1e-13)


class TestCritic:
    def test_matches_scalar(self):
        rng = np.random.default_rng(2)
        c = init_critic(8, rng)
        c.tensors["b1"][:] = rng.normal(size=8)
        X = random_inputs(6, rng)
        assert critic_forward(c, X) == pytest.approx(scalar_critic(c.tensors, X), abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        c = init_critic(16, rng)
        X = random_inputs(9, rng)
        assert critic_forward(c, X[rng.permutation(9)]) == pytest.approx(critic_forward(c, X), abs=1e-12)

    def test_zero_weights(self):
        c = init_critic(8)
        for v in c.tensors.values():
            v[...] = 0
        assert critic_forward(c, random_inputs(4, np.random.default_rng(0))) == 0.0

    def test_mse_gradient(self):
        rng = np.random.default_rng(12)
        c = init_critic(8, rng)
        for k in ("b1", "b2"):
            c.tensors[k][:] = rng.normal(scale=0.2, size=8)
        X = np.stack([random_inputs(6, rng) for _ in range(4)])
        valid = np.ones((4, 6), dtype=bool)
        valid[2, 4:] = False
        targets = rng.normal(size=4)
        _, g, _ = critic_mse_grad(c, X, valid, targets)

        def mse():
            return float(((critic_forward_batch(c, X, valid) - targets) ** 2).mean())

        fd = central_difference(mse, c.tensors)
        assert max_relative_error(g, fd) <= 1e-4


class TestAdam:
    def test_first_step_closed_form(self):
        p = init_policy(4)
        opt = Adam(p, lr=1e-4)
        before = p.copy()
        grads = p.zeros_like()
        grads["att.z"][0] = 1.0
        adam_step(p, grads, opt, 1e-4)
        # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert p["att.z"][0] - before["att.z"][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-9)
        assert np.array_equal(p["att.z"][1:], before["att.z"][1:])

    def test_second_step_closed_form(self):
        p = init_policy(4)
        opt = Adam(p, lr=1e-3)
        x0 = p["att.z"][0]
        grads = p.zeros_like()
        grads["att.z"][0] = 2.0
        opt.step(p, grads)
        grads["att.z"][0] = -1.0
        opt.step(p, grads)
        m = 0.9 * (0.1 * 2.0) + 0.1 * -1.0
        v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0
        second = 1e-3 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        first = 1e-3 * 2.0 / (2.0 + 1e-8)
        assert p["att.z"][0] == pytest.approx(x0 - first - second, rel=1e-12)

    def test_zero_gradient_fixed_point(self):
        p = init_policy(4)
        before = p.copy()
        opt = Adam(p)
        for _ in range(5):
            opt.step(p, p.zeros_like())
        assert p.equal(before)

    def test_deterministic(self):
        def run():
            p = init_policy(4, 7)
            opt = Adam(p)
            rng = np.random.default_rng(0)
            for _ in range(3):
                opt.step(p, {k: rng.normal(size=v.shape) for k, v in p.tensors.items()})
            return p

        assert run().equal(run())

    def test_clip(self):
        g = {"a": np.array([3.0, 4.0])}
        assert np.allclose(clip_gradients(g, 1.0)["a"], [0.6, 0.8])
        assert clip_gradients(g, 10.0)["a"] is g["a"]


class TestParamFile:
    def test_round_trip(self, tmp_path):
        p = random_params(8, np.random.default_rng(0))
        p.meta.update(destroy="point20", variant="cvrp")
        save_params(p, tmp_path / "p.prm")
        q = load_params(tmp_path / "p.prm")
        assert q.equal(p) and q.meta == p.meta
        for k in p.names():
            assert q[k].tobytes() == p[k].tobytes()

    def test_truncated(self, tmp_path):
        save_params(init_policy(8), tmp_path / "p.prm")
        blob = (tmp_path / "p.prm").read_bytes()
        for cut in (5, 20, len(blob) // 2, len(blob) - 1):
            (tmp_path / "t.prm").write_bytes(blob[:cut])
            with pytest.raises(ParamFileError):
                load_params(tmp_path / "t.prm")

    def test_corrupted_payload(self, tmp_path):
        save_params(init_policy(4), tmp_path / "p.prm")
        blob = bytearray((tmp_path / "p.prm").read_bytes())
        blob[-12] ^= 0xFF
        (tmp_path / "c.prm").write_bytes(bytes(blob))
        with pytest.raises(ParamFileError, match="checksum"):
            load_params(tmp_path / "c.prm")

    def test_version_mismatch(self, tmp_path):
        save_params(init_policy(4), tmp_path / "p.prm")
        blob = bytearray((tmp_path / "p.prm").read_bytes())
        blob[8] = 99
        (tmp_path / "v.prm").write_bytes(bytes(blob))
        with pytest.raises(ParamFileError, match="version"):
            load_params(tmp_path / "v.prm")

    def test_d_h_read_from_file(self, tmp_path):
        save_params(init_policy(64), tmp_path / "p.prm")
        assert load_params(tmp_path / "p.prm").d_h == 64
        with pytest.raises(ParamFileError):
            load_params(tmp_path / "p.prm", expect_d_h=128)

    def test_dimension_mismatch(self, tmp_path):
        p = init_policy(4)
        tensors = dict(p.tensors)
        tensors["att.z"] = np.zeros(5)
        write_container(tmp_path / "bad.prm", "policy", tensors, 4)
        with pytest.raises(ParamFileError, match="shape"):
            load_params(tmp_path / "bad.prm")

    def test_layout(self, tmp_path):
        save_params(init_policy(4), tmp_path / "p.prm")
        blob = (tmp_path / "p.prm").read_bytes()
        assert blob[:8] == MAGIC
        kind, d_h, tensors, _ = read_container(tmp_path / "p.prm")
        assert (kind, d_h) == ("policy", 4)

    def test_not_a_param_file(self, tmp_path):
        (tmp_path / "x.prm").write_bytes(b"hello world, not params")
        with pytest.raises(ParamFileError):
            load_params(tmp_path / "x.prm")
