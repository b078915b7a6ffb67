"""REINFORCE training of repair operators with a learned critic baseline."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import CVRP, Solution, greedy_construct
from .destroy import DestroySpec, destroy
from .policy import Adam, Params, backward_batch, clip_gradients, forward_batch, init_policy, sample_from
from .repair_state import RepairState

# -- critic ----------------------------------------------------------------


def _critic_shapes(d: int) -> dict:
    return {
        "w1": (4, d), "b1": (d,),
        "w2": (d, d), "b2": (d,),
        "w3": (d, 1), "b3": (1,),
    }


def init_critic(d_h: int = 128, rng=0) -> Params:
    rng = np.random.default_rng(rng)
    tensors = {}
    for name, shape in _critic_shapes(d_h).items():
        if name.startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return Params(d_h, tensors, {})


def critic_forward_batch(critic: Params, X, valid=None, cache: bool = False):
    """Sum of a position-wise network over the (valid) inputs of each state."""
    X = np.asarray(X, dtype=np.float64)
    B, N, _ = X.shape
    valid = np.ones((B, N), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    P = critic.tensors
    z1 = X @ P["w1"] + P["b1"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ P["w2"] + P["b2"]
    a2 = np.maximum(z2, 0.0)
    out = (a2 @ P["w3"])[..., 0] + P["b3"][0]
    est = (out * valid).sum(axis=1)
    if cache:
        return est, dict(X=X, valid=valid, z1=z1, a1=a1, z2=z2, a2=a2)
    return est


def critic_forward(critic: Params, X0) -> float:
    return float(critic_forward_batch(critic, np.asarray(X0)[None])[0])


def critic_mse_grad(critic: Params, X, valid, targets):
    """Mean squared error against ``targets`` and its gradient."""
    est, C = critic_forward_batch(critic, X, valid, cache=True)
    targets = np.asarray(targets, dtype=np.float64)
    B = est.shape[0]
    err = est - targets
    mse = float((err**2).mean())
    dout = (2.0 / B) * err[:, None] * C["valid"]  # (B, N)
    P = critic.tensors
    g = critic.zeros_like()
    a2 = C["a2"].reshape(-1, P["w2"].shape[1])
    d2 = dout.reshape(-1)
    g["w3"] = a2.T @ d2[:, None]
    g["b3"] = np.array([d2.sum()])
    dz2 = (d2[:, None] @ P["w3"].T) * (C["z2"].reshape(a2.shape) > 0)
    a1 = C["a1"].reshape(-1, P["w1"].shape[1])
    g["w2"] = a1.T @ dz2
    g["b2"] = dz2.sum(0)
    dz1 = (dz2 @ P["w2"].T) * (C["z1"].reshape(a1.shape) > 0)
    g["w1"] = C["X"].reshape(-1, 4).T @ dz1
    g["b1"] = dz1.sum(0)
    return mse, g, est


# -- rollouts --------------------------------------------------------------


@dataclass
class EpisodeTrace:
    """Everything needed to re-evaluate one repair episode's log-likelihood."""

    X0: np.ndarray
    initial_cost: float
    X: list = field(default_factory=list)
    refs: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    solution: Solution | None = None

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def loss(self) -> float:
        return repair_loss(self.initial_cost, self.solution)


def pad_stack(arrays: list, width: int | None = None):
    """Stack variable-length ``(N_i, ...)`` arrays into a zero-padded block."""
    width = width or max(a.shape[0] for a in arrays)
    tail = arrays[0].shape[1:]
    out = np.zeros((len(arrays), width, *tail), dtype=arrays[0].dtype)
    valid = np.zeros((len(arrays), width), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
        valid[i, : a.shape[0]] = True
    return out, valid


def rollout_batch(states: list, params: Params, rng: np.random.Generator,
                  greedy: bool = False, record: bool = True, counter: dict | None = None) -> list:
    """Run all states to completion in lockstep; returns one trace per state.

    ``counter``, if given, accumulates ``steps`` (state actions taken) and
    ``rows`` (padded input rows passed through the network).
    """
    traces = [EpisodeTrace(s.features() if record else None, s.initial_cost) for s in states]
    active = [i for i, s in enumerate(states) if not s.done]
    while active:
        refs, feats, masks = [], [], []
        for i in active:
            s = states[i]
            r = s.select_reference(rng)
            refs.append(r)
            feats.append(s.features())
            masks.append(s.mask(r))
        X, valid = pad_stack(feats)
        M, _ = pad_stack(masks, X.shape[1])
        if counter is not None:
            counter["steps"] = counter.get("steps", 0) + len(active)
            counter["rows"] = counter.get("rows", 0) + X.shape[0] * X.shape[1]
        p = forward_batch(params, X, refs, M, valid)
        acts = np.argmax(p, axis=1) if greedy else sample_from(p, rng)
        for k, i in enumerate(active):
            a = int(acts[k])
            if record:
                tr = traces[i]
                tr.X.append(feats[k])
                tr.refs.append(refs[k])
                tr.masks.append(masks[k])
                tr.actions.append(a)
                tr.log_probs.append(float(np.log(p[k, a])))
            states[i].apply(refs[k], a, masks[k])
        active = [i for i in active if not states[i].done]
    for tr, s in zip(traces, states):
        tr.solution = s.solution()
    return traces


def rollout_repair(state: RepairState, params: Params, rng: np.random.Generator,
                   greedy: bool = False) -> EpisodeTrace:
    return rollout_batch([state], params, rng, greedy=greedy)[0]


def repair_loss(initial_cost: float, repaired: Solution) -> float:
    """Cost added by the repair: repaired length minus destroyed length."""
    return repaired.cost - initial_cost


def episode_log_prob_grad(params: Params, traces: list, weights, chunk: int = 1024) -> dict:
    """Gradient of ``sum_e weights[e] * log p(trace_e)`` over all recorded steps."""
    rows = []
    for tr, w in zip(traces, weights):
        for t in range(tr.steps):
            rows.append((tr.X[t], tr.refs[t], tr.masks[t], tr.actions[t], w))
    grads = params.zeros_like()
    if not rows:
        return grads
    for start in range(0, len(rows), chunk):
        part = rows[start:start + chunk]
        X, valid = pad_stack([r[0] for r in part])
        M, _ = pad_stack([r[2] for r in part], X.shape[1])
        g = backward_batch(
            params, X, [r[1] for r in part], M,
            [r[3] for r in part], [r[4] for r in part], valid,
        )
        for k in grads:
            grads[k] += g[k]
    return grads


# -- training loop ---------------------------------------------------------


@dataclass
class TrainConfig:
    destroy: str = "point:0.2"
    instances: str = "uniform:20"
    variant: str = CVRP
    batches: int = 5000
    batch_size: int = 64
    lr: float = 1e-4
    critic_lr: float | None = None
    seed: int = 0
    d_h: int = 128
    iterations_per_instance: int = 1
    grad_clip: float | None = None
    checkpoint_every: int = 100

    def destroy_spec(self) -> DestroySpec:
        return DestroySpec.parse(self.destroy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainerState:
    policy: Params
    critic: Params
    policy_opt: Adam
    critic_opt: Adam
    rng: np.random.Generator
    step: int = 0


def train_step(state: TrainerState, destroyed_batch: list, config: TrainConfig) -> dict:
    """One policy update followed by one critic update on the same batch."""
    return _train_step(state, destroyed_batch, config)[0]


def _train_step(state: TrainerState, destroyed_batch: list, config: TrainConfig):
    policy, critic = state.policy, state.critic
    rstates = [RepairState(d) for d in destroyed_batch]
    traces = rollout_batch(rstates, policy, state.rng)
    losses = np.array([tr.loss for tr in traces])
    X0, valid0 = pad_stack([tr.X0 for tr in traces])
    baseline = critic_forward_batch(critic, X0, valid0)

    B = len(traces)
    adv = (losses - baseline) / B
    grads = episode_log_prob_grad(policy, traces, adv)
    if config.grad_clip:
        grads = clip_gradients(grads, config.grad_clip)
    state.policy_opt.step(policy, grads, config.lr)

    mse, cgrads, _ = critic_mse_grad(critic, X0, valid0, losses)
    if config.grad_clip:
        cgrads = clip_gradients(cgrads, config.grad_clip)
    state.critic_opt.step(critic, cgrads, config.critic_lr or config.lr)
    state.step += 1
    metrics = {
        "step": state.step,
        "mean_loss": float(losses.mean()),
        "mean_baseline": float(baseline.mean()),
        "critic_mse": mse,
        "mean_steps": float(np.mean([tr.steps for tr in traces])),
    }
    return metrics, traces


def new_trainer(config: TrainConfig) -> TrainerState:
    root = np.random.SeedSequence(config.seed)
    s_pol, s_cri, s_run = root.spawn(3)
    policy = init_policy(config.d_h, np.random.default_rng(s_pol))
    policy.meta.update(
        destroy=config.destroy_spec().label,
        instances=config.instances,
        variant=config.variant,
        seed=config.seed,
        batches=0,
    )
    critic = init_critic(config.d_h, np.random.default_rng(s_cri))
    return TrainerState(
        policy, critic,
        Adam(policy, config.lr), Adam(critic, config.critic_lr or config.lr),
        np.random.default_rng(s_run),
    )


class TrainingBatches:
    """Yields destroyed solutions for training.

    Fresh instances are sampled and greedily constructed; with
    ``iterations_per_instance > 1`` each instance is kept for that many
    batches and continues from its best repaired solution.
    """

    def __init__(self, config: TrainConfig):
        from .generate import instance_sampler

        self.config = config
        self.sample = instance_sampler(config.instances, variant=config.variant)
        self.spec = config.destroy_spec()
        self.pool = None
        self.age = 0

    def next(self, rng: np.random.Generator) -> list:
        cfg = self.config
        if self.pool is None or self.age >= cfg.iterations_per_instance:
            self.pool = [greedy_construct(self.sample(rng)) for _ in range(cfg.batch_size)]
            self.age = 0
        self.age += 1
        return [destroy(s, self.spec, rng) for s in self.pool]

    def feedback(self, solutions: list) -> None:
        if self.config.iterations_per_instance <= 1:
            return
        self.pool = [
            new if new.cost < old.cost else old
            for old, new in zip(self.pool, solutions)
        ]


def save_checkpoint(state: TrainerState, config: TrainConfig, path) -> None:
    from .paramfile import write_container

    tensors = {}
    tensors.update({f"policy/{k}": v for k, v in state.policy.tensors.items()})
    tensors.update({f"critic/{k}": v for k, v in state.critic.tensors.items()})
    tensors.update({f"popt/{k}": v for k, v in state.policy_opt.state_tensors().items()})
    tensors.update({f"copt/{k}": v for k, v in state.critic_opt.state_tensors().items()})
    meta = {
        "step": state.step,
        "config": config.to_dict(),
        "rng": state.rng.bit_generator.state,
        "policy_meta": state.policy.meta,
        "popt_t": state.policy_opt.t,
        "copt_t": state.critic_opt.t,
    }
    write_container(path, "checkpoint", tensors, state.policy.d_h, meta)


def load_checkpoint(path, config: TrainConfig) -> TrainerState:
    from .paramfile import ParamFileError, read_container

    kind, d_h, tensors, meta = read_container(path)
    if kind != "checkpoint":
        raise ParamFileError(f"{path}: not a training checkpoint")
    saved = dict(meta["config"])
    current = config.to_dict()
    for key in ("destroy", "instances", "variant", "batch_size", "seed", "d_h"):
        if saved.get(key) != current.get(key):
            raise ParamFileError(f"{path}: checkpoint {key}={saved.get(key)!r} != {current.get(key)!r}")
    state = new_trainer(config)
    for k in state.policy.tensors:
        state.policy.tensors[k] = tensors[f"policy/{k}"].copy()
    for k in state.critic.tensors:
        state.critic.tensors[k] = tensors[f"critic/{k}"].copy()
    state.policy_opt.load_state({k[5:]: v for k, v in tensors.items() if k.startswith("popt/")},
                                meta["popt_t"])
    state.critic_opt.load_state({k[5:]: v for k, v in tensors.items() if k.startswith("copt/")},
                                meta["copt_t"])
    state.policy.meta.update(meta["policy_meta"])
    state.rng.bit_generator.state = meta["rng"]
    state.step = int(meta["step"])
    return state


def train_operator(config: TrainConfig, *, log_path=None, checkpoint_path=None,
                   resume: bool = False, progress=None) -> Params:
    """Train one repair operator for ``config.destroy``; returns its parameters."""
    if checkpoint_path is not None and resume and Path(checkpoint_path).exists():
        state = load_checkpoint(checkpoint_path, config)
    else:
        state = new_trainer(config)
    batches = TrainingBatches(config)
    log = open(log_path, "a" if resume else "w") if log_path else None
    t0 = time.perf_counter()
    try:
        while state.step < config.batches:
            destroyed = batches.next(state.rng)
            metrics, traces = _train_step(state, destroyed, config)
            batches.feedback([tr.solution for tr in traces])
            metrics["wall_time"] = round(time.perf_counter() - t0, 3)
            if log:
                log.write(json.dumps(metrics, sort_keys=True) + "\n")
                log.flush()
            if progress:
                progress(metrics)
            if checkpoint_path is not None and state.step % config.checkpoint_every == 0:
                state.policy.meta["batches"] = state.step
                save_checkpoint(state, config, checkpoint_path)
    finally:
        if log:
            log.close()
    state.policy.meta["batches"] = state.step
    return state.policy

