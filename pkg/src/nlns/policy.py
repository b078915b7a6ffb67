"""Attention repair model: batched forward pass, reverse-mode gradients, Adam.

All tensors are float64.  A batch is a padded ``(B, N, 4)`` block of inputs
with a ``valid`` matrix marking real rows and a ``mask`` matrix marking legal
actions (always a subset of ``valid``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_HIDDEN = 128
N_FEATURES = 4


def _shapes(d: int) -> dict:
    return {
        "emb_c.w1": (N_FEATURES, d),
        "emb_c.b1": (d,),
        "emb_c.w2": (d, d),
        "emb_c.b2": (d,),
        "emb_f.w1": (N_FEATURES, d),
        "emb_f.b1": (d,),
        "emb_f.w2": (d, d),
        "emb_f.b2": (d,),
        "att.W": (d, 2 * d),
        "att.z": (d,),
        "ffn.w1": (2 * d, d),
        "ffn.b1": (d,),
        "ffn.w2": (d, d),
        "ffn.b2": (d,),
        "out.W": (d, 2 * d),
        "out.z": (d,),
    }


def _fan_in(name: str, shape: tuple) -> int:
    if name.endswith(".W"):
        return shape[1]
    return shape[0]


@dataclass
class Params:
    """Named float64 tensors plus free-form metadata (problem class, destroy op)."""

    d_h: int
    tensors: dict
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def copy(self) -> "Params":
        return Params(self.d_h, {k: v.copy() for k, v in self.tensors.items()}, dict(self.meta))

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def equal(self, other: "Params") -> bool:
        return (
            self.d_h == other.d_h
            and self.names() == other.names()
            and all(np.array_equal(self[k], other[k]) for k in self.names())
        )


def init_policy(d_h: int = DEFAULT_HIDDEN, rng: np.random.Generator | int | None = 0, **meta) -> Params:
    """Weights uniform in +-1/sqrt(fan_in); biases zero."""
    rng = np.random.default_rng(rng)
    tensors = {}
    for name, shape in _shapes(d_h).items():
        if ".b" in name:
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(_fan_in(name, shape))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return Params(d_h, tensors, dict(meta))


def _relu(x):
    return np.maximum(x, 0.0)


def _affine(x, w, b):
    return x @ w + b


def _masked_softmax(scores, allowed):
    s = np.where(allowed, scores, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    e[~allowed] = 0.0
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: Params, X, ref, mask, valid=None, cache: bool = False):
    """Action probabilities for a batch of repair states.

    X: (B, N, 4) inputs, ref: (B,) reference row per state, mask: (B, N) legal
    actions.  Returns (B, N) probabilities, plus the activation cache.
    """
    X = np.asarray(X, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    B, N, _ = X.shape
    valid = np.ones((B, N), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("every state needs at least one legal action")
    if (mask & ~valid).any():
        raise ValueError("mask allows padded rows")
    d = params.d_h
    P = params.tensors

    z1c = _affine(X, P["emb_c.w1"], P["emb_c.b1"])
    a1c = _relu(z1c)
    h = _affine(a1c, P["emb_c.w2"], P["emb_c.b2"])

    f = X[np.arange(B), ref]
    z1f = _affine(f, P["emb_f.w1"], P["emb_f.b1"])
    a1f = _relu(z1f)
    hf = _affine(a1f, P["emb_f.w2"], P["emb_f.b2"])

    WA_h, WA_f = P["att.W"][:, :d], P["att.W"][:, d:]
    A = np.tanh(h @ WA_h.T + (hf @ WA_f.T)[:, None, :])
    uH = A @ P["att.z"]
    abar = _masked_softmax(uH, valid)
    c = np.einsum("bn,bnd->bd", abar, h)

    g = np.concatenate([c, hf], axis=1)
    z1q = _affine(g, P["ffn.w1"], P["ffn.b1"])
    a1q = _relu(z1q)
    z2q = _affine(a1q, P["ffn.w2"], P["ffn.b2"])
    q = _relu(z2q)

    WB_h, WB_q = P["out.W"][:, :d], P["out.W"][:, d:]
    Bt = np.tanh(h @ WB_h.T + (q @ WB_q.T)[:, None, :])
    u = Bt @ P["out.z"]
    p = _masked_softmax(u, mask)
    if not cache:
        return p
    return p, dict(
        X=X, ref=ref, mask=mask, valid=valid, z1c=z1c, a1c=a1c, h=h, f=f, z1f=z1f,
        a1f=a1f, hf=hf, A=A, abar=abar, c=c, g=g, z1q=z1q, a1q=a1q, z2q=z2q, q=q,
        Bt=Bt, p=p,
    )


def forward(params: Params, X, ref: int, mask) -> np.ndarray:
    """Probability vector for a single state."""
    X = np.asarray(X, dtype=np.float64)
    return forward_batch(params, X[None], [ref], np.asarray(mask, dtype=bool)[None])[0]


def _embedding_backward(grads, prefix, P, x, z1, a1, dh):
    """Backprop through ``w2 @ relu(w1 @ x + b1) + b2`` (rows of ``x``)."""
    x2 = x.reshape(-1, x.shape[-1])
    a2 = a1.reshape(-1, a1.shape[-1])
    dh2 = dh.reshape(-1, dh.shape[-1])
    grads[prefix + ".w2"] += a2.T @ dh2
    grads[prefix + ".b2"] += dh2.sum(0)
    dz1 = (dh2 @ P[prefix + ".w2"].T) * (z1.reshape(dh2.shape[0], -1) > 0)
    grads[prefix + ".w1"] += x2.T @ dz1
    grads[prefix + ".b1"] += dz1.sum(0)


def backward_batch(params: Params, X, ref, mask, actions, weights, valid=None) -> dict:
    """Gradient of ``sum_b weights[b] * log p(actions[b] | state b)``."""
    p, C = forward_batch(params, X, ref, mask, valid, cache=True)
    return _backward_from_cache(params, C, np.asarray(actions, dtype=np.int64),
                                np.asarray(weights, dtype=np.float64))


def _backward_from_cache(params: Params, C: dict, actions, weights) -> dict:
    P = params.tensors
    d = params.d_h
    grads = params.zeros_like()
    p, h, hf, A, abar, Bt, q = C["p"], C["h"], C["hf"], C["A"], C["abar"], C["Bt"], C["q"]
    B = p.shape[0]

    gu = -p * weights[:, None]
    gu[np.arange(B), actions] += weights
    gu[~C["mask"]] = 0.0

    # output scores u_i = z^B . tanh(W^B [h_i; q])
    grads["out.z"] += np.einsum("bn,bnd->d", gu, Bt)
    dpreB = gu[..., None] * P["out.z"] * (1.0 - Bt**2)
    WB_h, WB_q = P["out.W"][:, :d], P["out.W"][:, d:]
    flat = dpreB.reshape(-1, d)
    grads["out.W"][:, :d] += flat.T @ h.reshape(-1, d)
    sB = dpreB.sum(axis=1)
    grads["out.W"][:, d:] += sB.T @ q
    dh = dpreB @ WB_h
    dq = sB @ WB_q

    # q = relu(w2 relu(w1 [c; hf] + b1) + b2)
    dz2q = dq * (C["z2q"] > 0)
    grads["ffn.w2"] += C["a1q"].T @ dz2q
    grads["ffn.b2"] += dz2q.sum(0)
    dz1q = (dz2q @ P["ffn.w2"].T) * (C["z1q"] > 0)
    grads["ffn.w1"] += C["g"].T @ dz1q
    grads["ffn.b1"] += dz1q.sum(0)
    dg = dz1q @ P["ffn.w1"].T
    dc, dhf = dg[:, :d], dg[:, d:].copy()

    # c = sum_i abar_i h_i
    dh += abar[..., None] * dc[:, None, :]
    dabar = np.einsum("bnd,bd->bn", h, dc)
    duH = abar * (dabar - (abar * dabar).sum(axis=1, keepdims=True))

    # alignment scores u^H_i = z^A . tanh(W^A [h_i; hf])
    grads["att.z"] += np.einsum("bn,bnd->d", duH, A)
    dpreA = duH[..., None] * P["att.z"] * (1.0 - A**2)
    WA_h, WA_f = P["att.W"][:, :d], P["att.W"][:, d:]
    grads["att.W"][:, :d] += dpreA.reshape(-1, d).T @ h.reshape(-1, d)
    sA = dpreA.sum(axis=1)
    grads["att.W"][:, d:] += sA.T @ hf
    dh += dpreA @ WA_h
    dhf += sA @ WA_f

    dh *= C["valid"][..., None]
    _embedding_backward(grads, "emb_c", P, C["X"], C["z1c"], C["a1c"], dh)
    _embedding_backward(grads, "emb_f", P, C["f"], C["z1f"], C["a1f"], dhf)
    return grads


def sample_from(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of one index per row of ``p``."""
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
    # guard against rounding pushing the draw onto a zero-probability row end
    bad = p[np.arange(p.shape[0]), np.minimum(idx, p.shape[1] - 1)] == 0
    idx = np.minimum(idx, p.shape[1] - 1)
    if bad.any():
        for b in np.flatnonzero(bad):
            idx[b] = np.flatnonzero(p[b] > 0)[-1]
    return idx


def sample_action(params: Params, X, ref: int, mask, rng: np.random.Generator):
    """Draw an action; returns ``(action, log_probability)``."""
    p = forward(params, X, ref, mask)
    a = int(sample_from(p[None], rng)[0])
    return a, float(np.log(p[a]))


def greedy_action(params: Params, X, ref: int, mask) -> int:
    return int(np.argmax(forward(params, X, ref, mask)))


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, params: Params, grads: dict, lr: float | None = None) -> Params:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params.tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_tensors(self) -> dict:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict, t: int) -> None:
        for k in self.m:
            self.m[k] = np.array(tensors[f"m/{k}"], dtype=np.float64)
            self.v[k] = np.array(tensors[f"v/{k}"], dtype=np.float64)
        self.t = int(t)


def adam_step(params: Params, grads: dict, optimizer: Adam, lr: float = 1e-4) -> Params:
    return optimizer.step(params, grads, lr)


def clip_gradients(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm > 0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads
