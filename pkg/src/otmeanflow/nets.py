"""Dense MLP for the average-velocity field, with hand-rolled autodiff.

The network maps (x, t, r) -> u(t, r, x) where x is a d-dimensional point and
t, r are scalar times with r <= t.  Both time inputs are sinusoidally embedded
(t directly, plus the step size h = t - r) and concatenated to x.

Three differentiation paths are provided:

* ``forward``      -- plain evaluation,
* ``forward_jvp``  -- forward-mode directional derivative along (dx, dt, dr),
                      used to build the detached regression target,
* ``backward``     -- reverse-mode parameter gradients of the mean squared
                      error against constant targets.

Everything operates on explicit numpy state; no tape, no globals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "silu", "relu")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TimeEmbedding:
    """Sinusoidal embedding of a scalar with geometrically spaced frequencies."""

    dim: int = 32
    min_freq: float = 1.0
    # modest top frequency: the JVP of the embedding scales with the largest
    # frequency, and large values destabilize the self-referential target
    max_freq: float = 16.0
    frequencies: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2 != 0:
            raise ValueError(f"embedding dim must be positive and even, got {self.dim}")
        half = self.dim // 2
        if half == 1:
            freqs = np.array([self.min_freq])
        else:
            freqs = self.min_freq * (self.max_freq / self.min_freq) ** (
                np.arange(half) / (half - 1)
            )
        self.frequencies = freqs

    def embed(self, s: np.ndarray) -> np.ndarray:
        """Embed scalars ``s`` of shape (n,) into shape (n, dim); entries in [-1, 1]."""
        phase = s[:, None] * self.frequencies[None, :]
        return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)

    def embed_with_tangent(self, s: np.ndarray, ds: np.ndarray):
        """Embedding and its derivative along the scalar tangent ``ds``."""
        phase = s[:, None] * self.frequencies[None, :]
        sin, cos = np.sin(phase), np.cos(phase)
        emb = np.concatenate([sin, cos], axis=1)
        dphase = ds[:, None] * self.frequencies[None, :]
        demb = np.concatenate([cos * dphase, -sin * dphase], axis=1)
        return emb, demb


@dataclass
class MlpParams:
    """Weights and biases of the average-velocity MLP.

    ``weights[i]`` has shape (out_i, in_i) with consecutive shapes composing;
    the input is [x, embed(t), embed(t - r)].
    """

    weights: list
    biases: list
    activation: str
    data_dim: int
    time_embed: TimeEmbedding

    @property
    def input_dim(self) -> int:
        return self.data_dim + 2 * self.time_embed.dim

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def validate(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        expected_in = self.input_dim
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[1] != expected_in:
                raise ValueError(
                    f"layer {i}: weight shape {W.shape} does not compose with fan-in {expected_in}"
                )
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weight {W.shape}")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")
            expected_in = W.shape[0]
        if self.weights[-1].shape[0] != self.data_dim:
            raise ValueError("output dim must equal data dim")

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
            data_dim=self.data_dim,
            time_embed=TimeEmbedding(
                self.time_embed.dim, self.time_embed.min_freq, self.time_embed.max_freq
            ),
        )


def init_mlp(
    data_dim: int,
    hidden_width: int = 128,
    hidden_depth: int = 3,
    activation: str = "tanh",
    time_embed_dim: int = 32,
    time_embed_max_freq: float = 16.0,
    rng: np.random.Generator | None = None,
) -> MlpParams:
    """He-style uniform fan-in initialization; zero biases."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = rng if rng is not None else np.random.default_rng()
    embed = TimeEmbedding(time_embed_dim, max_freq=time_embed_max_freq)
    dims = [data_dim + 2 * time_embed_dim] + [hidden_width] * hidden_depth + [data_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation, data_dim, embed)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "silu":
        return z / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {kind!r}")


def _act_and_grad(z: np.ndarray, kind: str):
    if kind == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    if kind == "relu":
        mask = z > 0.0
        return np.where(mask, z, 0.0), mask.astype(z.dtype)
    if kind == "silu":
        sig = 1.0 / (1.0 + np.exp(-z))
        return z * sig, sig * (1.0 + z * (1.0 - sig))
    raise ValueError(f"unknown activation {kind!r}")


def _as_batch(x, t, r, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != d:
        raise ValueError(f"point dim {x.shape[1]} != network data dim {d}")
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
    r = np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy()
    if not (np.isfinite(x).all() and np.isfinite(t).all() and np.isfinite(r).all()):
        raise ValueError("non-finite inputs to the velocity network")
    if np.any(r > t + 1e-12):
        raise ValueError("requires r <= t")
    return x, t, r


def _assemble_input(params: MlpParams, x, t, r):
    emb_t = params.time_embed.embed(t)
    emb_h = params.time_embed.embed(t - r)
    return np.concatenate([x, emb_t, emb_h], axis=1)


def forward(params: MlpParams, x, t, r) -> np.ndarray:
    """Evaluate u(t, r, x) for a batch; t, r may be scalars or per-sample arrays."""
    x, t, r = _as_batch(x, t, r, params.data_dim)
    a = _assemble_input(params, x, t, r)
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        a = z if i == last else _act(z, params.activation)
    return a


def forward_jvp(params: MlpParams, x, t, r, dx, dt, dr):
    """Value and exact directional derivative of u along (dx, dt, dr).

    Returns (value, tangent), both of shape (n, d).  The value component is
    computed by the identical sequence of operations as ``forward``.
    """
    x, t, r = _as_batch(x, t, r, params.data_dim)
    n = x.shape[0]
    dx = np.asarray(dx, dtype=float)
    if dx.ndim == 1:
        dx = dx[None, :]
    if dx.shape != x.shape:
        raise ValueError(f"tangent shape {dx.shape} != point shape {x.shape}")
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (n,)).copy()
    dr = np.broadcast_to(np.asarray(dr, dtype=float), (n,)).copy()
    if not (np.isfinite(dx).all() and np.isfinite(dt).all() and np.isfinite(dr).all()):
        raise ValueError("non-finite tangents")

    emb_t, demb_t = params.time_embed.embed_with_tangent(t, dt)
    emb_h, demb_h = params.time_embed.embed_with_tangent(t - r, dt - dr)
    a = np.concatenate([x, emb_t, emb_h], axis=1)
    da = np.concatenate([dx, demb_t, demb_h], axis=1)
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        dz = da @ W.T
        if i == last:
            a, da = z, dz
        else:
            a, grad = _act_and_grad(z, params.activation)
            da = grad * dz
    return a, da


def backward(params: MlpParams, x, t, r, targets, sample_weights=None):
    """Gradient of mean_i w_i * ||u(t_i, r_i, x_i) - y_i||^2 w.r.t. all parameters.

    Targets are treated as constants (stop-gradient applied by the caller).
    ``sample_weights`` is an optional per-sample weighting hook; default uniform.
    Returns (loss, grad_weights, grad_biases).
    """
    x, t, r = _as_batch(x, t, r, params.data_dim)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape != (n, params.data_dim):
        raise ValueError(f"target shape {y.shape} != ({n}, {params.data_dim})")
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.broadcast_to(np.asarray(sample_weights, dtype=float), (n,)).copy()

    a = _assemble_input(params, x, t, r)
    acts = [a]
    grads_z = []
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        if i == last:
            a = z
        else:
            a, g = _act_and_grad(z, params.activation)
            grads_z.append(g)
        acts.append(a)

    diff = acts[-1] - y
    loss = float(np.mean(w * np.sum(diff * diff, axis=1)))

    delta = (2.0 / n) * w[:, None] * diff
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for i in range(last, -1, -1):
        grad_w[i] = delta.T @ acts[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * grads_z[i - 1]
    return loss, grad_w, grad_b


# ---------------------------------------------------------------------------
# Optimizer and EMA


@dataclass
class AdamState:
    m_w: list
    v_w: list
    m_b: list
    v_b: list
    step: int = 0


def adam_init(params: MlpParams) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(W) for W in params.weights],
        v_w=[np.zeros_like(W) for W in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(
    params: MlpParams,
    grad_w,
    grad_b,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place.  Non-finite gradients abort."""
    for g in grad_w + grad_b:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient; halting instead of corrupting parameters")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for W, g, m, v in zip(params.weights, grad_w, state.m_w, state.v_w):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        W -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    for b, g, m, v in zip(params.biases, grad_b, state.m_b, state.v_b):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        b -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def ema_update(shadow: MlpParams, live: MlpParams, decay: float) -> None:
    """shadow <- decay * shadow + (1 - decay) * live, elementwise, in place."""
    if not 0.0 <= decay < 1.0 + 1e-12:
        raise ValueError(f"decay must be in [0, 1), got {decay}")
    for sW, lW in zip(shadow.weights, live.weights):
        if sW.shape != lW.shape:
            raise ValueError("EMA shape mismatch")
        sW *= decay
        sW += (1.0 - decay) * lW
    for sb, lb in zip(shadow.biases, live.biases):
        if sb.shape != lb.shape:
            raise ValueError("EMA shape mismatch")
        sb *= decay
        sb += (1.0 - decay) * lb


# ---------------------------------------------------------------------------
# Checkpoint I/O


def save_checkpoint(path, params: MlpParams, ema: MlpParams, step: int, extra: dict | None = None):
    """Write parameters + EMA copy + step counter to a versioned .npz file."""
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "activation": params.activation,
        "data_dim": params.data_dim,
        "time_embed_dim": params.time_embed.dim,
        "time_embed_min_freq": params.time_embed.min_freq,
        "time_embed_max_freq": params.time_embed.max_freq,
        "num_layers": len(params.weights),
        "step": step,
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{i}"] = W
        arrays[f"b{i}"] = b
    for i, (W, b) in enumerate(zip(ema.weights, ema.biases)):
        arrays[f"ema_w{i}"] = W
        arrays[f"ema_b{i}"] = b
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Load a checkpoint; returns (params, ema, step, extra)."""
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except Exception as exc:
        raise ValueError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version in {path}")
    embed = TimeEmbedding(
        meta["time_embed_dim"], meta["time_embed_min_freq"], meta["time_embed_max_freq"]
    )
    n_layers = meta["num_layers"]

    def build(prefix):
        ws = [data[f"{prefix}w{i}"] for i in range(n_layers)]
        bs = [data[f"{prefix}b{i}"] for i in range(n_layers)]
        p = MlpParams(ws, bs, meta["activation"], meta["data_dim"], embed)
        p.validate()
        return p

    params = build("")
    ema = build("ema_")
    return params, ema, int(meta["step"]), meta.get("extra", {})
