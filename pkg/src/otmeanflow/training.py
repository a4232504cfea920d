"""Training loops for mean-flow and conditional flow matching.

One training step (mean-flow mode):

1. sample a source batch and a target batch,
2. build the mini-batch coupling and draw one pair per source point,
3. draw (t, r), interpolate x_r = (1 - r) x0 + r x1 with v = x1 - x0,
4. form the detached target u_tgt = v + (t - r) * d/ds u(x_r + s v, t, r + s)|_0
   via a forward-mode JVP of the current network,
5. regress u(t, r, x_r) onto the target and take an Adam step.

The network input sits at the earlier time r -- the same side the sampler
queries, so the one-step generator x0 + u(1, 0, x0) is trained exactly on
source-distributed inputs.  Anchoring at r flips the sign of the derivative
correction relative to anchoring at t: along the trajectory,
d/dr [(t - r) u(x_r, t, r)] = -v gives u = v + (t - r)(v . d_x u + d_r u).

cfm mode skips step 4 and regresses directly on v (rectified flow).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import nets
from .coupling import CouplingSpec, couple, sample_pairs
from .data import DatasetSpec, sample
from .evaluation import generate, w2_squared

TIME_SAMPLER_KINDS = ("uniform", "logit_normal")
TRAIN_MODES = ("meanflow", "cfm")


@dataclass
class TimeSamplerSpec:
    """Base law for the two time draws; r = min, t = max."""

    kind: str = "uniform"
    p_mean: float = -0.6
    p_std: float = 1.6

    def __post_init__(self):
        if self.kind not in TIME_SAMPLER_KINDS:
            raise ValueError(f"unknown time sampler {self.kind!r}")
        if self.p_std <= 0:
            raise ValueError("p_std must be positive")


@dataclass
class TimeSample:
    t: float
    r: float

    def __post_init__(self):
        if not 0.0 <= self.r <= self.t <= 1.0:
            raise ValueError(f"need 0 <= r <= t <= 1, got r={self.r}, t={self.t}")


@dataclass
class RunConfig:
    source: DatasetSpec
    target: DatasetSpec
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    batch_size: int = 256
    iterations: int = 10000
    lr: float = 2e-3
    ema_decay: float = 0.99
    ema_period: int = 16
    time_sampler: TimeSamplerSpec = field(default_factory=TimeSamplerSpec)
    equal_time_fraction: float = 0.75
    mode: str = "meanflow"
    seed: int = 0
    hidden_width: int = 128
    hidden_depth: int = 3
    activation: str = "tanh"
    time_embed_dim: int = 32
    time_embed_max_freq: float = 16.0
    eval_every: int = 1000
    eval_batch: int = 1000
    loss_weighting: str = "uniform"
    adaptive_eps: float = 1e-3
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.loss_weighting not in ("uniform", "adaptive"):
            raise ValueError(f"unknown loss weighting {self.loss_weighting!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.equal_time_fraction <= 1.0:
            raise ValueError("equal_time_fraction must be in [0, 1]")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 0 or self.lr <= 0:
            raise ValueError("bad iterations/lr")
        if self.time_embed_max_freq <= 0:
            raise ValueError("time_embed_max_freq must be positive")
        if not 0.0 <= self.ema_decay < 1.0 or self.ema_period < 1:
            raise ValueError("bad EMA settings")


@dataclass
class TrainState:
    params: nets.MlpParams
    ema: nets.MlpParams
    opt: nets.AdamState
    step: int
    config: RunConfig
    rng_data: np.random.Generator
    rng_coupling: np.random.Generator
    rng_time: np.random.Generator


def interpolate(x0, x1, t):
    """Affine path: x_t = (1 - t) x0 + t x1 and its velocity v_t = x1 - x0."""
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    t = np.asarray(t, float)
    tt = t[..., None] if t.ndim == x0.ndim - 1 else t
    return (1.0 - tt) * x0 + tt * x1, x1 - x0


def _base_draws(spec: TimeSamplerSpec, n, rng):
    if spec.kind == "uniform":
        return rng.random((n, 2))
    z = rng.standard_normal((n, 2))
    return 1.0 / (1.0 + np.exp(-(spec.p_mean + spec.p_std * z)))


def sample_times_batch(spec: TimeSamplerSpec, equal_time_fraction, n, rng):
    """Vectorized draw of n (t, r) pairs.

    Two draws from the base law give r = min, t = max; then with probability
    1 - equal_time_fraction the pair collapses to r = t.
    """
    draws = _base_draws(spec, n, rng)
    r = draws.min(axis=1)
    t = draws.max(axis=1)
    collapse = rng.random(n) >= equal_time_fraction
    r = np.where(collapse, t, r)
    return t, r


def sample_times(spec: TimeSamplerSpec, equal_time_fraction, rng) -> TimeSample:
    t, r = sample_times_batch(spec, equal_time_fraction, 1, rng)
    return TimeSample(t=float(t[0]), r=float(r[0]))


def compute_u_target(params, x_r, t, r, v):
    """Detached regression target v + (t - r) * (v . d_x u + d_r u) at x_r.

    The directional derivative comes from one JVP along (dx, dt, dr) =
    (v, 0, 1); no gradient flows from the result to the parameters.  At
    r = t this is exactly v.
    """
    t = np.asarray(t, float)
    r = np.asarray(r, float)
    _, tangent = nets.forward_jvp(params, x_r, t, r, v, np.zeros_like(t), np.ones_like(r))
    gap = (t - r).reshape(-1, 1) if t.ndim else t - r
    return v + gap * tangent


def init_state(config: RunConfig) -> TrainState:
    streams = np.random.SeedSequence(config.seed).spawn(4)
    rng_init = np.random.default_rng(streams[0])
    params = nets.init_mlp(
        data_dim=2,
        hidden_width=config.hidden_width,
        hidden_depth=config.hidden_depth,
        activation=config.activation,
        time_embed_dim=config.time_embed_dim,
        time_embed_max_freq=config.time_embed_max_freq,
        rng=rng_init,
    )
    return TrainState(
        params=params,
        ema=params.copy(),
        opt=nets.adam_init(params),
        step=0,
        config=config,
        rng_data=np.random.default_rng(streams[1]),
        rng_coupling=np.random.default_rng(streams[2]),
        rng_time=np.random.default_rng(streams[3]),
    )


def train_step(state: TrainState) -> float:
    """One Algorithm-style iteration; mutates state in place, returns the loss."""
    cfg = state.config
    b = cfg.batch_size
    x0 = sample(cfg.source, b, state.rng_data).points
    x1 = sample(cfg.target, b, state.rng_data).points
    plan = couple(x0, x1, cfg.coupling, state.rng_coupling)
    si, ti = sample_pairs(plan, b, state.rng_coupling)
    x0p = x0[si]
    x1p = x1[ti]
    t, r = sample_times_batch(cfg.time_sampler, cfg.equal_time_fraction, b, state.rng_time)
    x_r, v = interpolate(x0p, x1p, r)
    if cfg.mode == "meanflow":
        value, tangent = nets.forward_jvp(
            state.params, x_r, t, r, v, np.zeros_like(t), np.ones_like(r)
        )
        target = v + (t - r)[:, None] * tangent
    else:
        value = nets.forward(state.params, x_r, t, r)
        target = v
    weights = None
    if cfg.loss_weighting == "adaptive":
        # downweight samples with large residuals; the weight itself carries
        # no gradient (computed from the current prediction, then frozen)
        err2 = np.sum((value - target) ** 2, axis=1)
        weights = 1.0 / (err2 + cfg.adaptive_eps)
    loss, gw, gb = nets.backward(state.params, x_r, t, r, target, sample_weights=weights)
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss at step {state.step}: "
            f"|x_r|max={np.abs(x_r).max():.3g}, |target|max={np.abs(target).max():.3g}"
        )
    lr = cfg.lr
    if cfg.lr_schedule == "cosine" and cfg.iterations > 0:
        frac = min(state.step / cfg.iterations, 1.0)
        lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))
    nets.adam_step(state.params, gw, gb, state.opt, lr)
    state.step += 1
    if state.step % cfg.ema_period == 0:
        nets.ema_update(state.ema, state.params, cfg.ema_decay)
    return float(loss)


def _eval_w2(state: TrainState, nfes, n, rng):
    cfg = state.config
    x0 = sample(cfg.source, n, rng).points
    x1 = sample(cfg.target, n, rng).points
    return {nfe: w2_squared(generate(state.ema, x0, nfe), x1) for nfe in nfes}


METRICS_HEADER = ("step", "loss", "w2_nfe1", "w2_nfe2", "ms_per_step")


def train(config: RunConfig, metrics_path=None, eval_nfes=(1, 2)):
    """Run the configured iterations; returns (state, metrics rows).

    Every eval_every steps (and at the end) the EMA model is scored with
    squared Wasserstein at the requested NFEs on fresh held-out batches; rows
    of (step, loss, W2 per NFE, mean wall-clock ms/step) accumulate in the
    metrics log.
    """
    state = init_state(config)
    rng_eval = np.random.default_rng(np.random.SeedSequence(config.seed + 1).spawn(1)[0])
    rows = []
    writer = fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
    try:
        window_start = time.perf_counter()
        window_steps = 0
        loss = float("nan")
        for it in range(config.iterations):
            loss = train_step(state)
            window_steps += 1
            last = it == config.iterations - 1
            if config.eval_every and (state.step % config.eval_every == 0 or last):
                ms = (time.perf_counter() - window_start) / max(window_steps, 1) * 1000.0
                w2 = _eval_w2(state, eval_nfes, config.eval_batch, rng_eval)
                row = (state.step, loss, *(w2[nfe] for nfe in eval_nfes), ms)
                rows.append(row)
                if writer is not None:
                    writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
                    fh.flush()
                window_start = time.perf_counter()
                window_steps = 0
    finally:
        if fh is not None:
            fh.close()
    return state, rows
