"""Fit the amortized posterior (and the per-design linear baseline) by cross-entropy.

Each step draws a batch of random designs, simulates ``N`` joint
``(theta, y)`` samples per design and minimises ``-mean log q(theta | y, d)``
with AdamW. Every random draw comes from a stream addressed by
``(seed, step, design)`` so runs are reproducible bit for bit.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .flow import baseline as bl
from .flow.checkpoint import save_checkpoint
from .flow.config import EncoderConfig, FlowConfig
from .flow.posterior import FlowNumericError, FlowParams, init_flow_params, log_q_tensor, make_units
from .models import GlmModel, Latent, sample_designs, sample_prior, simulate
from .tensor import Graph, ops
from .tensor.nn import ParamSet

log = logging.getLogger(__name__)

DROPOUT = 6  # stream tag for dropout masks


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    designs_per_step: int = 10
    mc_samples: int = 25
    learning_rate: float = 5e-4
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    eps: float = 1e-8
    grad_clip: float = 10.0
    n_units: int = 5
    intercept: bool = False
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if min(self.steps, self.designs_per_step, self.mc_samples, self.n_units) < 1:
            raise ValueError("steps, designs_per_step, mc_samples and n_units must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ValueError("learning_rate and grad_clip must be > 0, weight_decay >= 0")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError("betas must be a pair in [0, 1)")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class LossTrace:
    losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    clipped: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)

    def window_mean(self, last: int = 50, first: bool = False) -> float:
        vals = self.losses[:last] if first else self.losses[-last:]
        return float(np.mean(vals))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "loss", "seconds"])
            for i, (l, s) in enumerate(zip(self.losses, self.seconds)):
                w.writerow([i, f"{l:.17g}", f"{s:.6f}"])


class TrainingAborted(FloatingPointError):
    pass


# -------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params: ParamSet, grads: dict, state: AdamState, lr: float, betas=(0.9, 0.999),
               weight_decay: float = 0.0, eps: float = 1e-8) -> None:
    """One in-place AdamW update; ``state.step`` counts completed updates.

    Decay is decoupled: ``w -= lr * wd * w`` is applied directly and never
    enters the moment estimates.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            w -= lr * weight_decay * w
        w -= lr * update


def clip_gradients(grads: dict, max_norm: float) -> tuple[float, bool]:
    """Scale ``grads`` in place to global norm ``max_norm``; returns (norm before, clipped?)."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(norm):
        raise TrainingAborted("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return norm, True
    return norm, False


# ------------------------------------------------------------------- loss


def joint_samples(model: GlmModel, designs: np.ndarray, n: int, seed: int, step: int):
    """Prior draws and simulated outcomes for each design; stream ``(seed, TRAIN, step, i)``."""
    latents, units = [], []
    for i, d in enumerate(designs):
        r = rngmod.stream(seed, rngmod.TRAIN, step, i)
        lat = sample_prior(model, n, r)
        y = simulate(model, d, lat, r)
        latents.append(lat)
        units.append(make_units(model, d, y))
    theta = np.concatenate([l.theta for l in latents])
    aux = None if latents[0].aux is None else np.concatenate([l.aux for l in latents])
    return Latent(theta, aux), np.concatenate(units)


def posterior_loss(fp: FlowParams, model: GlmModel, designs, n: int, seed: int, step: int = 0,
                   training: bool = True):
    """``-mean log q`` over ``n`` joint samples per design, recorded on a fresh graph.

    Returns ``(graph, bound parameters, scalar loss)``. All designs draw the
    same ``n`` so the pooled mean equals the batch average of per-design means.
    """
    designs = np.asarray(designs, float)
    if designs.ndim != 3 or len(designs) == 0:
        raise ValueError("design batch must be a non-empty (B, N_E, n_coef) array")
    latent, units = joint_samples(model, designs, n, seed, step)
    g = Graph()
    p = fp.arrays.bind(g)
    drop_rng = rngmod.stream(seed, DROPOUT, step)
    try:
        lq = log_q_tensor(p, fp, model, units, latent, training=training, rng=drop_rng)
    except FlowNumericError as exc:
        raise TrainingAborted(f"step {step}: {exc}") from exc
    bad = np.flatnonzero(~np.isfinite(lq.data))
    if bad.size:
        i = int(bad[0])
        raise TrainingAborted(f"step {step}: non-finite log q at design {i // n}, sample {i % n}")
    return g, p, ops.negate(ops.mean(lq))


# ------------------------------------------------------------------ loops


def _step_designs(cfg: TrainConfig, model: GlmModel, step: int) -> np.ndarray:
    r = rngmod.stream(cfg.seed, rngmod.DESIGNS, step)
    return sample_designs(cfg.designs_per_step, cfg.n_units, model.n_predictors, r, cfg.intercept)


def _apply(params: ParamSet, g: Graph, bound: dict, loss, state: AdamState, cfg: TrainConfig,
           trace: LossTrace, t0: float, step: int) -> None:
    g.backward(loss)
    grads = {k: g.grad(t) for k, t in bound.items()}
    norm, clipped = clip_gradients(grads, cfg.grad_clip)
    if clipped:
        log.info("step %d: gradient norm %.3g clipped to %g", step, norm, cfg.grad_clip)
    adamw_step(params, grads, state, cfg.learning_rate, cfg.betas, cfg.weight_decay, cfg.eps)
    trace.losses.append(float(loss.data))
    trace.seconds.append(time.perf_counter() - t0)
    trace.clipped.append(int(clipped))


def train(model: GlmModel, encoder: EncoderConfig, flow: FlowConfig, cfg: TrainConfig,
          checkpoint: str | Path | None = None, init: FlowParams | None = None,
          progress=None) -> tuple[FlowParams, LossTrace]:
    """Amortized training over freshly sampled designs.

    On an aborted step the last good parameters are written to ``checkpoint``
    (when given) before the error propagates.
    """
    fp = init if init is not None else init_flow_params(model, encoder, flow, cfg.seed)
    fp.extra.setdefault("train", cfg.to_dict())
    state = AdamState()
    trace = LossTrace()
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        designs = _step_designs(cfg, model, step)
        try:
            g, bound, loss = posterior_loss(fp, model, designs, cfg.mc_samples, cfg.seed, step)
            _apply(fp.arrays, g, bound, loss, state, cfg, trace, t0, step)
        except TrainingAborted:
            if checkpoint is not None:
                save_checkpoint(checkpoint, fp, {"aborted_at_step": step})
            raise
        if cfg.checkpoint_every and checkpoint is not None and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint, fp, {"steps_done": step + 1})
        if progress is not None:
            progress(step, trace.losses[-1])
    if checkpoint is not None:
        save_checkpoint(checkpoint, fp, {"steps_done": cfg.steps})
    return fp, trace


def train_baseline(model: GlmModel, design, cfg: TrainConfig) -> tuple[bl.BaselinePosterior, ParamSet, LossTrace]:
    """Fit ``q = N(A y, Sigma)`` on one fixed design; ``mc_samples`` joint draws per step."""
    design = np.asarray(design, float)
    params = bl.init_baseline(model, design.shape[0])
    state = AdamState()
    trace = LossTrace()
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        r = rngmod.stream(cfg.seed, rngmod.TRAIN, step, 0)
        lat = sample_prior(model, cfg.mc_samples, r)
        y = simulate(model, design, lat, r)
        g = Graph()
        bound = params.bind(g)
        lq = bl.baseline_log_prob_tensor(bound, y, lat.theta)
        if not np.all(np.isfinite(lq.data)):
            raise TrainingAborted(f"step {step}: non-finite baseline log q")
        _apply(params, g, bound, ops.negate(ops.mean(lq)), state, cfg, trace, t0, step)
    return bl.BaselinePosterior.from_params(params), params, trace
