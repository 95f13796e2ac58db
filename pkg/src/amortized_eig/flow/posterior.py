"""Design-amortized variational posterior: set encoder + conditional flow.

The flow works in whitened coordinates ``z = L_p^{-1} (theta - mu_p)``
(``L_p`` the prior Cholesky factor), with ``log aux`` appended for the
unknown-noise family. Whitening is a fixed affine bijection, so an
identity-initialised flow with an N(0, I) base starts exactly at the prior
for the known-noise Gaussian family and close to it elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .. import rng as rngmod
from ..estimators import PosteriorApprox
from ..models import GlmModel, Latent, encode_outcome, from_unconstrained, to_unconstrained
from ..tensor import Graph, Tensor, ops
from ..tensor.nn import ParamSet
from . import encoder as enc
from . import transforms as tf
from .config import EncoderConfig, FlowConfig

EVAL_CHUNK = 8192


class FlowNumericError(FloatingPointError):
    pass


@dataclass
class FlowParams:
    arrays: ParamSet
    perms: list[np.ndarray]
    encoder: EncoderConfig
    flow: FlowConfig
    latent_dim: int
    input_width: int
    seed: int
    extra: dict = field(default_factory=dict)


def init_flow_params(model: GlmModel, encoder: EncoderConfig, flow: FlowConfig, seed: int) -> FlowParams:
    """Fresh parameters; every coupling starts at the identity and the base at N(0, I)."""
    rng = rngmod.stream(seed, rngmod.INIT)
    arrays = ParamSet()
    width = model.n_coef + model.outcome_width
    enc.init_encoder(arrays, rng, encoder, width)
    ctx = enc.context_width(encoder)
    tf.init_base(arrays, rng, flow, model.latent_dim, ctx)
    perms = tf.init_transforms(arrays, rng, flow, model.latent_dim, ctx)
    return FlowParams(arrays, perms, encoder, flow, model.latent_dim, width, seed)


# ----------------------------------------------------------- coordinates


def to_flow_coords(model: GlmModel, latent: Latent) -> tuple[np.ndarray, np.ndarray]:
    """Whitened unconstrained coordinates and ``log|dz / dlatent|``."""
    u, log_jac = to_unconstrained(model, latent)
    k = model.param_dim
    flat = (u[..., :k] - model.prior_mean).reshape(-1, k).T
    zt = solve_triangular(model.prior_chol, flat, lower=True).T.reshape(u.shape[:-1] + (k,))
    z = np.concatenate([zt, u[..., k:]], axis=-1)
    return z, log_jac - np.sum(np.log(np.diag(model.prior_chol)))


def from_flow_coords(model: GlmModel, z: np.ndarray) -> tuple[Latent, np.ndarray]:
    """Inverse of :func:`to_flow_coords`; also returns ``log|dz / dlatent|``."""
    k = model.param_dim
    theta = model.prior_mean + z[..., :k] @ model.prior_chol.T
    u = np.concatenate([theta, z[..., k:]], axis=-1)
    latent, log_jac = from_unconstrained(model, u)
    return latent, log_jac - np.sum(np.log(np.diag(model.prior_chol)))


def make_units(model: GlmModel, design, y) -> np.ndarray:
    """Stack per-unit rows ``[d_i ; enc(y_i)]`` into (B, S, width)."""
    y = np.asarray(y, float)
    yenc = encode_outcome(model, y)
    design = np.asarray(design, float)
    if design.ndim == 2:
        design = np.broadcast_to(design, yenc.shape[:-2] + design.shape)
    if design.shape[:-1] != yenc.shape[:-1]:
        raise ValueError(f"design {design.shape} and outcome {y.shape} disagree on units")
    return np.concatenate([design, yenc], axis=-1)


# ---------------------------------------------------------------- density


def flow_log_prob(p: dict, fp: FlowParams, context, z) -> Tensor:
    """``log q(z | context)`` for rows of whitened coordinates (B, latent_dim)."""
    x = z if isinstance(z, Tensor) else Tensor(z)
    total = None
    cfg = fp.flow
    for i in reversed(range(cfg.effective_transforms)):
        x, ld = tf.transform_inverse(p, i, cfg, x, context, fp.perms[i])
        if not np.all(np.isfinite(x.data)):
            raise FlowNumericError(f"non-finite value after inverting transform {i}")
        total = ld if total is None else ops.add(total, ld)
    mean, lower, diag = tf.base_params(p, cfg, context, fp.latent_dim)
    logp = tf.base_log_prob(x, mean, lower, diag)
    return logp if total is None else ops.subtract(logp, total)


def flow_sample(p: dict, fp: FlowParams, context, rng, return_base: bool = False):
    """One draw per context row; returns ``(z, log q)`` (and the base draw if asked)."""
    cfg = fp.flow
    mean, lower, diag = tf.base_params(p, cfg, context, fp.latent_dim)
    x, logp, _ = tf.base_sample(mean, lower, diag, rng)
    base = x.data.copy()
    for i in range(cfg.effective_transforms):
        x, ld = tf.transform_forward(p, i, cfg, x, context, fp.perms[i])
        logp = ops.subtract(logp, ld)
    if return_base:
        return x.data, logp.data, base
    return x.data, logp.data


def log_q_tensor(p, fp: FlowParams, model: GlmModel, units, latent: Latent, training=False, rng=None):
    """Differentiable ``log q(latent | units)`` for one latent per unit set."""
    context = enc.encode(p, fp.encoder, units, training=training, rng=rng)
    z, log_jac = to_flow_coords(model, latent)
    return ops.add(flow_log_prob(p, fp, context, z), log_jac)


class AmortizedPosterior(PosteriorApprox):
    """Evaluation-mode wrapper; parameters are read-only here."""

    def __init__(self, model: GlmModel, params: FlowParams):
        if params.latent_dim != model.latent_dim:
            raise ValueError("flow parameters were built for a different model")
        self.model = model
        self.params = params
        self._bound = params.arrays.bind(None)

    def context(self, y, design) -> np.ndarray:
        units = make_units(self.model, design, y)
        out = [
            enc.encode(self._bound, self.params.encoder, units[lo : lo + EVAL_CHUNK]).data
            for lo in range(0, len(units), EVAL_CHUNK)
        ]
        return np.concatenate(out, axis=0)

    def log_prob(self, latent: Latent, y, design) -> np.ndarray:
        ctx = self.context(y, design)
        n, m = latent.batch_shape
        z, log_jac = to_flow_coords(self.model, latent)
        ctx_rep = np.repeat(ctx, m, axis=0)
        zf = z.reshape(n * m, -1)
        out = np.concatenate([
            flow_log_prob(self._bound, self.params, Tensor(ctx_rep[lo : lo + EVAL_CHUNK]),
                          zf[lo : lo + EVAL_CHUNK]).data
            for lo in range(0, n * m, EVAL_CHUNK)
        ])
        return out.reshape(n, m) + log_jac

    def sample_and_log_prob(self, y, design, m, rng):
        ctx = np.repeat(self.context(y, design), m, axis=0)
        zs, lqs = [], []
        for lo in range(0, len(ctx), EVAL_CHUNK):
            z, lq = flow_sample(self._bound, self.params, Tensor(ctx[lo : lo + EVAL_CHUNK]), rng)
            zs.append(z)
            lqs.append(lq)
        z = np.concatenate(zs).reshape(len(y), m, -1)
        latent, log_jac = from_flow_coords(self.model, z)
        return latent, np.concatenate(lqs).reshape(len(y), m) + log_jac

    def sample(self, y, design, m, rng):
        return self.sample_and_log_prob(y, design, m, rng)[0]


def posterior_graph_loss(fp: FlowParams, model: GlmModel, units, latent: Latent, rng) -> tuple[Graph, dict, Tensor]:
    """Record ``-mean log q`` on a fresh graph; returns (graph, bound params, loss)."""
    g = Graph()
    p = fp.arrays.bind(g)
    lq = log_q_tensor(p, fp, model, units, latent, training=True, rng=rng)
    return g, p, ops.negate(ops.mean(lq))
