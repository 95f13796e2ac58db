"""Conditional base distribution and coupling transforms.

Directions follow sampling: ``forward`` maps base draws towards latents and
returns ``log|det J|`` of that map; ``inverse`` maps latents back and also
returns the *forward* log-determinant at the recovered point, so density
evaluation subtracts it.
"""
from __future__ import annotations

import math

import numpy as np

from ..tensor import Tensor, ops
from ..tensor.nn import ParamSet, init_residual_net, residual_net
from .config import FlowConfig

LOG_2PI = math.log(2.0 * math.pi)
DIAG_FLOOR = 1e-4
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3


# ------------------------------------------------------------------- base


def _tril_index(dim: int) -> np.ndarray:
    """Map the packed vector ``[0, diag(dim), strict-lower(row-major)]`` onto a dim x dim grid."""
    index = np.zeros((dim, dim), dtype=np.intp)
    k = 1 + dim
    for i in range(dim):
        index[i, i] = 1 + i
        for j in range(i):
            index[i, j] = k
            k += 1
    return index.reshape(-1)


def n_base_outputs(dim: int) -> int:
    return dim + dim + dim * (dim - 1) // 2


def init_base(params: ParamSet, rng, cfg: FlowConfig, dim: int, ctx_width: int) -> None:
    init_residual_net(params, rng, "base", ctx_width, cfg.base_net_width, n_base_outputs(dim),
                      cfg.base_net_blocks, out_scale=0.0)
    # softplus(b) + floor == 1 on the diagonal: the base starts at N(0, I)
    params["base.out.b"][dim : 2 * dim] = math.log(math.expm1(1.0 - DIAG_FLOOR))


def base_params(p, cfg: FlowConfig, context, dim: int):
    """Mean (B, dim) and lower-triangular scale factor (B, dim, dim)."""
    raw = residual_net(p, "base", context, cfg.base_net_blocks)
    b = raw.shape[0]
    mean = raw[:, :dim]
    diag = ops.softplus(raw[:, dim : 2 * dim]) + DIAG_FLOOR
    packed = ops.concatenate([Tensor(np.zeros((b, 1))), diag, raw[:, 2 * dim :]], axis=-1)
    lower = ops.reshape(ops.gather(packed, _tril_index(dim)), (b, dim, dim))
    return mean, lower, diag


def base_log_prob(x, mean, lower, diag):
    z = ops.tri_solve(lower, ops.subtract(x, mean))
    dim = z.shape[-1]
    quad = ops.sum(ops.square(z), axis=-1)
    logdet = ops.sum(ops.log(diag), axis=-1)
    return ops.subtract(ops.multiply(-0.5, quad), logdet) - 0.5 * dim * LOG_2PI


def base_sample(mean, lower, diag, rng):
    eps = rng.standard_normal(mean.shape)
    x = ops.add(mean, ops.reshape(ops.matmul(lower, Tensor(eps[..., None])), mean.shape))
    dim = mean.shape[-1]
    logp = -0.5 * np.sum(eps * eps, axis=-1) - 0.5 * dim * LOG_2PI
    logp = ops.subtract(Tensor(logp), ops.sum(ops.log(diag), axis=-1))
    return x, logp, eps


# --------------------------------------------------------------- coupling


def coupling_split(dim: int, layer: int) -> tuple[np.ndarray, np.ndarray]:
    """(transformed, conditioning) index lists; halves alternate between layers."""
    n_tr = (dim + 1) // 2
    idx = np.arange(dim)
    if layer % 2 == 0:
        return idx[:n_tr], idx[n_tr:]
    return idx[dim - n_tr :], idx[: dim - n_tr]


def conditioner_outputs(cfg: FlowConfig, n_tr: int) -> int:
    if cfg.transform_kind == "affine-coupling":
        return 2 * n_tr
    return n_tr * (3 * cfg.spline_bins - 1)


def init_transforms(params: ParamSet, rng, cfg: FlowConfig, dim: int, ctx_width: int) -> list[np.ndarray]:
    perms = []
    for i in range(cfg.effective_transforms):
        tr, cond = coupling_split(dim, i)
        init_residual_net(params, rng, f"t{i}", len(cond) + ctx_width, cfg.coupling_net_width,
                          conditioner_outputs(cfg, len(tr)), cfg.coupling_net_blocks, out_scale=0.0)
        perms.append(rng.permutation(dim))
    return perms


def _conditioner(p, i, cfg, x_cond, context):
    inp = context if x_cond.shape[-1] == 0 else ops.concatenate([x_cond, context], axis=-1)
    return residual_net(p, f"t{i}", inp, cfg.coupling_net_blocks)


def _assemble(dim, tr, cond, x_tr, x_cond):
    order = np.argsort(np.concatenate([cond, tr]))
    parts = [x_cond, x_tr] if len(cond) else [x_tr]
    joined = ops.concatenate(parts, axis=-1) if len(parts) > 1 else parts[0]
    return ops.gather(joined, order)


def _affine_params(out, n_tr, bound):
    shift = out[:, :n_tr]
    log_scale = ops.multiply(bound, ops.tanh(ops.multiply(1.0 / bound, out[:, n_tr:])))
    return shift, log_scale


def transform_forward(p, i, cfg: FlowConfig, x, context, perm):
    dim = x.shape[-1]
    tr, cond = coupling_split(dim, i)
    x_tr, x_cond = ops.gather(x, tr), ops.gather(x, cond)
    out = _conditioner(p, i, cfg, x_cond, context)
    if cfg.transform_kind == "affine-coupling":
        shift, log_scale = _affine_params(out, len(tr), cfg.scale_bound)
        y_tr = ops.add(ops.multiply(x_tr, ops.exp(log_scale)), shift)
        logdet = ops.sum(log_scale, axis=-1)
    else:
        y_tr, logdet = rq_spline(x_tr, _spline_raw(out, len(tr), cfg), cfg, inverse=False)
    y = _assemble(dim, tr, cond, y_tr, x_cond)
    return ops.gather(y, perm), logdet


def transform_inverse(p, i, cfg: FlowConfig, y, context, perm):
    dim = y.shape[-1]
    y = ops.gather(y, np.argsort(perm))
    tr, cond = coupling_split(dim, i)
    y_tr, x_cond = ops.gather(y, tr), ops.gather(y, cond)
    out = _conditioner(p, i, cfg, x_cond, context)
    if cfg.transform_kind == "affine-coupling":
        shift, log_scale = _affine_params(out, len(tr), cfg.scale_bound)
        x_tr = ops.multiply(ops.subtract(y_tr, shift), ops.exp(ops.negate(log_scale)))
        logdet = ops.sum(log_scale, axis=-1)
    else:
        x_tr, logdet = rq_spline(y_tr, _spline_raw(out, len(tr), cfg), cfg, inverse=True)
    return _assemble(dim, tr, cond, x_tr, x_cond), logdet


# ----------------------------------------------------------------- spline


def _spline_raw(out, n_tr, cfg):
    return ops.reshape(out, (out.shape[0], n_tr, 3 * cfg.spline_bins - 1))


def _pick(t, idx):
    return ops.reshape(ops.take_along(t, idx[..., None]), idx.shape)


def _knots(raw_part, nb, span, lo, min_size):
    sizes = ops.multiply(span, ops.add(min_size, ops.multiply(1.0 - min_size * nb, ops.softmax(raw_part))))
    zeros = Tensor(np.zeros(sizes.shape[:-1] + (1,)))
    edges = ops.add(ops.concatenate([zeros, ops.cumsum(sizes)], axis=-1), lo)
    return sizes, edges


def rq_spline(x, raw, cfg: FlowConfig, inverse: bool):
    """Monotone rational-quadratic spline on [left, right] with identity tails.

    ``raw`` has shape (B, n, 3 * bins - 1): unnormalised widths, heights and
    interior knot derivatives. Zero raw parameters give the identity map.
    Returns the mapped values and the summed forward log-derivative.
    """
    nb = cfg.spline_bins
    lo, hi = cfg.spline_left, cfg.spline_right
    span = hi - lo
    widths, xk = _knots(raw[..., :nb], nb, span, lo, MIN_BIN_WIDTH)
    heights, yk = _knots(raw[..., nb : 2 * nb], nb, span, lo, MIN_BIN_HEIGHT)
    interior = ops.add(MIN_DERIVATIVE, ops.multiply((1.0 - MIN_DERIVATIVE) / math.log(2.0),
                                                    ops.softplus(raw[..., 2 * nb :])))
    ones = Tensor(np.ones(interior.shape[:-1] + (1,)))
    derivs = ops.concatenate([ones, interior, ones], axis=-1)

    inside = ((x.data >= lo) & (x.data <= hi)).astype(float)
    v = ops.add(ops.multiply(x, inside), (1.0 - inside) * (0.5 * (lo + hi)))
    edges = (yk if inverse else xk).data
    idx = np.sum(v.data[..., None] >= edges[..., 1:nb], axis=-1)

    x_k, w_k = _pick(xk, idx), _pick(widths, idx)
    y_k, h_k = _pick(yk, idx), _pick(heights, idx)
    d_k, d_k1 = _pick(derivs, idx), _pick(derivs, idx + 1)
    s = ops.divide(h_k, w_k)
    curv = ops.subtract(ops.add(d_k, d_k1), ops.multiply(2.0, s))

    if inverse:
        dy = ops.subtract(v, y_k)
        a = ops.add(ops.multiply(h_k, ops.subtract(s, d_k)), ops.multiply(dy, curv))
        b = ops.subtract(ops.multiply(h_k, d_k), ops.multiply(dy, curv))
        c = ops.negate(ops.multiply(s, dy))
        disc = ops.relu(ops.subtract(ops.square(b), ops.multiply(4.0, ops.multiply(a, c))))
        xi = ops.divide(ops.multiply(2.0, c), ops.subtract(ops.negate(b), ops.sqrt(disc)))
        mapped = ops.add(ops.multiply(xi, w_k), x_k)
    else:
        xi = ops.divide(ops.subtract(v, x_k), w_k)
    xi1 = ops.multiply(xi, ops.subtract(1.0, xi))
    denom = ops.add(s, ops.multiply(curv, xi1))
    if not inverse:
        num = ops.multiply(h_k, ops.add(ops.multiply(s, ops.square(xi)), ops.multiply(d_k, xi1)))
        mapped = ops.add(y_k, ops.divide(num, denom))
    dnum = ops.add(ops.add(ops.multiply(d_k1, ops.square(xi)), ops.multiply(ops.multiply(2.0, s), xi1)),
                   ops.multiply(d_k, ops.square(ops.subtract(1.0, xi))))
    logderiv = ops.subtract(ops.add(ops.multiply(2.0, ops.log(s)), ops.log(dnum)),
                            ops.multiply(2.0, ops.log(denom)))
    out = ops.add(ops.multiply(mapped, inside), ops.multiply(x, 1.0 - inside))
    return out, ops.sum(ops.multiply(logderiv, inside), axis=-1)
