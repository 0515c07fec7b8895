"""Three attention mechanisms over C x H x W feature maps.

* non-local baseline: every position attends to all N = H*W positions
  through an N x N softmax map.
* spatial pool attention (SPA): keys and values are pyramid-pooled to T
  anchors, so the map is T x N and cost drops by N/T; a scalar gate
  (initialized to 0) scales the aggregated context before the residual.
* channel pool attention (CPA): a C x C channel affinity is rebuilt from
  the max-minus-similarity difference (plain or squared) and reweights
  channels through a second zero-initialized gate.

Forward and backward are pure; backward recomputes the forward stages so
both always see identical values. The analytic reverse-mode derivations
are validated against finite differences (see gradcheck).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import instrument, ops
from .errors import ConfigurationError, DimensionError
from .pooling import PyramidSpec, anchor_count, pyramid_pool, pyramid_pool_backward
from .rng import Rng


@dataclass(frozen=True)
class ProjectionWeights:
    """Bias-free 1x1 projections: queries/keys to chat channels, values back to C."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        if self.w_q.ndim != 2 or self.w_k.ndim != 2 or self.w_v.ndim != 2:
            raise DimensionError("projection weights must be rank-2 matrices")
        if self.w_q.shape != self.w_k.shape:
            raise DimensionError(f"w_q {self.w_q.shape} and w_k {self.w_k.shape} must match")
        c = self.w_q.shape[1]
        if self.w_v.shape != (c, c):
            raise DimensionError(f"w_v must be {c}x{c} to preserve channels for the residual, "
                                 f"got {self.w_v.shape}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[1]

    @property
    def reduced(self) -> int:
        return self.w_q.shape[0]


def init_projection(rng: Rng, channels: int, reduced: int | None = None,
                    dtype: np.dtype = ops.F64) -> ProjectionWeights:
    reduced = channels if reduced is None else reduced
    return ProjectionWeights(
        w_q=ops.init_weight(rng, (reduced, channels), channels, dtype),
        w_k=ops.init_weight(rng, (reduced, channels), channels, dtype),
        w_v=ops.init_weight(rng, (channels, channels), channels, dtype),
    )


class SpaMode(Enum):
    ONLY_ODD = "only-odd"
    ONLY_EVEN = "only-even"
    MIXED = "mixed"


class CpaMode(Enum):
    SUBTRACT = "subtract"
    SQUARE = "square"


@dataclass
class SpaModule:
    """Spatial pool attention configuration; `lam` is the gate, starting at 0."""

    proj: ProjectionWeights
    mode: SpaMode
    k_spec: PyramidSpec
    v_spec: PyramidSpec
    lam: float = 0.0

    def __post_init__(self):
        if anchor_count(self.k_spec) != anchor_count(self.v_spec):
            raise ConfigurationError(
                f"key/value pyramids must agree on anchor count: "
                f"{self.k_spec.sizes} gives {anchor_count(self.k_spec)}, "
                f"{self.v_spec.sizes} gives {anchor_count(self.v_spec)}")


def spa_module(proj: ProjectionWeights, mode: SpaMode, odd_spec: PyramidSpec | None = None,
               even_spec: PyramidSpec | None = None, lam: float = 0.0) -> SpaModule:
    """Assemble an SpaModule: mixed mode pools keys on the even pyramid, values on the odd."""
    if mode is SpaMode.ONLY_ODD:
        if odd_spec is None:
            raise ConfigurationError("only-odd mode needs an odd pyramid spec")
        return SpaModule(proj, mode, odd_spec, odd_spec, lam)
    if mode is SpaMode.ONLY_EVEN:
        if even_spec is None:
            raise ConfigurationError("only-even mode needs an even pyramid spec")
        return SpaModule(proj, mode, even_spec, even_spec, lam)
    if odd_spec is None or even_spec is None:
        raise ConfigurationError("mixed mode needs both pyramid specs")
    return SpaModule(proj, mode, even_spec, odd_spec, lam)


@dataclass
class CpaModule:
    """Channel pool attention configuration; proj=None is the projection-free variant."""

    proj: ProjectionWeights | None
    mode: CpaMode
    mu: float = 0.0

    def __post_init__(self):
        if self.proj is not None and self.proj.reduced != self.proj.channels:
            raise ConfigurationError(
                f"channel attention needs square projections (affinity is CxC), "
                f"got {self.proj.reduced}x{self.proj.channels}")


@dataclass
class NonLocalGrads:
    x: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    lam: float


@dataclass
class SpaGrads:
    x: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    lam: float


@dataclass
class CpaGrads:
    x: np.ndarray
    w_q: np.ndarray | None
    w_k: np.ndarray | None
    w_v: np.ndarray | None
    mu: float


def _flatten(x: np.ndarray) -> tuple[np.ndarray, int, int, int]:
    if x.ndim != 3:
        raise DimensionError(f"attention input must be CxHxW, got shape {x.shape}")
    c, h, w = x.shape
    return x.reshape(c, h * w), c, h, w


def _project(w: np.ndarray, x_flat: np.ndarray) -> np.ndarray:
    out = ops.matmul(w, x_flat)
    instrument.add("proj", 2 * w.shape[0] * w.shape[1] * x_flat.shape[1])
    return out


def _softmax_cols(a: np.ndarray) -> np.ndarray:
    shifted = a - a.max(axis=0, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=0, keepdims=True)
    return shifted


def _softmax_cols_backward(s: np.ndarray, grad: np.ndarray) -> np.ndarray:
    inner = (grad * s).sum(axis=0, keepdims=True)
    return s * (grad - inner)


# --- non-local baseline -------------------------------------------------

def _nonlocal_stages(x: np.ndarray, proj: ProjectionWeights):
    xf, c, h, w = _flatten(x)
    if proj.channels != c:
        raise DimensionError(f"projection expects {proj.channels} channels, input has {c}")
    alpha = _project(proj.w_q, xf)
    beta = _project(proj.w_k, xf)
    gamma = _project(proj.w_v, xf)
    logits = ops.matmul(ops.transpose2d(alpha), beta)    # N x N, row j = position j's queries
    instrument.add("map", 2 * proj.reduced * logits.size)
    attn = ops.softmax_rows(logits)
    instrument.add("softmax", 5 * attn.size)
    agg = ops.transpose2d(ops.matmul(attn, ops.transpose2d(gamma)))  # C x N
    instrument.add("agg", 2 * c * attn.size)
    return xf, (c, h, w), alpha, beta, gamma, attn, agg


def nonlocal_forward(x: np.ndarray, proj: ProjectionWeights,
                     lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Full self-attention baseline; returns the gated-residual output and the N x N map."""
    xf, (c, h, w), _, _, _, attn, agg = _nonlocal_stages(x, proj)
    out = ops.add(ops.scale(agg, lam), xf)
    return out.reshape(c, h, w), attn


def nonlocal_backward(x: np.ndarray, proj: ProjectionWeights, lam: float,
                      grad_out: np.ndarray) -> NonLocalGrads:
    xf, (c, h, w), alpha, beta, gamma, attn, agg = _nonlocal_stages(x, proj)
    g = grad_out.reshape(c, h * w)
    d_lam = float(np.sum(g * agg))
    d_agg = ops.scale(g, lam)
    d_attn = ops.matmul(ops.transpose2d(d_agg), gamma)                   # N x N
    d_gamma = ops.matmul(d_agg, attn)                                    # C x N
    d_logits = ops.softmax_rows_backward(attn, d_attn)
    d_alpha = ops.matmul(beta, ops.transpose2d(d_logits))                # chat x N
    d_beta = ops.matmul(alpha, d_logits)                                 # chat x N
    d_wq = ops.matmul(d_alpha, ops.transpose2d(xf))
    d_wk = ops.matmul(d_beta, ops.transpose2d(xf))
    d_wv = ops.matmul(d_gamma, ops.transpose2d(xf))
    d_x = (g + ops.matmul(ops.transpose2d(proj.w_q), d_alpha)
           + ops.matmul(ops.transpose2d(proj.w_k), d_beta)
           + ops.matmul(ops.transpose2d(proj.w_v), d_gamma))
    return NonLocalGrads(d_x.reshape(c, h, w), d_wq, d_wk, d_wv, d_lam)


# --- spatial pool attention ----------------------------------------------

def _spa_stages(x: np.ndarray, m: SpaModule):
    xf, c, h, w = _flatten(x)
    if m.proj.channels != c:
        raise DimensionError(f"projection expects {m.proj.channels} channels, input has {c}")
    q = _project(m.proj.w_q, xf)
    k_map = _project(m.proj.w_k, xf).reshape(m.proj.reduced, h, w)
    v_map = _project(m.proj.w_v, xf).reshape(c, h, w)
    k_pool = pyramid_pool(k_map, m.k_spec)               # chat x T
    v_pool = pyramid_pool(v_map, m.v_spec)               # C x T
    logits = ops.matmul(ops.transpose2d(k_pool), q)      # T x N
    instrument.add("map", 2 * m.proj.reduced * logits.size)
    attn = _softmax_cols(logits)                         # anchor weights sum to 1 per position
    instrument.add("softmax", 5 * attn.size)
    agg = ops.matmul(v_pool, attn)                       # C x N
    instrument.add("agg", 2 * c * attn.size)
    return xf, (c, h, w), q, k_pool, v_pool, attn, agg


def spa_forward(x: np.ndarray, m: SpaModule) -> tuple[np.ndarray, np.ndarray]:
    """Pyramid-anchored attention; returns the output and the T x N anchor map."""
    xf, (c, h, w), _, _, _, attn, agg = _spa_stages(x, m)
    out = ops.add(ops.scale(agg, m.lam), xf)
    return out.reshape(c, h, w), attn


def spa_backward(x: np.ndarray, m: SpaModule, grad_out: np.ndarray) -> SpaGrads:
    xf, (c, h, w), q, k_pool, v_pool, attn, agg = _spa_stages(x, m)
    g = grad_out.reshape(c, h * w)
    d_lam = float(np.sum(g * agg))
    d_agg = ops.scale(g, m.lam)
    d_vpool = ops.matmul(d_agg, ops.transpose2d(attn))   # C x T
    d_attn = ops.matmul(ops.transpose2d(v_pool), d_agg)  # T x N
    d_logits = _softmax_cols_backward(attn, d_attn)
    d_kpool = ops.matmul(q, ops.transpose2d(d_logits))   # chat x T
    d_q = ops.matmul(k_pool, d_logits)                   # chat x N
    d_kmap = pyramid_pool_backward(d_kpool, m.k_spec, h, w).reshape(m.proj.reduced, h * w)
    d_vmap = pyramid_pool_backward(d_vpool, m.v_spec, h, w).reshape(c, h * w)
    d_wq = ops.matmul(d_q, ops.transpose2d(xf))
    d_wk = ops.matmul(d_kmap, ops.transpose2d(xf))
    d_wv = ops.matmul(d_vmap, ops.transpose2d(xf))
    d_x = (g + ops.matmul(ops.transpose2d(m.proj.w_q), d_q)
           + ops.matmul(ops.transpose2d(m.proj.w_k), d_kmap)
           + ops.matmul(ops.transpose2d(m.proj.w_v), d_vmap))
    return SpaGrads(d_x.reshape(c, h, w), d_wq, d_wk, d_wv, d_lam)


# --- channel pool attention ----------------------------------------------

def _cpa_stages(x: np.ndarray, m: CpaModule):
    xf, c, h, w = _flatten(x)
    if m.proj is not None and m.proj.channels != c:
        raise DimensionError(f"projection expects {m.proj.channels} channels, input has {c}")
    if m.proj is None:
        q = k = v = xf
    else:
        q = _project(m.proj.w_q, xf)
        k = _project(m.proj.w_k, xf)
        v = _project(m.proj.w_v, xf)
    d = ops.matmul(q, ops.transpose2d(k))                # C x C channel similarity
    instrument.add("map", 2 * q.shape[1] * d.size)
    diff = ops.max_over_rows(d) - d                      # column max broadcast over rows, >= 0
    instrument.add("maxdiff", 2 * d.size)
    gated = diff * diff if m.mode is CpaMode.SQUARE else diff
    attn = ops.softmax_rows(gated)
    instrument.add("softmax", 5 * attn.size)
    agg = ops.matmul(attn, v)                            # C x N
    instrument.add("agg", 2 * v.shape[1] * attn.size)
    return xf, (c, h, w), q, k, v, d, diff, attn, agg


def cpa_forward(x: np.ndarray, m: CpaModule) -> tuple[np.ndarray, np.ndarray]:
    """Channel reweighting through the max-difference affinity; returns output and C x C map."""
    xf, (c, h, w), _, _, _, _, _, attn, agg = _cpa_stages(x, m)
    out = ops.add(ops.scale(agg, m.mu), xf)
    return out.reshape(c, h, w), attn


def cpa_backward(x: np.ndarray, m: CpaModule, grad_out: np.ndarray) -> CpaGrads:
    xf, (c, h, w), q, k, v, d, diff, attn, agg = _cpa_stages(x, m)
    g = grad_out.reshape(c, h * w)
    d_mu = float(np.sum(g * agg))
    d_agg = ops.scale(g, m.mu)
    d_attn = ops.matmul(d_agg, ops.transpose2d(v))       # C x C
    d_v = ops.matmul(ops.transpose2d(attn), d_agg)       # C x N
    d_gated = ops.softmax_rows_backward(attn, d_attn)
    d_diff = 2.0 * diff * d_gated if m.mode is CpaMode.SQUARE else d_gated
    d_d = -d_diff
    # The broadcast column max routes its gradient to the (first) argmax row per column.
    argmax_rows = np.argmax(d, axis=0)
    d_d[argmax_rows, np.arange(d.shape[1])] += d_diff.sum(axis=0)
    d_q = ops.matmul(d_d, k)                             # C x N
    d_k = ops.matmul(ops.transpose2d(d_d), q)            # C x N
    if m.proj is None:
        d_x = g + d_q + d_k + d_v
        return CpaGrads(d_x.reshape(c, h, w), None, None, None, d_mu)
    d_wq = ops.matmul(d_q, ops.transpose2d(xf))
    d_wk = ops.matmul(d_k, ops.transpose2d(xf))
    d_wv = ops.matmul(d_v, ops.transpose2d(xf))
    d_x = (g + ops.matmul(ops.transpose2d(m.proj.w_q), d_q)
           + ops.matmul(ops.transpose2d(m.proj.w_k), d_k)
           + ops.matmul(ops.transpose2d(m.proj.w_v), d_v))
    return CpaGrads(d_x.reshape(c, h, w), d_wq, d_wk, d_wv, d_mu)


def param_count(obj) -> int:
    """Learnable scalars in a module: projection entries plus the gate; pyramids hold none."""
    if isinstance(obj, PyramidSpec):
        return 0
    if isinstance(obj, ProjectionWeights):
        return obj.w_q.size + obj.w_k.size + obj.w_v.size
    if isinstance(obj, SpaModule):
        return param_count(obj.proj) + 1
    if isinstance(obj, CpaModule):
        return (param_count(obj.proj) if obj.proj is not None else 0) + 1
    raise ConfigurationError(f"param_count: unsupported object {type(obj).__name__}")
