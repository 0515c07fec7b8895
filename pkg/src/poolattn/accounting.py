"""Closed-form parameter, FLOP, and memory accounting for the attention variants.

FLOP convention (shared with the instrumented counters): a multiply-
accumulate is 2 FLOPs; exp, div, max, and sub are 1 each; a softmax over
n entries costs 5n (max, sub, exp, sum, div); adaptive pooling costs one
add per input element per level, with the per-bin mean divisions excluded
as O(T) noise. Absolute numbers are convention-dependent; the ratios
(N/T core reduction, zero added parameters, attention-map bytes) are not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ComparisonError
from .pooling import PyramidSpec, anchor_count


def dtype_size(dtype) -> int:
    return int(np.dtype(dtype).itemsize)


@dataclass(frozen=True)
class CostReport:
    """Cost of one attention module at one input shape."""

    params: int
    flops_core: int          # attention-map build + softmax + aggregation
    flops_proj: int          # 1x1 projections
    flops_pool: int          # pyramid pooling adds
    attn_map_bytes: int
    shape: tuple[int, int, int, int]      # (C, chat, H, W)
    flops_map: int = 0
    flops_softmax: int = 0
    flops_agg: int = 0
    flops_extra: int = 0     # CPA max + difference
    dtype: str = "f32"
    spec_names: tuple[str, str] | None = None

    @property
    def flops_total(self) -> int:
        return self.flops_core + self.flops_proj + self.flops_pool

    def as_dict(self) -> dict:
        d = {
            "params": self.params,
            "flops_core": self.flops_core,
            "flops_proj": self.flops_proj,
            "flops_pool": self.flops_pool,
            "flops_total": self.flops_total,
            "flops_map": self.flops_map,
            "flops_softmax": self.flops_softmax,
            "flops_agg": self.flops_agg,
            "flops_extra": self.flops_extra,
            "attn_map_bytes": self.attn_map_bytes,
            "shape": {"c": self.shape[0], "chat": self.shape[1],
                      "h": self.shape[2], "w": self.shape[3]},
            "dtype": self.dtype,
        }
        if self.spec_names is not None:
            d["spec_names"] = list(self.spec_names)
        return d


def _dtype_name(dtype) -> str:
    return "f64" if dtype_size(dtype) == 8 else "f32"


def cost_nonlocal(c: int, chat: int, h: int, w: int, dtype=np.float32) -> CostReport:
    """Full N x N attention: map 2*chat*N^2, softmax 5N^2, aggregation 2*c*N^2."""
    n = h * w
    fmap = 2 * chat * n * n
    fsoft = 5 * n * n
    fagg = 2 * c * n * n
    return CostReport(
        params=2 * chat * c + c * c + 1,
        flops_core=fmap + fsoft + fagg,
        flops_proj=2 * n * (2 * chat * c + c * c),
        flops_pool=0,
        attn_map_bytes=n * n * dtype_size(dtype),
        shape=(c, chat, h, w),
        flops_map=fmap, flops_softmax=fsoft, flops_agg=fagg,
        dtype=_dtype_name(dtype),
    )


def cost_spa(c: int, chat: int, h: int, w: int, k_spec: PyramidSpec, v_spec: PyramidSpec,
             dtype=np.float32, spec_names: tuple[str, str] | None = None) -> CostReport:
    """T-anchor attention: every core term of the baseline with one N replaced by T.

    Pure arithmetic: shapes too small for the pyramids are allowed here so
    degenerate ratios can still be reported (the forward pass itself rejects them).
    """
    if anchor_count(k_spec) != anchor_count(v_spec):
        raise ComparisonError(f"anchor counts differ: {k_spec.sizes} gives "
                              f"{anchor_count(k_spec)}, {v_spec.sizes} gives "
                              f"{anchor_count(v_spec)}")
    n = h * w
    t = anchor_count(k_spec)
    fmap = 2 * chat * n * t
    fsoft = 5 * n * t
    fagg = 2 * c * n * t
    return CostReport(
        params=2 * chat * c + c * c + 1,     # pooling adds zero learnables
        flops_core=fmap + fsoft + fagg,
        flops_proj=2 * n * (2 * chat * c + c * c),
        flops_pool=n * (len(k_spec.sizes) * chat + len(v_spec.sizes) * c),
        attn_map_bytes=t * n * dtype_size(dtype),
        shape=(c, chat, h, w),
        flops_map=fmap, flops_softmax=fsoft, flops_agg=fagg,
        dtype=_dtype_name(dtype),
        spec_names=spec_names,
    )


def cost_cpa(c: int, h: int, w: int, with_proj: bool, dtype=np.float32) -> CostReport:
    """C x C channel affinity: same op count for subtract and square modes."""
    n = h * w
    fmap = 2 * n * c * c
    fextra = 2 * c * c                       # column max + difference
    fsoft = 5 * c * c
    fagg = 2 * n * c * c
    return CostReport(
        params=3 * c * c + 1 if with_proj else 1,
        flops_core=fmap + fextra + fsoft + fagg,
        flops_proj=2 * n * 3 * c * c if with_proj else 0,
        flops_pool=0,
        attn_map_bytes=c * c * dtype_size(dtype),
        shape=(c, c, h, w),
        flops_map=fmap, flops_softmax=fsoft, flops_agg=fagg, flops_extra=fextra,
        dtype=_dtype_name(dtype),
    )


def reduction_ratio(nb: CostReport, spa: CostReport, include_softmax: bool = False) -> float:
    """Core-FLOPs ratio baseline/pooled; with softmax excluded this is exactly N/T."""
    if nb.shape != spa.shape:
        raise ComparisonError(f"cost reports compare only at one shape: "
                              f"{nb.shape} vs {spa.shape}")
    top = nb.flops_map + nb.flops_agg
    bottom = spa.flops_map + spa.flops_agg
    if include_softmax:
        top += nb.flops_softmax
        bottom += spa.flops_softmax
    return top / bottom
