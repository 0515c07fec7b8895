"""Multi-scale adaptive average pooling: the zero-parameter anchor extractor.

A pyramid turns a C x H x W map into C x T anchor features by pooling to
each grid size in turn and concatenating the flattened grids. T is the
sum of squared grid sizes; the two production presets land on the same
T = 325 so their anchor tensors are interchangeable in mixed mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import instrument, ops
from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class PyramidSpec:
    """Ordered bank of adaptive-pool output sizes."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise ConfigurationError("pyramid spec needs at least one size")
        if any(n < 1 for n in sizes):
            raise ConfigurationError(f"pyramid sizes must be >= 1, got {sizes}")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError(f"pyramid sizes must be strictly increasing, got {sizes}")

    @property
    def anchor_count(self) -> int:
        return anchor_count(self)

    @property
    def max_size(self) -> int:
        return self.sizes[-1]


PAPER_EVEN = PyramidSpec((1, 4, 8, 10, 12))
PAPER_ODD = PyramidSpec((1, 5, 7, 9, 13))
TOY_ODD = PyramidSpec((1, 3, 5))
TOY_EVEN_MATCHED = PyramidSpec((1, 8, 10))
TOY_ODD_MATCHED = PyramidSpec((1, 3, 5, 7, 9))

PRESETS: dict[str, PyramidSpec] = {
    "paper-even": PAPER_EVEN,
    "paper-odd": PAPER_ODD,
    "toy-odd": TOY_ODD,
    "toy-even-matched": TOY_EVEN_MATCHED,
    "toy-odd-matched": TOY_ODD_MATCHED,
}


def parse_spec(text: str) -> PyramidSpec:
    """Resolve a preset name or a comma list like '1,3,5' into a spec."""
    key = text.strip().lower()
    if key in PRESETS:
        return PRESETS[key]
    try:
        sizes = tuple(int(part) for part in key.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"unknown pyramid spec {text!r}; "
                                 f"presets: {', '.join(sorted(PRESETS))}") from exc
    return PyramidSpec(sizes)


def spec_name(spec: PyramidSpec) -> str:
    for name, preset in PRESETS.items():
        if preset.sizes == spec.sizes:
            return name
    return ",".join(str(n) for n in spec.sizes)


def anchor_count(spec: PyramidSpec) -> int:
    """Total anchors T: the sum of squared grid sizes."""
    return sum(n * n for n in spec.sizes)


def pyramid_pool(x: np.ndarray, spec: PyramidSpec) -> np.ndarray:
    """Pool x (C x H x W) to C x T: levels in spec order, each flattened row-major."""
    c, h, w = x.shape
    blocks = []
    for n in spec.sizes:
        pooled = ops.adaptive_avg_pool2d(x, n)
        blocks.append(pooled.reshape(c, n * n))
        instrument.add("pool", c * h * w)
    return np.concatenate(blocks, axis=1)


def pyramid_pool_backward(grad: np.ndarray, spec: PyramidSpec, height: int,
                          width: int) -> np.ndarray:
    """Adjoint of pyramid_pool: spread each anchor's gradient uniformly over its bin."""
    c, t = grad.shape
    if t != anchor_count(spec):
        raise DimensionError(f"pyramid_pool_backward: grad has {t} anchors, "
                             f"spec {spec.sizes} expects {anchor_count(spec)}")
    out = np.zeros((c, height, width), dtype=grad.dtype)
    col = 0
    for n in spec.sizes:
        block = grad[:, col : col + n * n].reshape(c, n, n)
        col += n * n
        rows = ops.pool_bounds(height, n)
        cols = ops.pool_bounds(width, n)
        for i, (rs, re) in enumerate(rows):
            for j, (cs, ce) in enumerate(cols):
                area = (re - rs) * (ce - cs)
                out[:, rs:re, cs:ce] += block[:, i : i + 1, j : j + 1] / area
    return out


def level_boundaries(n: int, extent: int) -> list[int]:
    """All bin edges of one pool level along an axis of the given extent."""
    bounds = ops.pool_bounds(extent, n)
    return [bounds[0][0]] + [e for _, e in bounds]


def boundary_histogram(spec: PyramidSpec, extent: int) -> list[tuple[int, int]]:
    """(offset, count) pairs: how many pyramid levels place a bin edge at each offset."""
    counts = [0] * (extent + 1)
    for n in spec.sizes:
        for edge in set(level_boundaries(n, extent)):
            counts[edge] += 1
    return [(offset, count) for offset, count in enumerate(counts) if count > 0]


def interior_offsets(spec: PyramidSpec, extent: int) -> set[int]:
    """Distinct bin edges strictly inside (0, extent) across all levels."""
    edges: set[int] = set()
    for n in spec.sizes:
        edges.update(level_boundaries(n, extent))
    return {e for e in edges if 0 < e < extent}
