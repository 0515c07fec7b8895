"""Per-stage FLOP tally for instrumented forward passes.

The attention forwards report the cost of each stage they execute, with
counts derived from the runtime operand shapes under the package-wide
convention: multiply-accumulate = 2, exp/div/max/sub = 1, softmax over n
entries = 5n, adaptive pooling = one add per input element per level
(bin-mean divisions are excluded by convention; they are O(T) noise).

Counting is opt-in via the `counting` context manager and is intended
for single-threaded verification runs, not for the concurrent read path.
"""

from __future__ import annotations

from contextlib import contextmanager

_enabled = False
_totals: dict[str, int] = {}


def enabled() -> bool:
    return _enabled


def add(category: str, flops: int) -> None:
    if _enabled:
        _totals[category] = _totals.get(category, 0) + int(flops)


@contextmanager
def counting():
    """Enable counting, yield the live per-category tally dict."""
    global _enabled, _totals
    prev_enabled, prev_totals = _enabled, _totals
    _enabled, _totals = True, {}
    try:
        yield _totals
    finally:
        _enabled, _totals = prev_enabled, prev_totals
