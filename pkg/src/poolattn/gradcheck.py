"""Finite-difference oracle for every analytic backward pass in the package.

A check builds a scalar loss (fixed random weights contracted with the
module output), runs the analytic backward once, and probes every entry
of every learnable plus the input with central differences. Errors are
relative: |a - n| / max(|a|, |n|, 1e-8), so true-zero gradients compare
cleanly. Checking is float64-only; float32 backward passes are validated
separately by agreement with their float64 twins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import network
from .attention import (CpaMode, CpaModule, ProjectionWeights, SpaMode, cpa_backward,
                        cpa_forward, init_projection, nonlocal_backward, nonlocal_forward,
                        spa_backward, spa_forward, spa_module)
from .errors import ConfigurationError, NonFiniteError, OracleError
from .pooling import PyramidSpec
from .rng import Rng

FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    target: str
    max_rel_error: float
    num_entries: int
    tolerance: float
    passed: bool
    worst_index: tuple[int, ...]

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "max_rel_error": self.max_rel_error,
            "num_entries": self.num_entries,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "worst_index": list(self.worst_index),
        }


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x+h*e) - f(x-h*e)) / 2h for every entry of x."""
    if h <= 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {h}")
    grad = np.zeros_like(x, dtype=np.float64)
    flat_grad = grad.reshape(-1)
    base = x.astype(np.float64).copy()
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        try:
            up = f(base)
        except NonFiniteError as exc:
            raise OracleError(f"probe +h at entry {i} evaluated non-finite") from exc
        flat[i] = orig - h
        try:
            down = f(base)
        except NonFiniteError as exc:
            raise OracleError(f"probe -h at entry {i} evaluated non-finite") from exc
        flat[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise OracleError(f"probe at entry {i} evaluated non-finite")
        flat_grad[i] = (up - down) / (2.0 * h)
    return grad


def compare_grads(target: str, analytic: np.ndarray, numeric: np.ndarray,
                  tolerance: float) -> GradCheckReport:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    worst = int(np.argmax(rel))
    max_err = float(rel.reshape(-1)[worst])
    return GradCheckReport(
        target=target,
        max_rel_error=max_err,
        num_entries=int(a.size),
        tolerance=tolerance,
        passed=max_err < tolerance,
        worst_index=tuple(int(i) for i in np.unravel_index(worst, a.shape)) if a.ndim else (0,),
    )


def _check_targets(loss: Callable[[dict[str, np.ndarray]], float],
                   analytic: dict[str, np.ndarray],
                   bases: dict[str, np.ndarray], h: float,
                   tol: float) -> list[GradCheckReport]:
    reports = []
    for name, base in bases.items():
        numeric = finite_diff_grad(lambda arr, _n=name: loss({_n: arr}), base, h)
        reports.append(compare_grads(name, analytic[name], numeric, tol))
    return reports


def _scalar(arr_or_float) -> np.ndarray:
    return np.array([float(arr_or_float)], dtype=np.float64)


def check_module(kind: str, config: dict, seed: int = 0, h: float = 1e-5,
                 tol: float = 1e-4) -> list[GradCheckReport]:
    """Finite-difference-check one configuration; returns a report per target."""
    rng = Rng(seed)
    if kind == "nonlocal":
        return _check_nonlocal(config, rng, h, tol)
    if kind == "spa":
        return _check_spa(config, rng, h, tol)
    if kind == "cpa":
        return _check_cpa(config, rng, h, tol)
    if kind == "network":
        return _check_network(config, rng, seed, h, tol)
    raise ConfigurationError(f"unknown gradcheck kind {kind!r}")


def _check_nonlocal(config, rng, h, tol):
    c, chat = config["c"], config.get("chat", config["c"])
    hh, ww = config["h"], config["w"]
    proj = init_projection(rng, c, chat)
    lam = 0.5 + rng.next_unit()
    x = rng.fill_uniform((c, hh, ww), 1.0)
    weights = rng.fill_uniform((c, hh, ww), 1.0)

    def loss(repl: dict[str, np.ndarray]) -> float:
        p = ProjectionWeights(repl.get("w_q", proj.w_q), repl.get("w_k", proj.w_k),
                              repl.get("w_v", proj.w_v))
        lam_v = float(repl["lam"][0]) if "lam" in repl else lam
        out, _ = nonlocal_forward(repl.get("x", x), p, lam_v)
        return float(np.sum(weights * out))

    g = nonlocal_backward(x, proj, lam, weights)
    analytic = {"x": g.x, "w_q": g.w_q, "w_k": g.w_k, "w_v": g.w_v, "lam": _scalar(g.lam)}
    bases = {"x": x, "w_q": proj.w_q, "w_k": proj.w_k, "w_v": proj.w_v, "lam": _scalar(lam)}
    return _check_targets(loss, analytic, bases, h, tol)


def _check_spa(config, rng, h, tol):
    c, chat = config["c"], config.get("chat", config["c"])
    hh, ww = config["h"], config["w"]
    mode = SpaMode(config.get("mode", "only-odd"))
    odd = PyramidSpec(tuple(config["odd"])) if "odd" in config else None
    even = PyramidSpec(tuple(config["even"])) if "even" in config else None
    proj = init_projection(rng, c, chat)
    lam = 0.5 + rng.next_unit() if config.get("lam") is None else float(config["lam"])
    module = spa_module(proj, mode, odd_spec=odd, even_spec=even, lam=lam)
    x = rng.fill_uniform((c, hh, ww), 1.0)
    weights = rng.fill_uniform((c, hh, ww), 1.0)

    def loss(repl: dict[str, np.ndarray]) -> float:
        p = ProjectionWeights(repl.get("w_q", proj.w_q), repl.get("w_k", proj.w_k),
                              repl.get("w_v", proj.w_v))
        lam_v = float(repl["lam"][0]) if "lam" in repl else lam
        m = spa_module(p, mode, odd_spec=odd, even_spec=even, lam=lam_v)
        out, _ = spa_forward(repl.get("x", x), m)
        return float(np.sum(weights * out))

    g = spa_backward(x, module, weights)
    analytic = {"x": g.x, "w_q": g.w_q, "w_k": g.w_k, "w_v": g.w_v, "lam": _scalar(g.lam)}
    bases = {"x": x, "w_q": proj.w_q, "w_k": proj.w_k, "w_v": proj.w_v, "lam": _scalar(lam)}
    return _check_targets(loss, analytic, bases, h, tol)


def _check_cpa(config, rng, h, tol):
    c = config["c"]
    hh, ww = config["h"], config["w"]
    mode = CpaMode(config.get("mode", "subtract"))
    with_proj = bool(config.get("with_proj", False))
    proj = init_projection(rng, c) if with_proj else None
    mu = 0.5 + rng.next_unit() if config.get("mu") is None else float(config["mu"])
    module = CpaModule(proj, mode, mu)
    x = rng.fill_uniform((c, hh, ww), 1.0)
    weights = rng.fill_uniform((c, hh, ww), 1.0)

    def loss(repl: dict[str, np.ndarray]) -> float:
        if proj is None:
            p = None
        else:
            p = ProjectionWeights(repl.get("w_q", proj.w_q), repl.get("w_k", proj.w_k),
                                  repl.get("w_v", proj.w_v))
        mu_v = float(repl["mu"][0]) if "mu" in repl else mu
        out, _ = cpa_forward(repl.get("x", x), CpaModule(p, mode, mu_v))
        return float(np.sum(weights * out))

    g = cpa_backward(x, module, weights)
    analytic = {"x": g.x, "mu": _scalar(g.mu)}
    bases = {"x": x, "mu": _scalar(mu)}
    if proj is not None:
        analytic.update({"w_q": g.w_q, "w_k": g.w_k, "w_v": g.w_v})
        bases.update({"w_q": proj.w_q, "w_k": proj.w_k, "w_v": proj.w_v})
    return _check_targets(loss, analytic, bases, h, tol)


def _check_network(config, rng, seed, h, tol):
    size = config.get("size", 8)
    channels = config.get("channels", 16)
    model = network.build_model(seed, channels=channels,
                                classes=config.get("classes", 2),
                                odd_spec=PyramidSpec(tuple(config.get("odd", (1, 3)))))
    model.spa.lam = 0.5 + rng.next_unit()
    model.cpa.mu = 0.5 + rng.next_unit()
    image = rng.fill_uniform((3, size, size), 1.0)
    weights = rng.fill_uniform((model.classes, size, size), 1.0)

    named = dict(model.parameters())

    def loss(repl: dict[str, np.ndarray]) -> float:
        saved = {}
        for name, arr in repl.items():
            if name == "image" or name in ("lam", "mu"):
                continue
            saved[name] = named[name].copy()
            named[name][...] = arr
        lam0, mu0 = model.spa.lam, model.cpa.mu
        if "lam" in repl:
            model.spa.lam = float(repl["lam"][0])
        if "mu" in repl:
            model.cpa.mu = float(repl["mu"][0])
        try:
            out = network.forward(model, repl.get("image", image))
            return float(np.sum(weights * out))
        finally:
            for name, arr in saved.items():
                named[name][...] = arr
            model.spa.lam, model.cpa.mu = lam0, mu0

    g = network.backward(model, image, weights)
    flat = {"stem_w1": g.stem_w1, "stem_w2": g.stem_w2, "spa.w_q": g.spa.w_q,
            "spa.w_k": g.spa.w_k, "spa.w_v": g.spa.w_v, "fuse_w": g.fuse_w,
            "lam": _scalar(g.spa.lam), "mu": _scalar(g.cpa.mu), "image": g.image}
    bases = {name: arr for name, arr in named.items()}
    bases.update({"lam": _scalar(model.spa.lam), "mu": _scalar(model.cpa.mu),
                  "image": image})
    if model.cpa.proj is not None:
        flat.update({"cpa.w_q": g.cpa.w_q, "cpa.w_k": g.cpa.w_k, "cpa.w_v": g.cpa.w_v})
    return _check_targets(loss, flat, bases, h, tol)


# The fixed verification matrix: every mechanism, every mode, reduced and
# full channel widths, and the assembled network.
MANIFEST: tuple[tuple[str, str, dict], ...] = (
    ("nonlocal-c2-3x3", "nonlocal", {"c": 2, "chat": 2, "h": 3, "w": 3}),
    ("nonlocal-c4-5x5-reduced", "nonlocal", {"c": 4, "chat": 3, "h": 5, "w": 5}),
    ("spa-onlyodd-c4-6x6", "spa",
     {"c": 4, "chat": 4, "h": 6, "w": 6, "mode": "only-odd", "odd": (1, 3)}),
    ("spa-onlyodd-c2-5x5", "spa",
     {"c": 2, "chat": 2, "h": 5, "w": 5, "mode": "only-odd", "odd": (1, 3, 5)}),
    ("spa-onlyeven-c4-6x6-reduced", "spa",
     {"c": 4, "chat": 2, "h": 6, "w": 6, "mode": "only-even", "even": (1, 2, 4)}),
    ("spa-onlyeven-c3-4x4", "spa",
     {"c": 3, "chat": 3, "h": 4, "w": 4, "mode": "only-even", "even": (1, 2)}),
    ("spa-mixed-c2-10x10", "spa",
     {"c": 2, "chat": 2, "h": 10, "w": 10, "mode": "mixed",
      "odd": (1, 3, 5, 7, 9), "even": (1, 8, 10)}),
    ("cpa-subtract-plain-c4-5x5", "cpa",
     {"c": 4, "h": 5, "w": 5, "mode": "subtract", "with_proj": False}),
    ("cpa-subtract-proj-c3-4x4", "cpa",
     {"c": 3, "h": 4, "w": 4, "mode": "subtract", "with_proj": True}),
    ("cpa-square-plain-c4-5x5", "cpa",
     {"c": 4, "h": 5, "w": 5, "mode": "square", "with_proj": False}),
    ("cpa-square-proj-c3-4x4", "cpa",
     {"c": 3, "h": 4, "w": 4, "mode": "square", "with_proj": True}),
    ("network-16ch-8x8", "network", {"size": 8, "channels": 16, "odd": (1, 3, 5)}),
)


def run_manifest(seed: int = 0, h: float = 1e-5,
                 tol: float = 1e-4) -> list[tuple[str, list[GradCheckReport]]]:
    return [(name, check_module(kind, config, seed=seed, h=h, tol=tol))
            for name, kind, config in MANIFEST]
