"""Report builders behind the CLI subcommands.

Each builder returns a plain dict ready for JSON emission; every report
embeds the library version and the full run configuration, and the
train-demo report is deterministic byte-for-byte for fixed flags.
"""

from __future__ import annotations

import os
import statistics
import sys
import time

import numpy as np

from . import accounting, dpt, gradcheck, network, ops
from .attention import (CpaMode, CpaModule, SpaMode, SpaModule, cpa_forward,
                        init_projection, nonlocal_forward, param_count, spa_forward)
from .errors import ConfigurationError, ResourceLimitError
from .pooling import PyramidSpec, anchor_count, boundary_histogram, interior_offsets, \
    parse_spec, spec_name
from .rng import Rng
from .version import __version__

_DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(name: str):
    if name not in _DTYPES:
        raise ConfigurationError(f"dtype must be f32 or f64, got {name!r}")
    return _DTYPES[name]


def thread_cap() -> int | None:
    raw = os.environ.get("POOLATTN_THREADS")
    if raw is None:
        return None
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"POOLATTN_THREADS must be a positive integer, "
                                 f"got {raw!r}") from exc
    if cap < 1:
        raise ConfigurationError(f"POOLATTN_THREADS must be a positive integer, got {cap}")
    return cap


def flops_report(c: int, chat: int, h: int, w: int, spec_k: PyramidSpec,
                 spec_v: PyramidSpec, dtype_name: str,
                 include_softmax: bool) -> dict:
    dtype = resolve_dtype(dtype_name)
    names = (spec_name(spec_k), spec_name(spec_v))
    nb = accounting.cost_nonlocal(c, chat, h, w, dtype)
    spa = accounting.cost_spa(c, chat, h, w, spec_k, spec_v, dtype, spec_names=names)
    ratio = accounting.reduction_ratio(nb, spa, include_softmax)
    warnings = []
    t, n = anchor_count(spec_k), h * w
    if t > n:
        warnings.append(f"anchor count T={t} exceeds N={n}: pooling enlarges this shape "
                        f"and the ratio drops below 1")
    if max(spec_k.max_size, spec_v.max_size) > min(h, w):
        warnings.append(f"largest pool size {max(spec_k.max_size, spec_v.max_size)} does "
                        f"not fit {h}x{w}; costs are arithmetic only, the forward pass "
                        f"would reject this shape")
    return {
        "version": __version__,
        "config": {"c": c, "chat": chat, "h": h, "w": w, "dtype": dtype_name,
                   "spec_k": names[0], "spec_v": names[1],
                   "include_softmax": include_softmax},
        "nonlocal": nb.as_dict(),
        "spa": spa.as_dict(),
        "reduction_ratio": ratio,
        "warnings": warnings,
    }


def bench_report(c: int, chat: int, h: int, w: int, spec_k: PyramidSpec,
                 spec_v: PyramidSpec, dtype_name: str, reps: int, warmup: int,
                 seed: int, serial: bool, mem_limit: int | None) -> dict:
    if reps < 5:
        raise ConfigurationError(f"bench needs at least 5 repetitions, got {reps}")
    dtype = resolve_dtype(dtype_name)
    names = (spec_name(spec_k), spec_name(spec_v))
    nb_cost = accounting.cost_nonlocal(c, chat, h, w, dtype)
    spa_cost = accounting.cost_spa(c, chat, h, w, spec_k, spec_v, dtype, spec_names=names)
    print(f"nonlocal attention map: {nb_cost.attn_map_bytes} bytes "
          f"(spa: {spa_cost.attn_map_bytes})", file=sys.stderr, flush=True)
    if mem_limit is not None and nb_cost.attn_map_bytes > mem_limit:
        raise ResourceLimitError(f"nonlocal attention map needs {nb_cost.attn_map_bytes} "
                                 f"bytes, above the limit {mem_limit}")

    rng = Rng(seed)
    proj = init_projection(rng, c, chat, dtype)
    x = rng.fill_uniform((c, h, w), 1.0, dtype)
    module = SpaModule(proj, SpaMode.MIXED, spec_k, spec_v, lam=1.0)

    def timed(fn) -> float:
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1000.0)
        return statistics.median(samples)

    with ops.serial_matmul() if serial else _null_context():
        nb_ms = timed(lambda: nonlocal_forward(x, proj, 1.0))
        spa_ms = timed(lambda: spa_forward(x, module))

    return {
        "version": __version__,
        "config": {"c": c, "chat": chat, "h": h, "w": w, "dtype": dtype_name,
                   "spec_k": names[0], "spec_v": names[1], "threads": thread_cap(),
                   "serial": serial, "seed": seed},
        "wall_ms": {"nonlocal": nb_ms, "spa": spa_ms},
        "speedup": nb_ms / spa_ms,
        "peak_attn_map_bytes": {"nonlocal": nb_cost.attn_map_bytes,
                                "spa": spa_cost.attn_map_bytes},
        "flops": {"nonlocal": nb_cost.flops_total, "spa": spa_cost.flops_total},
        "repetitions": reps,
        "warmup": warmup,
    }


class _null_context:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def equivalence_report(seeds: int, sizes: list[int], channels: list[int],
                       tolerance: float = 1e-12, inject_failure: bool = False) -> dict:
    """Full-resolution-pooling oracle plus gate-closed identity, per seed and size."""
    cases = []
    for seed in range(seeds):
        for idx, size in enumerate(sizes):
            c = channels[idx % len(channels)]
            rng = Rng(seed * 7919 + size)
            proj = init_projection(rng, c)
            x = rng.fill_uniform((c, size, size), 1.0)
            lam = 0.25 + rng.next_unit()

            full = PyramidSpec((size,))
            k_spec = v_spec = PyramidSpec((1,)) if inject_failure else full
            mode = SpaMode.ONLY_ODD if size % 2 else SpaMode.ONLY_EVEN
            spa_out, _ = spa_forward(x, SpaModule(proj, mode, k_spec, v_spec, lam))
            nb_out, _ = nonlocal_forward(x, proj, lam)
            max_abs = float(np.max(np.abs(spa_out - nb_out)))

            closed_spa, _ = spa_forward(x, SpaModule(proj, mode, full, full, 0.0))
            closed_nb, _ = nonlocal_forward(x, proj, 0.0)
            closed_cpa, _ = cpa_forward(x, CpaModule(None, CpaMode.SUBTRACT, 0.0))
            bitwise = (np.array_equal(closed_spa, x) and np.array_equal(closed_nb, x)
                       and np.array_equal(closed_cpa, x))

            cases.append({
                "seed": seed,
                "size": size,
                "channels": c,
                "max_abs_diff": max_abs,
                "gate_closed_bitwise": bitwise,
                "passed": bool(max_abs <= tolerance and bitwise),
            })
    return {
        "version": __version__,
        "config": {"seeds": seeds, "sizes": sizes, "channels": channels,
                   "tolerance": tolerance, "inject_failure": inject_failure},
        "cases": cases,
        "all_passed": all(case["passed"] for case in cases),
    }


def gradcheck_report(kind: str, config: dict, seed: int, h: float, tol: float) -> dict:
    if kind == "all":
        pairs = gradcheck.run_manifest(seed=seed, h=h, tol=tol)
    else:
        pairs = [(kind, gradcheck.check_module(kind, config, seed=seed, h=h, tol=tol))]
    reports = []
    for case, case_reports in pairs:
        for rep in case_reports:
            entry = {"case": case}
            entry.update(rep.as_dict())
            reports.append(entry)
    return {
        "version": __version__,
        "config": {"kind": kind, "seed": seed, "h": h, "tol": tol, **config},
        "reports": reports,
        "all_passed": all(r["passed"] for r in reports),
    }


def train_demo_report(seed: int, size: int, steps: int, lr: float, momentum: float,
                      poly_power: float | None, count: int, batch: int,
                      spa_mode: str, spec_text: str, cpa_mode: str) -> dict:
    mode = SpaMode(spa_mode)
    if mode is SpaMode.MIXED:
        # Mixed mode pairs the matched toy pyramids; --spec applies to the single-spec modes.
        model = network.build_model(seed, spa_mode=mode, cpa_mode=CpaMode(cpa_mode))
        spec_label = (f"{spec_name(model.spa.v_spec)}+{spec_name(model.spa.k_spec)}")
    else:
        spec = parse_spec(spec_text)
        model = network.build_model(seed, spa_mode=mode, odd_spec=spec, even_spec=spec,
                                    cpa_mode=CpaMode(cpa_mode))
        spec_label = spec_name(spec)
    data = network.synth_dataset(seed, count, size)
    cfg = network.TrainConfig(lr=lr, momentum=momentum, steps=steps, seed=seed,
                              poly_power=poly_power, image_size=size, batch=batch)
    report = network.train(model, data, cfg)
    return {
        "version": __version__,
        "config": {"seed": seed, "size": size, "steps": steps, "lr": lr,
                   "momentum": momentum, "poly_power": poly_power, "count": count,
                   "batch": batch, "spa_mode": spa_mode, "spec": spec_label,
                   "cpa_mode": cpa_mode},
        **report.as_dict(),
    }


def coverage_report(specs: list[PyramidSpec], extent: int) -> dict:
    entries = []
    union: set[int] = set()
    for spec in specs:
        if spec.max_size > extent:
            raise ConfigurationError(f"pool size {spec.max_size} exceeds extent {extent}")
        interior = interior_offsets(spec, extent)
        union |= interior
        entries.append({
            "name": spec_name(spec),
            "sizes": list(spec.sizes),
            "anchor_count": anchor_count(spec),
            "histogram": [[o, c] for o, c in boundary_histogram(spec, extent)],
            "interior_count": len(interior),
        })
    return {
        "version": __version__,
        "config": {"specs": [e["name"] for e in entries], "extent": extent},
        "specs": entries,
        "union_interior_count": len(union),
        "comparisons": [{"spec": e["name"], "interior_count": e["interior_count"],
                         "union_exceeds": len(union) > e["interior_count"]}
                        for e in entries],
    }


def attn_report(input_path: str, module_kind: str, out_tensor: str, out_attn: str,
                seed: int, chat: int | None, spec_k: PyramidSpec, spec_v: PyramidSpec,
                cpa_mode: str, with_proj: bool, lam: float, mu: float) -> dict:
    x = dpt.read_tensor(input_path)
    if x.ndim != 3:
        raise ConfigurationError(f"attn expects a CxHxW tensor, got shape {x.shape}")
    c = x.shape[0]
    rng = Rng(seed)
    dtype = x.dtype
    if module_kind == "nonlocal":
        proj = init_projection(rng, c, chat, dtype)
        out, attn = nonlocal_forward(x, proj, lam)
        params = param_count(proj) + 1
        config = {"module": module_kind, "seed": seed, "chat": proj.reduced, "lam": lam}
    elif module_kind == "spa":
        proj = init_projection(rng, c, chat, dtype)
        module = SpaModule(proj, SpaMode.MIXED, spec_k, spec_v, lam)
        out, attn = spa_forward(x, module)
        params = param_count(module)
        config = {"module": module_kind, "seed": seed, "chat": proj.reduced, "lam": lam,
                  "spec_k": spec_name(spec_k), "spec_v": spec_name(spec_v)}
    elif module_kind == "cpa":
        proj = init_projection(rng, c, None, dtype) if with_proj else None
        module = CpaModule(proj, CpaMode(cpa_mode), mu)
        out, attn = cpa_forward(x, module)
        params = param_count(module)
        config = {"module": module_kind, "seed": seed, "mu": mu, "mode": cpa_mode,
                  "with_proj": with_proj}
    else:
        raise ConfigurationError(f"unknown module kind {module_kind!r}")
    dpt.write_dpt(out_tensor, out)
    dpt.write_dpt(out_attn, attn)
    return {
        "version": __version__,
        "config": config,
        "input_shape": list(x.shape),
        "output_shape": list(out.shape),
        "attn_shape": list(attn.shape),
        "params": params,
        "out_tensor": out_tensor,
        "out_attn": out_attn,
    }
