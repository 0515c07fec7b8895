import numpy as np
import pytest

from poolattn import instrument, ops
from poolattn.accounting import (cost_cpa, cost_nonlocal, cost_spa, reduction_ratio)
from poolattn.attention import (CpaMode, CpaModule, SpaMode, SpaModule, cpa_forward,
                                init_projection, nonlocal_forward, param_count,
                                spa_forward)
from poolattn.errors import ComparisonError
from poolattn.pooling import PAPER_EVEN, PAPER_ODD, PyramidSpec, anchor_count
from poolattn.rng import Rng


def test_nonlocal_degenerate_size_formula():
    r = cost_nonlocal(3, 3, 1, 1)
    assert r.flops_core == 4 * 3 + 5


def test_nonlocal_map_bytes_at_96():
    r = cost_nonlocal(64, 64, 96, 96, np.float32)
    assert r.attn_map_bytes == 9216 ** 2 * 4 == 339738624


def test_doubling_height_quadruples_core():
    a = cost_nonlocal(8, 8, 12, 12)
    b = cost_nonlocal(8, 8, 24, 12)
    # N doubles, every core term is quadratic in N
    assert b.flops_core == 4 * a.flops_core


def test_spa_adds_zero_parameters():
    for c, chat in [(64, 64), (64, 32), (16, 16)]:
        nb = cost_nonlocal(c, chat, 96, 96)
        spa = cost_spa(c, chat, 96, 96, PAPER_EVEN, PAPER_ODD)
        assert spa.params - nb.params == 0


def test_spa_map_bytes_at_96():
    r = cost_spa(64, 32, 96, 96, PAPER_EVEN, PAPER_ODD, np.float32)
    assert r.attn_map_bytes == 325 * 9216 * 4 == 11980800


def test_reduction_ratio_paper_headline():
    nb = cost_nonlocal(64, 32, 96, 96)
    spa = cost_spa(64, 32, 96, 96, PAPER_EVEN, PAPER_ODD)
    assert reduction_ratio(nb, spa) == pytest.approx(9216 / 325, abs=1e-12)
    assert reduction_ratio(nb, spa) == pytest.approx(28.356923, abs=1e-3)


def test_reduction_ratio_rectangular():
    nb = cost_nonlocal(64, 64, 256, 128)
    spa = cost_spa(64, 64, 256, 128, PAPER_EVEN, PAPER_ODD)
    assert reduction_ratio(nb, spa) == pytest.approx(32768 / 325, abs=1e-9)


def test_reduction_ratio_full_resolution_is_one():
    spec = PyramidSpec((4,))  # T = 16 = N at 4x4
    nb = cost_nonlocal(8, 8, 4, 4)
    spa = cost_spa(8, 8, 4, 4, spec, spec)
    assert reduction_ratio(nb, spa) == 1.0


def test_reduction_ratio_channel_invariant_and_softmax_neutral():
    for c, chat in [(8, 8), (32, 16), (64, 7)]:
        nb = cost_nonlocal(c, chat, 20, 20)
        spa = cost_spa(c, chat, 20, 20, PyramidSpec((1, 2)), PyramidSpec((1, 2)))
        n_over_t = 400 / 5
        assert reduction_ratio(nb, spa) == pytest.approx(n_over_t, abs=1e-9)
        assert reduction_ratio(nb, spa, include_softmax=True) == \
            pytest.approx(n_over_t, abs=1e-9)


def test_reduction_ratio_shape_mismatch():
    nb = cost_nonlocal(8, 8, 4, 4)
    spa = cost_spa(8, 8, 6, 6, PyramidSpec((1, 2)), PyramidSpec((1, 2)))
    with pytest.raises(ComparisonError):
        reduction_ratio(nb, spa)


def test_cpa_parameter_counts_and_bytes():
    assert cost_cpa(64, 96, 96, with_proj=False).params == 1
    assert cost_cpa(64, 96, 96, with_proj=True).params == 3 * 64 * 64 + 1
    assert cost_cpa(64, 96, 96, with_proj=False, dtype=np.float32).attn_map_bytes == 16384


def test_params_match_module_enumeration():
    rng = Rng(1)
    spec = PyramidSpec((1, 2))
    for c, chat in [(4, 4), (6, 3), (16, 16)]:
        proj = init_projection(rng, c, chat)
        spa = SpaModule(proj, SpaMode.ONLY_EVEN, spec, spec, 0.0)
        assert param_count(spa) == cost_spa(c, chat, 8, 8, spec, spec).params
        assert param_count(proj) + 1 == cost_nonlocal(c, chat, 8, 8).params
    proj = init_projection(rng, 5)
    assert param_count(CpaModule(proj, CpaMode.SUBTRACT, 0.0)) == \
        cost_cpa(5, 8, 8, with_proj=True).params
    assert param_count(CpaModule(None, CpaMode.SQUARE, 0.0)) == \
        cost_cpa(5, 8, 8, with_proj=False).params


def test_instrumented_execution_matches_closed_form():
    # Ten random shapes; counts from the serial reference path must equal the
    # closed-form accounting exactly, category by category.
    rng = Rng(99)
    shape_rng = Rng(123)
    for trial in range(10):
        c = shape_rng.next_int(2, 6)
        chat = shape_rng.next_int(2, 6)
        h = shape_rng.next_int(4, 9)
        w = shape_rng.next_int(4, 9)
        sizes = (1, shape_rng.next_int(2, min(h, w)))
        spec = PyramidSpec(sizes)
        proj = init_projection(rng, c, chat)
        x = rng.fill_uniform((c, h, w), 1.0)

        nb = cost_nonlocal(c, chat, h, w)
        with ops.serial_matmul(), instrument.counting() as tally:
            nonlocal_forward(x, proj, 0.7)
        assert tally["map"] == nb.flops_map
        assert tally["softmax"] == nb.flops_softmax
        assert tally["agg"] == nb.flops_agg
        assert tally["proj"] == nb.flops_proj
        assert tally["map"] + tally["softmax"] + tally["agg"] == nb.flops_core

        spa_cost = cost_spa(c, chat, h, w, spec, spec)
        module = SpaModule(proj, SpaMode.ONLY_EVEN, spec, spec, 0.7)
        with ops.serial_matmul(), instrument.counting() as tally:
            spa_forward(x, module)
        assert tally["map"] == spa_cost.flops_map
        assert tally["softmax"] == spa_cost.flops_softmax
        assert tally["agg"] == spa_cost.flops_agg
        assert tally["proj"] == spa_cost.flops_proj
        assert tally["pool"] == spa_cost.flops_pool

        mode = CpaMode.SQUARE if trial % 2 else CpaMode.SUBTRACT
        with_proj = trial % 3 == 0
        cpa_cost = cost_cpa(c, h, w, with_proj=with_proj)
        cmod = CpaModule(init_projection(rng, c) if with_proj else None, mode, 0.3)
        with ops.serial_matmul(), instrument.counting() as tally:
            cpa_forward(x, cmod)
        assert tally["map"] == cpa_cost.flops_map
        assert tally["maxdiff"] == cpa_cost.flops_extra
        assert tally["softmax"] == cpa_cost.flops_softmax
        assert tally["agg"] == cpa_cost.flops_agg
        assert tally.get("proj", 0) == cpa_cost.flops_proj


def test_spa_core_always_below_nonlocal_when_t_below_n():
    rng = Rng(7)
    for _ in range(20):
        h = rng.next_int(6, 14)
        w = rng.next_int(6, 14)
        c = rng.next_int(2, 8)
        spec = PyramidSpec((1, 2))
        if anchor_count(spec) < h * w:
            nb = cost_nonlocal(c, c, h, w)
            spa = cost_spa(c, c, h, w, spec, spec)
            assert spa.flops_core < nb.flops_core
