import numpy as np
import pytest

from poolattn import ops
from poolattn.attention import (CpaMode, CpaModule, ProjectionWeights, SpaMode, SpaModule,
                                cpa_backward, cpa_forward, init_projection,
                                nonlocal_backward, nonlocal_forward, param_count,
                                spa_backward, spa_forward, spa_module)
from poolattn.errors import ConfigurationError, DimensionError, PoolSizeError
from poolattn.pooling import PAPER_EVEN, PAPER_ODD, PyramidSpec
from poolattn.rng import Rng

from oracles import loop_cpa, loop_nonlocal


def _random_case(seed, c, size, chat=None):
    rng = Rng(seed)
    proj = init_projection(rng, c, chat)
    x = rng.fill_uniform((c, size, size), 1.0)
    return rng, proj, x


# --- non-local baseline -----------------------------------------------------

def test_nonlocal_gate_closed_is_bitwise_identity():
    for seed in range(5):
        _, proj, x = _random_case(seed, 3, 4)
        out, _ = nonlocal_forward(x, proj, 0.0)
        assert np.array_equal(out, x)


def test_nonlocal_single_position():
    rng, proj, x = _random_case(11, 2, 1)
    out, attn = nonlocal_forward(x, proj, 0.6)
    assert np.array_equal(attn, [[1.0]])
    gamma = ops.matmul(proj.w_v, x.reshape(2, 1))
    assert np.allclose(out.reshape(2, 1), 0.6 * gamma + x.reshape(2, 1),
                       rtol=0, atol=1e-15)


def test_nonlocal_matches_loop_oracle():
    rng, proj, x = _random_case(12, 2, 3)
    lam = 0.8
    out, attn = nonlocal_forward(x, proj, lam)
    oracle_out, oracle_attn = loop_nonlocal(x, proj.w_q, proj.w_k, proj.w_v, lam)
    assert np.max(np.abs(out - oracle_out)) < 1e-12
    assert np.max(np.abs(attn - oracle_attn)) < 1e-12


def test_nonlocal_rows_are_stochastic():
    _, proj, x = _random_case(13, 4, 5)
    _, attn = nonlocal_forward(x, proj, 1.0)
    assert np.max(np.abs(attn.sum(axis=1) - 1.0)) < 1e-10


def test_nonlocal_channel_mismatch():
    _, proj, _ = _random_case(14, 3, 4)
    with pytest.raises(DimensionError):
        nonlocal_forward(np.ones((2, 4, 4)), proj, 0.5)


# --- spatial pool attention ---------------------------------------------------

def test_spa_gate_closed_is_bitwise_identity():
    spec = PyramidSpec((1, 2))
    for seed in range(5):
        _, proj, x = _random_case(seed, 3, 4)
        out, _ = spa_forward(x, SpaModule(proj, SpaMode.ONLY_EVEN, spec, spec, 0.0))
        assert np.array_equal(out, x)


def test_spa_full_resolution_equals_nonlocal():
    for seed in range(10):
        for c, size in [(2, 3), (4, 5)]:
            rng, proj, x = _random_case(seed, c, size)
            lam = 0.3 + 0.1 * seed
            spec = PyramidSpec((size,))
            mode = SpaMode.ONLY_ODD if size % 2 else SpaMode.ONLY_EVEN
            spa_out, _ = spa_forward(x, SpaModule(proj, mode, spec, spec, lam))
            nb_out, _ = nonlocal_forward(x, proj, lam)
            assert np.max(np.abs(spa_out - nb_out)) < 1e-12


def test_spa_paper_specs_attention_shape():
    rng = Rng(20)
    proj = init_projection(rng, 2)
    x = rng.fill_uniform((2, 96, 96), 1.0)
    module = SpaModule(proj, SpaMode.MIXED, PAPER_EVEN, PAPER_ODD, 0.5)
    _, attn = spa_forward(x, module)
    assert attn.shape == (325, 9216)


def test_spa_columns_are_stochastic():
    rng, proj, x = _random_case(21, 3, 6)
    module = SpaModule(proj, SpaMode.ONLY_ODD, PyramidSpec((1, 3)), PyramidSpec((1, 3)), 1.0)
    _, attn = spa_forward(x, module)
    assert np.max(np.abs(attn.sum(axis=0) - 1.0)) < 1e-10


def test_spa_anchor_mismatch_rejected():
    _, proj, _ = _random_case(22, 2, 6)
    with pytest.raises(ConfigurationError):
        SpaModule(proj, SpaMode.MIXED, PyramidSpec((1, 2)), PyramidSpec((1, 3)), 0.0)


def test_spa_pool_size_error_propagates():
    _, proj, x = _random_case(23, 2, 4)
    spec = PyramidSpec((1, 5))
    with pytest.raises(PoolSizeError):
        spa_forward(x, SpaModule(proj, SpaMode.ONLY_ODD, spec, spec, 0.0))


def test_spa_module_factory_mode_assignment():
    _, proj, _ = _random_case(24, 2, 10)
    odd = PyramidSpec((1, 3, 5, 7, 9))
    even = PyramidSpec((1, 8, 10))
    mixed = spa_module(proj, SpaMode.MIXED, odd_spec=odd, even_spec=even)
    assert mixed.k_spec is even and mixed.v_spec is odd
    only_odd = spa_module(proj, SpaMode.ONLY_ODD, odd_spec=odd)
    assert only_odd.k_spec is odd and only_odd.v_spec is odd
    only_even = spa_module(proj, SpaMode.ONLY_EVEN, even_spec=even)
    assert only_even.k_spec is even and only_even.v_spec is even
    with pytest.raises(ConfigurationError):
        spa_module(proj, SpaMode.MIXED, odd_spec=odd)


# --- channel pool attention ----------------------------------------------------

def test_cpa_gate_closed_is_bitwise_identity():
    for seed in range(5):
        rng = Rng(seed)
        x = rng.fill_uniform((4, 3, 3), 1.0)
        for mode in CpaMode:
            out, _ = cpa_forward(x, CpaModule(None, mode, 0.0))
            assert np.array_equal(out, x)


def test_cpa_single_channel():
    rng = Rng(30)
    x = rng.fill_uniform((1, 3, 3), 1.0)
    out, attn = cpa_forward(x, CpaModule(None, CpaMode.SUBTRACT, 0.4))
    assert np.array_equal(attn, [[1.0]])
    assert np.allclose(out, 0.4 * x + x, rtol=0, atol=1e-15)


def test_cpa_two_channel_hand_case_matches_oracle():
    x = np.array([[1.0, 2.0], [3.0, -1.0]]).reshape(2, 1, 2)
    module = CpaModule(None, CpaMode.SUBTRACT, 0.7)
    out, attn = cpa_forward(x, module)
    oracle_out, oracle_attn = loop_cpa(x, None, "subtract", 0.7)
    assert np.max(np.abs(out - oracle_out)) < 1e-12
    assert np.max(np.abs(attn - oracle_attn)) < 1e-12


@pytest.mark.parametrize("mode", ["subtract", "square"])
@pytest.mark.parametrize("with_proj", [False, True])
def test_cpa_matches_loop_oracle(mode, with_proj):
    rng = Rng(31)
    for _ in range(3):
        x = rng.fill_uniform((4, 3, 4), 1.0)
        proj = init_projection(rng, 4) if with_proj else None
        module = CpaModule(proj, CpaMode(mode), 0.6)
        out, attn = cpa_forward(x, module)
        triple = None if proj is None else (proj.w_q, proj.w_k, proj.w_v)
        oracle_out, oracle_attn = loop_cpa(x, triple, mode, 0.6)
        assert np.max(np.abs(out - oracle_out)) < 1e-12
        assert np.max(np.abs(attn - oracle_attn)) < 1e-12


def test_cpa_rows_are_stochastic():
    rng = Rng(32)
    x = rng.fill_uniform((5, 4, 4), 1.0)
    _, attn = cpa_forward(x, CpaModule(None, CpaMode.SUBTRACT, 1.0))
    assert np.max(np.abs(attn.sum(axis=1) - 1.0)) < 1e-10


def test_cpa_most_similar_channel_gets_least_weight():
    # Subtract mode: the argmax row of each affinity column carries logit 0,
    # the unique minimum of that row when all differences are distinct.
    rng = Rng(33)
    for _ in range(10):
        x = rng.fill_uniform((5, 4, 4), 1.0)
        xf = x.reshape(5, -1)
        d = xf @ xf.T
        _, attn = cpa_forward(x, CpaModule(None, CpaMode.SUBTRACT, 1.0))
        for col in range(5):
            row = int(np.argmax(d[:, col]))
            assert attn[row, col] == pytest.approx(attn[row].min())
            assert np.argmin(attn[row]) == col


def test_cpa_projection_must_preserve_channels():
    rng = Rng(34)
    with pytest.raises(ConfigurationError):
        CpaModule(init_projection(rng, 4, 2), CpaMode.SUBTRACT, 0.0)


# --- parameter counting ----------------------------------------------------------

def test_param_count_spa_64():
    rng = Rng(40)
    spec = PyramidSpec((1, 4, 8))
    module = SpaModule(init_projection(rng, 64), SpaMode.ONLY_EVEN, spec, spec, 0.0)
    assert param_count(module) == 2 * 64 * 64 + 64 * 64 + 1 == 12289


def test_param_count_projection_free_cpa():
    assert param_count(CpaModule(None, CpaMode.SQUARE, 0.0)) == 1


def test_param_count_cpa_with_projection():
    assert param_count(CpaModule(init_projection(Rng(41), 8), CpaMode.SUBTRACT, 0.0)) \
        == 3 * 64 + 1


def test_projection_weight_validation():
    with pytest.raises(DimensionError):
        ProjectionWeights(np.ones((2, 3)), np.ones((3, 3)), np.ones((3, 3)))
    with pytest.raises(DimensionError):
        ProjectionWeights(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 2)))


# --- float32 agreement -------------------------------------------------------------

def test_backward_f32_agrees_with_f64():
    rng = Rng(50)
    proj64 = init_projection(rng, 4)
    x64 = rng.fill_uniform((4, 6, 6), 1.0)
    g64 = rng.fill_uniform((4, 6, 6), 1.0)
    spec = PyramidSpec((1, 3))
    m64 = SpaModule(proj64, SpaMode.ONLY_ODD, spec, spec, 0.8)

    proj32 = ProjectionWeights(*(w.astype(np.float32) for w in
                                 (proj64.w_q, proj64.w_k, proj64.w_v)))
    m32 = SpaModule(proj32, SpaMode.ONLY_ODD, spec, spec, 0.8)

    ref = spa_backward(x64, m64, g64)
    got = spa_backward(x64.astype(np.float32), m32, g64.astype(np.float32))
    for a, b in [(ref.x, got.x), (ref.w_q, got.w_q), (ref.w_k, got.w_k),
                 (ref.w_v, got.w_v)]:
        rel = np.abs(a - b) / np.maximum(np.abs(a), 1e-3)
        assert rel.max() < 1e-3

    ref_c = cpa_backward(x64, CpaModule(None, CpaMode.SUBTRACT, 0.5), g64)
    got_c = cpa_backward(x64.astype(np.float32), CpaModule(None, CpaMode.SUBTRACT, 0.5),
                         g64.astype(np.float32))
    rel = np.abs(ref_c.x - got_c.x) / np.maximum(np.abs(ref_c.x), 1e-3)
    assert rel.max() < 1e-3


def test_module_forwards_bitwise_deterministic():
    rng, proj, x = _random_case(60, 3, 6)
    spec = PyramidSpec((1, 2))
    spa = SpaModule(proj, SpaMode.ONLY_EVEN, spec, spec, 0.9)
    cpa = CpaModule(None, CpaMode.SQUARE, 0.4)
    for fn in (lambda: spa_forward(x, spa), lambda: cpa_forward(x, cpa),
               lambda: nonlocal_forward(x, proj, 0.9)):
        out_a, attn_a = fn()
        out_b, attn_b = fn()
        assert np.array_equal(out_a, out_b) and np.array_equal(attn_a, attn_b)


def test_gate_gradient_at_zero_is_aggregation_contraction():
    rng = Rng(51)
    proj = init_projection(rng, 3)
    x = rng.fill_uniform((3, 4, 4), 1.0)
    g = rng.fill_uniform((3, 4, 4), 1.0)
    spec = PyramidSpec((1, 2))
    module = SpaModule(proj, SpaMode.ONLY_EVEN, spec, spec, 0.0)
    grads = spa_backward(x, module, g)
    # independent recomputation of the aggregation term
    xf = x.reshape(3, 16)
    k_pool = np.concatenate([(proj.w_k @ xf).reshape(3, 4, 4).mean(axis=(1, 2)).reshape(3, 1),
                             _pool2(proj.w_k @ xf)], axis=1)
    v_pool = np.concatenate([(proj.w_v @ xf).reshape(3, 4, 4).mean(axis=(1, 2)).reshape(3, 1),
                             _pool2(proj.w_v @ xf)], axis=1)
    logits = k_pool.T @ (proj.w_q @ xf)
    attn = np.exp(logits - logits.max(axis=0))
    attn /= attn.sum(axis=0)
    agg = v_pool @ attn
    assert abs(grads.lam - float(np.sum(g.reshape(3, 16) * agg))) < 1e-12


def _pool2(flat):
    m = flat.reshape(3, 4, 4)
    return np.stack([m[:, r:r + 2, c:c + 2].mean(axis=(1, 2))
                     for r in (0, 2) for c in (0, 2)], axis=1)
