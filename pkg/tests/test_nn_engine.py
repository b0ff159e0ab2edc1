import numpy as np
import pytest
from hypothesis import given, strategies as st

from hwnas.nn import engine, kernels
from hwnas.nn.layers import (
    AvgPool,
    BatchNorm,
    Conv,
    GlobalAvgPool,
    Layer,
    Linear,
    NetworkSpec,
    ReLU,
    ShapeError,
    Sum,
    Zero,
)
from hwnas.search_space import ALL_OPS, CellGenotype, MacroSkeleton, OperatorKind, SupernetMask, instantiate_network, random_genotype

from conftest import NB201, TINY_SKELETON
from helpers import central_difference, generic_params, naive_conv2d, relative_error


def linear_net(n_in, n_out, bias=True):
    return NetworkSpec((n_in,), (Layer(Linear(n_in, n_out), (-1,), "fc"),))


def test_init_deterministic_and_bn():
    spec = instantiate_network(MacroSkeleton(), SupernetMask.full(NB201))
    a = engine.init_params(spec, 7)
    b = engine.init_params(spec, 7)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, engine.init_params(spec, 8))
    for layer, off in zip(spec.layers, spec.offsets):
        if isinstance(layer.op, BatchNorm):
            c = layer.op.c
            assert np.all(a[off : off + c] == 1.0)
            assert np.all(a[off + c : off + 2 * c] == 0.0)
        if isinstance(layer.op, Linear):
            n = layer.op.in_features * layer.op.out_features
            assert np.all(a[off + n : off + n + layer.op.out_features] == 0.0)


def test_kaiming_variance_conv3x3():
    g = CellGenotype(NB201, (OperatorKind.CONV_3X3,) * 6)
    spec = instantiate_network(MacroSkeleton(), g)
    i = next(i for i, l in enumerate(spec.layers) if l.name == "stack0.cell0.e0-1.nor_conv_3x3.conv")
    off, n = spec.offsets[i], 16 * 16 * 9
    target = 2.0 / (9 * 16)
    samples = np.concatenate([engine.init_params(spec, s)[off : off + n] for s in range(10)])
    assert abs(samples.var() - target) / target < 0.2


def test_layer_init_independent_of_rest_of_network():
    full = instantiate_network(MacroSkeleton(), SupernetMask.full(NB201))
    single = instantiate_network(MacroSkeleton(), CellGenotype(NB201, (OperatorKind.CONV_3X3,) * 6))
    pf, ps = engine.init_params(full, 3), engine.init_params(single, 3)
    name = "stack1.cell0.e1-2.nor_conv_3x3.conv"
    i = next(i for i, l in enumerate(full.layers) if l.name == name)
    j = next(j for j, l in enumerate(single.layers) if l.name == name)
    n = full.layers[i].op.param_count
    assert np.array_equal(pf[full.offsets[i] : full.offsets[i] + n], ps[single.offsets[j] : single.offsets[j] + n])


def test_hand_computed_1x1_conv():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y = kernels.conv2d_forward(x, np.array([[[[0.5]]]]), 1, 0)
    assert np.array_equal(y, np.array([[[[0.5, 1.0], [1.5, 2.0]]]]))


def test_hand_computed_1x1_conv_through_network():
    # conv -> GAP -> identity fc: logit is the mean of the four products
    layers = (
        Layer(Conv(1, 1, 1), (-1,), "c"),
        Layer(GlobalAvgPool(), (0,), "gap"),
        Layer(Linear(1, 1), (1,), "fc"),
    )
    spec = NetworkSpec((1, 2, 2), layers)
    logits, _ = engine.forward(spec, np.array([0.5, 1.0, 0.0]), np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    assert logits[0] == (0.5 + 1.0 + 1.5 + 2.0) / 4


def test_hand_computed_3x3_conv_padded():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    y = kernels.conv2d_forward(x, np.ones((1, 1, 3, 3)), 1, 1)
    # each output is the sum of its in-bounds 3x3 neighbourhood
    expected = np.array([[8, 15, 12], [21, 36, 27], [20, 33, 24]], dtype=float)
    assert np.array_equal(y[0, 0], expected)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 0, 1), (1, 0, 2)])
def test_conv_matches_naive_loops(stride, pad, k):
    rng = np.random.default_rng(k * 10 + stride)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, k, k))
    y = kernels.conv2d_forward(x, w, stride, pad)
    for n in range(2):
        assert np.allclose(y[n], naive_conv2d(x[n], w, stride, pad), rtol=1e-12, atol=1e-12)


def test_avgpool_excludes_padding():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    y = engine._avgpool_forward(x, AvgPool(3, 1, 1))
    # every 3x3 window covers the whole 2x2 image
    assert np.allclose(y, 2.5)
    y = engine._avgpool_forward(np.arange(9.0).reshape(1, 1, 3, 3), AvgPool(3, 1, 1))
    assert y[0, 0, 0, 0] == (0 + 1 + 3 + 4) / 4


def test_scale_by_one_identity():
    spec = instantiate_network(TINY_SKELETON, SupernetMask.full(NB201))
    th = engine.init_params(spec, 0)
    x = np.random.default_rng(0).standard_normal(TINY_SKELETON.input_shape)
    a, pa = engine.forward(spec, th, x)
    b, pb = engine.forward(spec, th, x * 1.0)
    assert a.tobytes() == b.tobytes() and np.array_equal(pa, pb)


def test_zero_only_network_logits_are_bias():
    layers = (
        Layer(Zero((2, 3, 3)), (), "z"),
        Layer(ReLU(), (0,), "r"),
        Layer(GlobalAvgPool(), (1,), "gap"),
        Layer(Linear(2, 3), (2,), "fc"),
    )
    spec = NetworkSpec((1, 3, 3), layers)
    th = np.arange(spec.param_count, dtype=float)
    logits, pattern = engine.forward(spec, th, np.ones((1, 3, 3)))
    assert np.array_equal(logits, th[-3:])
    assert not pattern.any() and pattern.size == 18


def test_linear_model_gradient():
    spec = linear_net(3, 1)
    th = np.array([0.3, -0.2, 0.9, 0.0])
    g = engine.param_gradient(spec, th, np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(g, np.array([1.0, 2.0, 3.0, 1.0]))  # trailing entry is the bias


def test_all_zero_cells_have_zero_cell_gradient():
    # a supernet parameterisation whose only alive op is Zero has no cell params,
    # so check a mixed net with a disconnected branch instead
    g = CellGenotype(NB201, (OperatorKind.CONV_3X3, OperatorKind.ZERO, OperatorKind.ZERO,
                             OperatorKind.ZERO, OperatorKind.ZERO, OperatorKind.ZERO))
    spec = instantiate_network(TINY_SKELETON, g)
    th = engine.init_params(spec, 0)
    grad = engine.param_gradient(spec, th, np.random.default_rng(1).standard_normal(TINY_SKELETON.input_shape))
    # node 1's conv only feeds edges that are Zero, so it never reaches the output
    for i, layer in enumerate(spec.layers):
        if layer.name.startswith("stack") and layer.op.param_count:
            off = spec.offsets[i]
            assert np.all(grad[off : off + layer.op.param_count] == 0.0)


def test_shape_mismatch_errors():
    spec = instantiate_network(TINY_SKELETON, SupernetMask.full(NB201))
    th = engine.init_params(spec, 0)
    with pytest.raises(ShapeError):
        engine.forward(spec, th, np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError):
        engine.param_gradient(spec, th[:-1], np.zeros(TINY_SKELETON.input_shape))


def test_network_spec_validation():
    with pytest.raises(ShapeError):
        NetworkSpec((1, 2, 2), (Layer(Conv(2, 1, 1), (-1,), "c"),))
    with pytest.raises(ShapeError):
        NetworkSpec((1, 2, 2), (Layer(AvgPool(3, 2, 0), (-1,), "p"),))
    with pytest.raises(ShapeError):
        NetworkSpec((1, 2, 2), (Layer(ReLU(), (-1,), "a"), Layer(ReLU(), (0,), "a")))
    with pytest.raises(ShapeError):
        NetworkSpec((1, 4, 4), (Layer(AvgPool(3, 1, 3), (-1,), "p"),))
    with pytest.raises(ShapeError):
        NetworkSpec((1, 2, 2), (Layer(Conv(1, 1, 1), (-1,), "c"),))  # does not end in a vector


@pytest.mark.parametrize("trial", range(3))
def test_gradient_matches_central_differences(trial):
    rng = np.random.default_rng(100 + trial)
    mask = SupernetMask.full(NB201) if trial == 0 else random_genotype(NB201, ALL_OPS, rng).to_mask()
    spec = instantiate_network(TINY_SKELETON, mask)
    th = generic_params(spec, trial, rng)
    x = rng.standard_normal(TINY_SKELETON.input_shape)
    # f is piecewise linear in any single parameter, so a wider step has no
    # truncation error and much less cancellation than 1e-5
    numeric, _ = central_difference(spec, th, x, h=1e-3)
    assert relative_error(engine.param_gradient(spec, th, x), numeric).max() < 1e-6


def test_batched_gradient_equals_per_sample():
    spec = instantiate_network(TINY_SKELETON, SupernetMask.full(NB201))
    th = engine.init_params(spec, 4)
    xs = np.random.default_rng(4).standard_normal((5,) + TINY_SKELETON.input_shape)
    jac = engine.param_gradient(spec, th, xs)
    for k in range(5):
        assert np.allclose(jac[k], engine.param_gradient(spec, th, xs[k]), rtol=1e-12, atol=1e-14)


def test_ntk_gram_equals_jjt():
    spec = instantiate_network(TINY_SKELETON, SupernetMask.full(NB201))
    th = engine.init_params(spec, 5)
    xs = np.random.default_rng(5).standard_normal((6,) + TINY_SKELETON.input_shape)
    jac = engine.param_gradient(spec, th, xs)
    gram = engine.ntk_gram(spec, th, xs)
    assert np.allclose(gram, jac @ jac.T, rtol=1e-12, atol=0)
    assert np.array_equal(gram, gram.T)


def test_forward_deterministic_bitwise():
    spec = instantiate_network(MacroSkeleton(), SupernetMask.full(NB201))
    th = engine.init_params(spec, 0)
    x = np.random.default_rng(0).standard_normal((4, 3, 8, 8))
    a, pa = engine.forward(spec, th, x)
    b, pb = engine.forward(spec, th, x)
    assert a.tobytes() == b.tobytes() and np.array_equal(pa, pb)


def test_pattern_length_constant():
    spec = instantiate_network(TINY_SKELETON, SupernetMask.full(NB201))
    th = engine.init_params(spec, 0)
    xs = np.random.default_rng(0).standard_normal((7,) + TINY_SKELETON.input_shape)
    pats = engine.activation_patterns(spec, th, xs)
    assert pats.shape == (7, spec.relu_units)


@given(st.integers(0, 2**31 - 1))
def test_piecewise_linearity(seed):
    rng = np.random.default_rng(seed)
    mask = random_genotype(NB201, ALL_OPS, rng).to_mask()
    spec = instantiate_network(TINY_SKELETON, mask)
    th = engine.init_params(spec, seed % 1000)
    x1 = rng.standard_normal(TINY_SKELETON.input_shape)
    x2 = x1 + 1e-4 * rng.standard_normal(TINY_SKELETON.input_shape)
    f1, p1 = engine.forward(spec, th, x1)
    f2, p2 = engine.forward(spec, th, x2)
    if not np.array_equal(p1, p2):
        return
    fm, pm = engine.forward(spec, th, 0.5 * (x1 + x2))
    # a linear region is convex, so the midpoint shares the pattern
    assert np.array_equal(pm, p1)
    assert np.allclose(fm, 0.5 * (f1 + f2), atol=1e-9, rtol=0)
