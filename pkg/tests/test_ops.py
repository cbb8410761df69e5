import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from weldsign import ops
from weldsign.tensor import ShapeError


def rel_close(a, b, tol=1e-5):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(1.0, float(np.abs(b).max(initial=0)))
    assert a.shape == b.shape
    assert float(np.abs(a - b).max(initial=0)) <= tol * scale


# ---------------------------------------------------------------- conv

def test_conv_scalar():
    out = ops.conv2d(np.array([[[5.0]]], np.float32), np.full((1, 1, 1, 1), 2.0, np.float32))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 10


def test_conv_zero_input_zero_output(rng):
    w = rng.normal(size=(3, 3, 4, 5)).astype(np.float32)
    out = ops.conv2d(np.zeros((8, 8, 4), np.float32), w, np.zeros(5, np.float32), 1, 1)
    assert not out.any()


def test_conv_dense_matches_direct_sum(rng):
    x = rng.normal(size=(5, 5, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    rel_close(ops.conv2d(x, w, None, 1, 1), oracles.conv2d(x, w, None, 1, (1,) * 4, 1))


def test_conv_grouped_equals_per_group_dense(rng):
    x = rng.normal(size=(6, 6, 4))
    w = rng.normal(size=(3, 3, 2, 6))
    per = [ops.conv2d(x[..., 2 * g:2 * g + 2], w[..., 3 * g:3 * g + 3], None, 1, 1) for g in range(2)]
    rel_close(ops.conv2d(x, w, None, 1, 1, groups=2), np.concatenate(per, axis=-1))


@given(st.integers(1, 3), st.sampled_from([1, 3]), st.sampled_from([1, 2]), st.integers(0, 1),
       st.integers(0, 2 ** 31), st.booleans())
def test_conv_random_against_oracle(g_mult, k, stride, pad, seed, bias):
    r = np.random.default_rng(seed)
    groups = int(r.integers(1, 4))
    cig = int(r.integers(1, 3))
    cin, cout = groups * cig, groups * g_mult
    h, w = int(r.integers(k, 7)), int(r.integers(k, 7))
    x = r.normal(size=(h, w, cin))
    wt = r.normal(size=(k, k, cig, cout))
    b = r.normal(size=cout) if bias else None
    rel_close(ops.conv2d(x, wt, b, stride, pad, groups),
              oracles.conv2d(x, wt, b, stride, (pad,) * 4, groups))


def test_conv_batched_equals_per_image(rng):
    x = rng.normal(size=(3, 6, 5, 4)).astype(np.float32)
    w = rng.normal(size=(3, 3, 1, 8)).astype(np.float32)
    out = ops.conv2d(x, w, None, 2, 1, groups=4)
    for n in range(3):
        np.testing.assert_allclose(out[n], ops.conv2d(x[n], w, None, 2, 1, groups=4), rtol=1e-6)


@pytest.mark.parametrize("c,groups", [(8, 8), (64, 64), (512, 512)])
def test_group_param_ratio_is_exactly_g(c, groups):
    normal = ops.conv_param_count(3, c, c, 1)
    grouped = ops.conv_param_count(3, c, c, groups)
    assert normal == groups * grouped


def test_group_count_is_gcd():
    assert ops.group_count(64, 256) == 64
    assert ops.group_count(256, 512) == 256
    assert ops.group_count(3, 64) == 1


def test_conv_rejects_bad_groups_and_empty_output():
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((4, 4, 3)), np.zeros((3, 3, 1, 4)), groups=2)
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((4, 4, 4)), np.zeros((3, 3, 2, 4)), groups=1)
    with pytest.raises(ShapeError):
        ops.conv2d(np.zeros((2, 2, 1)), np.zeros((3, 3, 1, 1)))


def test_conv_output_size_formula():
    x = np.zeros((5, 5, 1), np.float32)
    assert ops.conv2d(x, np.zeros((3, 3, 1, 1), np.float32), None, 2, 1).shape == (3, 3, 1)


# ---------------------------------------------------------------- batchnorm

def test_bn_identity_and_gamma_zero(rng):
    x = rng.normal(size=(4, 4, 3))
    one, zero = np.ones(3), np.zeros(3)
    np.testing.assert_allclose(ops.batchnorm_infer(x, one, zero, zero, one, eps=0), x)
    beta = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(ops.batchnorm_infer(x, zero, beta, zero, one), np.broadcast_to(beta, x.shape))


@given(st.integers(0, 2 ** 31))
def test_bn_matches_oracle(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(4, 4, 3))
    g, b, m = r.normal(size=3), r.normal(size=3), r.normal(size=3)
    v = r.uniform(0.1, 2, size=3)
    rel_close(ops.batchnorm_infer(x, g, b, m, v), oracles.batchnorm(x, g, b, m, v, ops.BN_EPS), 1e-6)


def test_bn_length_mismatch():
    with pytest.raises(ShapeError):
        ops.batchnorm_infer(np.zeros((2, 2, 3)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))


def test_bn_train_normalizes(rng):
    x = rng.normal(3, 5, size=(4, 6, 6, 5))
    out, _, mean, var = ops.batchnorm_train_forward(x, np.ones(5), np.zeros(5))
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1, atol=1e-4)
    np.testing.assert_allclose(mean, x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(var, x.var(axis=(0, 1, 2)))


def test_running_stats_use_unbiased_var_and_momentum():
    rm, rv = ops.update_running_stats(np.zeros(1), np.ones(1), np.array([2.0]), np.array([3.0]), 4)
    np.testing.assert_allclose(rm, [0.2])
    np.testing.assert_allclose(rv, [0.9 + 0.1 * 4.0])


# ---------------------------------------------------------------- relu / pool

def test_relu_examples(rng):
    np.testing.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    pos = rng.uniform(0.1, 1, size=(3, 3, 2))
    np.testing.assert_array_equal(ops.relu(pos), pos)
    x = rng.normal(size=(4, 4, 3))
    np.testing.assert_array_equal(ops.relu(x), oracles.relu(x))


def test_maxpool_identity_and_ramp(rng):
    x = rng.normal(size=(5, 5, 2))
    np.testing.assert_array_equal(ops.maxpool(x, 1, 1), x)
    ramp = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
    np.testing.assert_array_equal(ops.maxpool(ramp, 2, 2)[..., 0], [[5, 7], [13, 15]])


def test_maxpool_s12_shape(rng):
    x = rng.normal(size=(13, 13, 8))
    out = ops.maxpool(x, 2, 1, (0, 1, 0, 1))
    assert out.shape == (13, 13, 8)
    rel_close(out, oracles.maxpool(x, 2, 1, (0, 1, 0, 1)))


def test_maxpool_padding_never_wins():
    x = -np.ones((3, 3, 1))
    assert (ops.maxpool(x, 3, 1, 1) == -1).all()


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3, 5]), st.sampled_from([1, 2]))
def test_maxpool_random_and_homogeneous(seed, k, stride):
    r = np.random.default_rng(seed)
    x = r.normal(size=(int(r.integers(k, 8)), int(r.integers(k, 8)), 2))
    pad = (k - 1) // 2
    out = ops.maxpool(x, k, stride, pad)
    rel_close(out, oracles.maxpool(x, k, stride, (pad,) * 4))
    np.testing.assert_allclose(ops.maxpool(2.5 * x, k, stride, pad), 2.5 * out)


def test_maxpool_rejects_empty():
    with pytest.raises(ShapeError):
        ops.maxpool(np.zeros((1, 1, 1)), 2, 2)


def test_global_avgpool_examples(rng):
    np.testing.assert_array_equal(ops.global_avgpool(np.full((3, 4, 2), 7.0)), np.full((1, 1, 2), 7.0))
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1)
    assert ops.global_avgpool(x)[0, 0, 0] == 2.5


def test_global_avgpool_large_oracle(rng):
    x = rng.normal(size=(56, 56, 512)).astype(np.float32)
    expect = x.astype(np.float64).mean(axis=(0, 1), keepdims=True)
    rel_close(ops.global_avgpool(x), expect)


# ---------------------------------------------------------------- fc / softmax / sigmoid

def test_fc_examples(rng):
    x = rng.normal(size=6)
    np.testing.assert_allclose(ops.fully_connected(x, np.eye(6), np.zeros(6)), x)
    b = rng.normal(size=4)
    np.testing.assert_array_equal(ops.fully_connected(x, np.zeros((6, 4)), b), b)
    w = rng.normal(size=(512, 4))
    x = rng.normal(size=512)
    rel_close(ops.fully_connected(x, w, b), oracles.fully_connected(x, w, b))


def test_fc_dim_mismatch():
    with pytest.raises(ShapeError):
        ops.fully_connected(np.zeros(5), np.zeros((6, 2)), np.zeros(2))


def test_softmax_examples(rng):
    np.testing.assert_allclose(ops.softmax(np.zeros(4)), [0.25] * 4)
    x = rng.normal(size=4)
    np.testing.assert_allclose(ops.softmax(x + 123.0), ops.softmax(x), atol=1e-6)
    rel_close(ops.softmax(x), oracles.softmax(x), 1e-12)
    assert abs(ops.softmax(rng.normal(size=10).astype(np.float32)).sum() - 1) < 1e-6


def test_sigmoid_examples(rng):
    assert ops.sigmoid(np.array(0.0)) == 0.5
    x = rng.normal(scale=5, size=50)
    np.testing.assert_allclose(ops.sigmoid(x) + ops.sigmoid(-x), 1, atol=1e-6)
    rel_close(ops.sigmoid(x), oracles.sigmoid(x), 1e-12)
    big = ops.sigmoid(np.array([-30.0, 30.0], np.float32))
    assert (big > 0).all() and (big < 1).all()


def test_upsample(rng):
    np.testing.assert_array_equal(ops.upsample_nearest_2x(np.full((1, 1, 1), 3.0)), np.full((2, 2, 1), 3.0))
    assert ops.upsample_nearest_2x(np.zeros((13, 13, 128))).shape == (26, 26, 128)
    x = rng.normal(size=(3, 4, 2))
    np.testing.assert_array_equal(ops.upsample_nearest_2x(x), oracles.upsample2x(x))


def test_ops_do_not_mutate(rng):
    x = rng.normal(size=(5, 5, 4))
    keep = x.copy()
    ops.conv2d(x, rng.normal(size=(3, 3, 1, 4)), None, 1, 1, 4)
    ops.maxpool(x, 3, 1, 1)
    ops.batchnorm_train_forward(x, np.ones(4), np.zeros(4))
    ops.relu(x)
    np.testing.assert_array_equal(x, keep)
