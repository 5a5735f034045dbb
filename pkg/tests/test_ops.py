"""Tensor-op forward semantics, analytic gradients vs central differences,
and the SGD update rule."""

import numpy as np
import pytest

from tsmkit import ops
from tsmkit.gradcheck import max_rel_error, numerical_gradient, run_all


def naive_conv2d(x, weight, bias, stride=1, padding=0):
    """Direct 7-nested-loop cross-correlation, the independent oracle."""
    n, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (xp[ni, ci, oy * stride + ky,
                                           ox * stride + kx]
                                        * weight[co, ci, ky, kx])
                    out[ni, co, oy, ox] = acc + bias[co]
    return out


class TestConv2d:
    def test_all_ones_sums_kernel(self):
        x = np.ones((1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        out = ops.conv2d(x, w, np.zeros(1))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 9.0

    def test_one_by_one_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 4, 4))
        w = np.ones((1, 1, 1, 1))
        out = ops.conv2d(x, w, np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = ops.conv2d(x, w, b, stride=1, padding=1)
        want = naive_conv2d(x, w, b, stride=1, padding=1)
        assert np.abs(got - want).max() < 1e-12 * max(1, np.abs(want).max())

    @pytest.mark.parametrize("shape,kshape,stride,padding", [
        ((1, 2, 7, 7), (3, 2, 3, 3), 2, 1),
        ((4, 8, 16, 16), (4, 8, 3, 3), 1, 1),
        ((2, 4, 9, 9), (2, 4, 5, 5), 2, 0),
    ])
    def test_oracle_more_shapes(self, shape, kshape, stride, padding):
        rng = np.random.default_rng(hash((shape, stride)) % 2**32)
        x = rng.normal(size=shape)
        w = rng.normal(size=kshape)
        b = rng.normal(size=kshape[0])
        got = ops.conv2d(x, w, b, stride=stride, padding=padding)
        want = naive_conv2d(x, w, b, stride=stride, padding=padding)
        assert np.abs(got - want).max() < 1e-12 * max(1, np.abs(want).max())

    def test_grouped_equals_per_group(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 8, 6, 6))
        w = rng.normal(size=(8, 2, 3, 3))
        b = rng.normal(size=8)
        got = ops.conv2d(x, w, b, padding=1, groups=4)
        parts = [
            ops.conv2d(x[:, 2 * g:2 * g + 2], w[2 * g:2 * g + 2],
                       b[2 * g:2 * g + 2], padding=1)
            for g in range(4)
        ]
        np.testing.assert_allclose(got, np.concatenate(parts, axis=1),
                                   atol=1e-12)

    def test_shape_mismatch_error_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(1, 3, 3, 3\)"):
            ops.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)),
                       np.zeros(1))

    def test_kernel_too_large(self):
        with pytest.raises(ValueError, match="larger than"):
            ops.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)),
                       np.zeros(1))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        a = ops.conv2d(x, w, b, padding=1)
        np.testing.assert_array_equal(a, ops.conv2d(x, w, b, padding=1))


class TestConv2dBackward:
    def test_all_ones_weight_grad_is_one(self):
        x = np.ones((1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        g = np.ones((1, 1, 1, 1))
        _, gw, _ = ops.conv2d_backward(x, w, g)
        np.testing.assert_array_equal(gw, np.ones_like(w))

    def test_bias_grad_is_upstream_sum(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        g = rng.normal(size=(2, 4, 4, 4))
        _, _, gb = ops.conv2d_backward(x, w, g)
        np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)), rtol=1e-12)

    def test_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        p = rng.normal(size=(2, 4, 5, 5))
        gx, gw, gb = ops.conv2d_backward(x, w, p, padding=1)
        for analytic, arg, f in [
            (gx, x, lambda v: float((ops.conv2d(v, w, b, padding=1) * p).sum())),
            (gw, w, lambda v: float((ops.conv2d(x, v, b, padding=1) * p).sum())),
            (gb, b, lambda v: float((ops.conv2d(x, w, v, padding=1) * p).sum())),
        ]:
            assert max_rel_error(analytic, numerical_gradient(f, arg)) < 1e-5

    def test_upstream_shape_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            ops.conv2d_backward(np.zeros((1, 1, 4, 4)),
                                np.zeros((1, 1, 3, 3)),
                                np.zeros((1, 1, 9, 9)))

    def test_cols_cache_identical(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 4, 6, 6))
        w = rng.normal(size=(4, 4, 3, 3))
        g = rng.normal(size=(2, 4, 6, 6))
        _, cols = ops.conv2d(x, w, np.zeros(4), padding=1, return_cols=True)
        plain = ops.conv2d_backward(x, w, g, padding=1)
        cached = ops.conv2d_backward(x, w, g, padding=1, cols_cache=cols)
        for a, b in zip(plain, cached):
            np.testing.assert_array_equal(a, b)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        np.testing.assert_allclose(ops.softmax(np.zeros((1, 3)))[0],
                                   [1 / 3] * 3, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        probs = ops.softmax(rng.normal(scale=10, size=(50, 7)))
        assert (probs >= 0).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_confident_correct_loss_near_zero(self):
        logits = np.array([[30.0, 0.0, 0.0]])
        loss = ops.cross_entropy(ops.softmax(logits), np.array([0]))
        assert loss < 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label out of range"):
            ops.cross_entropy(np.full((1, 3), 1 / 3), np.array([3]))

    def test_fused_backward_finite_differences(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(5, 6))
        labels = rng.integers(0, 6, size=5)
        probs = ops.softmax(logits)
        g = ops.softmax_cross_entropy_backward(probs, labels)
        num = numerical_gradient(
            lambda v: ops.cross_entropy(ops.softmax(v), labels), logits)
        assert max_rel_error(g, num) < 1e-5


class TestDropout:
    def test_eval_mode_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        out, mask = ops.dropout(x, 0.5, seed=0, train=False)
        assert mask is None
        np.testing.assert_array_equal(out, x)

    def test_rate_validation(self):
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(ValueError, match="rate"):
                ops.dropout(np.zeros((2, 2)), rate, seed=0)

    def test_seed_determinism(self):
        x = np.ones((100, 10))
        a, _ = ops.dropout(x, 0.3, seed=42)
        b, _ = ops.dropout(x, 0.3, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_inverted_scaling_preserves_mean(self):
        x = np.ones((2000, 10))
        out, _ = ops.dropout(x, 0.4, seed=1)
        assert abs(out.mean() - 1.0) < 0.05


class TestAffineNorm:
    def test_standardizes_per_channel(self):
        rng = np.random.default_rng(9)
        x = rng.normal(loc=3.0, scale=2.0, size=(8, 4, 5, 5))
        out, _ = ops.affine_norm(x, np.ones(4), np.zeros(4))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)

    def test_scale_shift_applied(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(4, 2, 3, 3))
        out, _ = ops.affine_norm(x, np.array([2.0, 0.0]), np.array([1.0, -1.0]))
        base, _ = ops.affine_norm(x, np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out[:, 0], 2 * base[:, 0] + 1, atol=1e-12)
        np.testing.assert_allclose(out[:, 1], -1.0, atol=1e-12)


class TestSgdStep:
    def test_plain_gradient_descent(self):
        p = {"w": np.array([1.0, 2.0])}
        g = {"w": np.array([0.5, -1.0])}
        v = {"w": np.zeros(2)}
        ops.sgd_step(p, g, v, lr=0.01, momentum=0.0, weight_decay=0.0)
        np.testing.assert_allclose(p["w"], [1.0 - 0.005, 2.0 + 0.01])

    def test_zero_grad_zero_velocity_no_change(self):
        p = {"w": np.array([3.0])}
        ops.sgd_step(p, {"w": np.zeros(1)}, {"w": np.zeros(1)},
                     lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_array_equal(p["w"], [3.0])

    def test_two_momentum_steps(self):
        # v1 = g, v2 = 0.9 g + g; total delta = -lr (g + 1.9 g)
        g = np.array([2.0])
        p = {"w": np.array([0.0])}
        grads = {"w": g}
        v = {"w": np.zeros(1)}
        ops.sgd_step(p, grads, v, lr=0.01, momentum=0.9, weight_decay=0.0)
        ops.sgd_step(p, grads, v, lr=0.01, momentum=0.9, weight_decay=0.0)
        np.testing.assert_allclose(p["w"], [-0.01 * (2.0 + 1.9 * 2.0)])

    def test_weight_decay(self):
        p = {"w": np.array([10.0])}
        ops.sgd_step(p, {"w": np.zeros(1)}, {"w": np.zeros(1)},
                     lr=0.1, momentum=0.0, weight_decay=0.01)
        np.testing.assert_allclose(p["w"], [10.0 - 0.1 * 0.1])

    def test_non_finite_gradient_aborts(self):
        with pytest.raises(FloatingPointError, match="non-finite"):
            ops.sgd_step({"w": np.zeros(1)}, {"w": np.array([np.nan])},
                         {"w": np.zeros(1)}, lr=0.01)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ops.sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)},
                         {"w": np.zeros(2)}, lr=0.01)


class TestOtherBackwards:
    def test_all_ops_pass_finite_differences(self):
        for name, err in run_all(seed=123).items():
            assert err < 1e-5, f"{name}: {err}"

    def test_global_avg_pool(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        np.testing.assert_allclose(ops.global_avg_pool(x), [[7.5]])

    def test_linear_shape_error(self):
        with pytest.raises(ValueError, match="mismatch"):
            ops.linear(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(4))
