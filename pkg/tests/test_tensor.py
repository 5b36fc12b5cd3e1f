"""Tape semantics and gradient checks for every differentiable primitive."""
from __future__ import annotations

import numpy as np
import pytest

from app.core.exceptions import ShapeMismatchException, ValidationException
from app.domain.tensor import ops
from app.domain.tensor.gradcheck import check_gradients
from app.domain.tensor.tensor import Tape, Tensor, constant, parameter


class TestTape:
    def test_leaf_without_use_gets_zero_gradient(self):
        a = parameter(np.array([1.0, 2.0]))
        b = parameter(np.array([3.0, 4.0]))
        with Tape() as tape:
            tape.watch(b)
            loss = ops.sum_all(ops.mul(a, a))
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[a], [2.0, 4.0])
        np.testing.assert_array_equal(grads[b], [0.0, 0.0])

    def test_reused_input_accumulates(self):
        a = parameter(np.array([1.5, -2.0]))
        with Tape() as tape:
            loss = ops.sum_all(ops.add(ops.mul(a, a), a))
        np.testing.assert_allclose(tape.backward(loss)[a], 2 * a.data + 1)

    def test_constants_get_no_gradient(self):
        a = parameter(np.ones(3))
        c = constant(np.full(3, 2.0))
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(a, c))
        grads = tape.backward(loss)
        assert c not in grads
        np.testing.assert_array_equal(grads[a], c.data)

    def test_backward_needs_scalar(self):
        a = parameter(np.ones((2, 2)))
        with Tape() as tape:
            out = ops.scale(a, 2.0)
        with pytest.raises(ValidationException):
            tape.backward(out)

    def test_no_recording_outside_a_tape(self):
        a = parameter(np.ones(2))
        out = ops.add(a, a)
        with Tape() as tape:
            pass
        assert not tape.entries
        assert out.requires_grad

    def test_tensors_are_read_only(self):
        t = Tensor(np.zeros(3))
        with pytest.raises(ValueError):
            t.data[0] = 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchException):
            ops.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))

    def test_gradient_is_linear_in_the_loss(self, rng):
        x = parameter(rng.standard_normal((2, 5, 5)))
        k = parameter(rng.standard_normal((3, 2, 3, 3)))

        def first():
            return ops.sum_all(ops.silu(ops.conv2d(x, k)))

        def second():
            return ops.sum_all(ops.mul(x, x))

        def grads_of(build):
            with Tape() as tape:
                tape.watch(x, k)
                loss = build()
            g = tape.backward(loss)
            return g[x], g[k]

        a, b = 0.7, -2.5
        gx1, gk1 = grads_of(first)
        gx2, gk2 = grads_of(second)
        gx, gk = grads_of(lambda: ops.add(ops.scale(first(), a), ops.scale(second(), b)))
        np.testing.assert_allclose(gx, a * gx1 + b * gx2, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(gk, a * gk1 + b * gk2, rtol=1e-12, atol=1e-12)

    def test_replay_is_bitwise_identical(self, rng):
        x = parameter(rng.standard_normal((2, 6, 6)))
        k = parameter(rng.standard_normal((4, 2, 3, 3)))
        gamma = parameter(rng.standard_normal(4))
        beta = constant(rng.standard_normal(4))
        with Tape() as tape:
            out = ops.silu(ops.group_norm(ops.conv2d(x, k), gamma, beta, groups=2))
        same = {x: x.data.copy(), k: k.data.copy(), gamma: gamma.data.copy()}
        first = tape.replay(same)[out.id]
        second = tape.replay(same)[out.id]
        assert first.tobytes() == out.data.tobytes()
        assert second.tobytes() == out.data.tobytes()

    def test_replay_substitutes_leaf_values(self, rng):
        a = parameter(rng.standard_normal(4))
        with Tape() as tape:
            out = ops.mul(a, a)
        new = rng.standard_normal(4)
        np.testing.assert_array_equal(tape.replay({a: new})[out.id], new * new)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 5, 5))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1.0
        np.testing.assert_array_equal(ops.conv2d(Tensor(x), Tensor(k)).data, x)

    def test_matches_direct_loop(self, rng):
        x = rng.standard_normal((2, 4, 4))
        k = rng.standard_normal((3, 2, 3, 3))
        out = ops.conv2d(Tensor(x), Tensor(k)).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        expected = np.zeros((3, 4, 4))
        for o in range(3):
            for r in range(4):
                for c in range(4):
                    expected[o, r, c] = np.sum(k[o] * xp[:, r : r + 3, c : c + 3])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_gradient(self, rng):
        x = rng.standard_normal((2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        assert check_gradients(ops.conv2d, [x, k]).max_rel_error < 1e-6

    def test_one_by_one_gradient(self, rng):
        x = rng.standard_normal((3, 4, 4))
        k = rng.standard_normal((2, 3, 1, 1))
        assert check_gradients(ops.conv2d, [x, k]).max_rel_error < 1e-6

    def test_rejects_even_kernel(self):
        with pytest.raises(ShapeMismatchException):
            ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


class TestGroupNorm:
    def test_single_group_matches_two_pass(self, rng):
        x = rng.standard_normal((4, 3, 3))
        out = ops.group_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), groups=1).data
        mean = x.sum() / x.size
        var = ((x - mean) ** 2).sum() / x.size
        np.testing.assert_allclose(out, (x - mean) / np.sqrt(var + 1e-5), atol=1e-12)

    def test_gradient(self, rng):
        x = rng.standard_normal((4, 3, 3))
        gamma = rng.standard_normal(4)
        beta = rng.standard_normal(4)
        result = check_gradients(lambda a, g, b: ops.group_norm(a, g, b, groups=2), [x, gamma, beta])
        assert result.max_rel_error < 1e-6

    def test_groups_must_divide_channels(self):
        with pytest.raises(ValidationException):
            ops.group_norm(Tensor(np.zeros((3, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)), groups=2)


class TestElementwise:
    def test_silu_values(self):
        out = ops.silu(Tensor(np.array([0.0, 1.0]))).data
        np.testing.assert_allclose(out, [0.0, 1.0 / (1.0 + np.exp(-1.0))])

    def test_silu_gradient(self, rng):
        assert check_gradients(ops.silu, [rng.standard_normal((3, 4))]).max_rel_error < 1e-6

    def test_linear_gradient(self, rng):
        x, w, b = rng.standard_normal(5), rng.standard_normal((3, 5)), rng.standard_normal(3)
        assert check_gradients(ops.linear, [x, w, b]).max_rel_error < 1e-6

    def test_resampling_gradients(self, rng):
        x = rng.standard_normal((2, 4, 4))
        assert check_gradients(ops.avg_downsample2x, [x]).max_rel_error < 1e-6
        assert check_gradients(ops.nearest_upsample2x, [x]).max_rel_error < 1e-6

    def test_concat_and_channel_bias(self, rng):
        a, b = rng.standard_normal((1, 3, 3)), rng.standard_normal((2, 3, 3))
        assert check_gradients(lambda p, q: ops.concat([p, q]), [a, b]).max_rel_error < 1e-6
        bias = rng.standard_normal(2)
        assert check_gradients(ops.add_channel, [b, bias]).max_rel_error < 1e-6

    def test_dropout_is_identity_without_rng(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 3)))
        assert ops.dropout(x, 0.5, None) is x


def test_composite_chain_gradient(rng):
    x = rng.standard_normal((2, 6, 6))
    k = rng.standard_normal((4, 2, 3, 3))
    gamma = rng.standard_normal(4)
    beta = rng.standard_normal(4)

    def chain(x, k, gamma, beta):
        return ops.silu(ops.group_norm(ops.conv2d(x, k), gamma, beta, groups=2))

    assert check_gradients(chain, [x, k, gamma, beta]).max_rel_error < 1e-5


def test_gradcheck_refuses_single_precision():
    with pytest.raises(ValidationException):
        check_gradients(ops.silu, [np.zeros(3, dtype=np.float32)])
