import numpy as np
import pytest

from ordengage.diffcore import (
    Tape,
    Tensor,
    activation,
    backward,
    concat,
    conv1d_causal,
    log_softmax,
    masked_logsumexp_rows,
    matmul,
    mul,
    narrow,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    take_per_row,
    tanh,
    transpose,
    tsum,
    weighted_sum,
)
from ordengage.errors import ContractError, ParameterError, ShapeError

from oracles import conv1d_causal_reference


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[2.0], [4.0]])

    def test_zero_annihilates(self):
        out = matmul(Tensor(np.zeros((3, 2))), Tensor(np.arange(8.0).reshape(2, 4)))
        assert not out.data.any()

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_backward_rules(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        with Tape() as tape:
            loss = tsum(matmul(a, b))
            grads = backward(tape, loss)
        g = np.ones((2, 4))
        np.testing.assert_allclose(grads[a], g @ b.data.T)
        np.testing.assert_allclose(grads[b], a.data.T @ g)


class TestConv1dCausal:
    def test_identity_kernel(self):
        out = conv1d_causal(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0]]]), 1)
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_hand_convolution(self):
        out = conv1d_causal(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[0.0, 1.0]]]), 1)
        np.testing.assert_array_equal(out.data, [[0.0, 1.0, 2.0]])

    def test_hand_dilated(self):
        out = conv1d_causal(Tensor([[1.0, 1.0, 1.0, 1.0]]), Tensor([[[1.0, 1.0]]]), 2)
        np.testing.assert_array_equal(out.data, [[1.0, 1.0, 2.0, 2.0]])

    def test_bad_dilation(self):
        with pytest.raises(ParameterError):
            conv1d_causal(Tensor([[1.0, 2.0]]), Tensor([[[1.0]]]), 0)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(7)
        for dilation in (1, 2, 3):
            x = rng.normal(size=(3, 11))
            w = rng.normal(size=(2, 3, 4))
            out = conv1d_causal(Tensor(x), Tensor(w), dilation)
            np.testing.assert_allclose(
                out.data, conv1d_causal_reference(x, w, dilation), atol=1e-12
            )

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 2, 9))
        w = rng.normal(size=(3, 2, 3))
        batched = conv1d_causal(Tensor(x), Tensor(w), 2)
        for i in range(4):
            single = conv1d_causal(Tensor(x[i]), Tensor(w), 2)
            np.testing.assert_allclose(batched.data[i], single.data)

    def test_causality_by_perturbation(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 10))
        w = rng.normal(size=(2, 2, 3))
        base = conv1d_causal(Tensor(x), Tensor(w), 2).data
        for t in range(10):
            bumped = x.copy()
            bumped[:, t] += 5.0
            out = conv1d_causal(Tensor(bumped), Tensor(w), 2).data
            # outputs strictly before the perturbed frame are untouched
            np.testing.assert_array_equal(out[:, :t], base[:, :t])


class TestActivations:
    def test_sigmoid_symmetry_point(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    def test_tanh_reference_value(self):
        assert tanh(Tensor(1.0)).item() == pytest.approx(0.761594, abs=1e-6)

    def test_softmax_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.25, 0.25, 0.25, 0.25])

    def test_softmax_is_distribution(self):
        rng = np.random.default_rng(3)
        x = rng.normal(scale=8.0, size=(20, 6))
        out = softmax(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out > 0) and np.all(out < 1)

    def test_log_softmax_consistency(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 7))
        np.testing.assert_allclose(
            log_softmax(Tensor(x)).data, np.log(softmax(Tensor(x)).data), atol=1e-12
        )

    def test_relu(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_softplus_extreme_logits(self):
        out = softplus(Tensor([50.0, -50.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] == pytest.approx(50.0)
        assert out.data[2] == pytest.approx(np.log(2.0))

    def test_dispatcher(self):
        assert activation(Tensor(0.0), "sigmoid").item() == 0.5
        with pytest.raises(ParameterError):
            activation(Tensor(0.0), "swish")


class TestBackward:
    def test_sum_gives_ones(self):
        p = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            grads = backward(tape, tsum(p))
        np.testing.assert_array_equal(grads[p], np.ones((2, 3)))

    def test_square_scalar(self):
        p = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            grads = backward(tape, mul(p, p))
        assert grads[p] == pytest.approx(6.0)

    def test_non_scalar_loss_rejected(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = mul(p, p)
            with pytest.raises(ContractError):
                backward(tape, out)

    def test_non_parameter_leaves_get_no_gradient(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])
        with Tape() as tape:
            grads = backward(tape, tsum(mul(p, c)))
        assert p in grads and c not in grads

    def test_two_passes_bit_identical(self):
        rng = np.random.default_rng(5)
        p = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        with Tape() as tape:
            loss = tsum(relu(matmul(p, p)))
            first = backward(tape, loss)
            second = backward(tape, loss)
        assert np.array_equal(first[p], second[p])


class TestShapeOps:
    def test_reshape_is_view_with_same_count(self):
        a = Tensor(np.arange(6.0))
        out = reshape(a, (2, 3))
        assert out.data.base is a.data or out.data.flags.owndata is False
        with pytest.raises(ShapeError):
            reshape(a, (4, 2))

    def test_narrow_and_concat_roundtrip(self):
        rng = np.random.default_rng(6)
        a = Tensor(rng.normal(size=(3, 8)))
        left = narrow(a, 1, 0, 3)
        right = narrow(a, 1, 3, 5)
        np.testing.assert_array_equal(concat([left, right], axis=1).data, a.data)

    def test_transpose_backward(self):
        a = Tensor(np.arange(24.0).reshape(2, 3, 4), requires_grad=True)
        w = np.arange(24.0).reshape(4, 3, 2)
        with Tape() as tape:
            loss = weighted_sum(transpose(a, (2, 1, 0)), w)
            grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[a], w.transpose(2, 1, 0))

    def test_take_per_row(self):
        a = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        out = take_per_row(a, [1, 0, 3])
        np.testing.assert_array_equal(out.data, [1.0, 4.0, 11.0])
        with pytest.raises(ContractError):
            take_per_row(a, [0, 0, 4])

    def test_masked_logsumexp_rows(self):
        x = np.array([[0.0, 1.0, 2.0], [5.0, 5.0, 5.0]])
        mask = np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
        out = masked_logsumexp_rows(Tensor(x), mask)
        np.testing.assert_allclose(
            out.data,
            [np.log(np.exp(1.0) + np.exp(2.0)), np.log(2.0) + 5.0],
        )
        with pytest.raises(ContractError):
            masked_logsumexp_rows(Tensor(x), np.zeros((2, 3)))
