import numpy as np
import pytest

from mutud import tensor as tz
from mutud.tensor import (
    GraphError,
    NonFiniteError,
    ShapeError,
    Tensor,
    assert_finite,
    backward,
    concat,
    cosine_similarity,
    dot,
    matmul,
    no_grad,
    record_for,
    softmax_tempered,
)


def t(data, rg=False):
    return Tensor(data, requires_grad=rg)


class TestShapes:
    def test_matmul_shape(self):
        out = matmul(t(np.ones((2, 3))), t(np.ones((3, 2))))
        assert out.shape == (2, 2)
        np.testing.assert_allclose(out.data, 3.0)

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError, match="matmul"):
            matmul(t(np.ones((2, 3))), t(np.ones((4, 2))))

    def test_add_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"add.*\(2, 3\).*\(4, 3\)"):
            t(np.ones((2, 3))) + t(np.ones((4, 3)))

    def test_trailing_broadcast(self):
        out = t(np.ones((5, 3))) + t(np.ones(3))
        assert out.shape == (5, 3)
        out = t(np.ones((5, 1))) * t(np.ones((5, 3)))
        assert out.shape == (5, 3)

    def test_concat_and_slice(self):
        a, b = t([[1.0, 2.0]]), t([[3.0, 4.0]])
        c = concat([a, b], axis=0)
        assert c.shape == (2, 2)
        np.testing.assert_array_equal(c[1].data, [3.0, 4.0])

    def test_reshape_transpose(self):
        a = t(np.arange(6.0).reshape(2, 3))
        assert a.reshape(3, 2).shape == (3, 2)
        assert a.T.shape == (3, 2)

    def test_l2_norm_value(self):
        assert t([3.0, 4.0]).norm().item() == pytest.approx(5.0, abs=1e-12)

    def test_immutability(self):
        a = t([1.0, 2.0])
        with pytest.raises(ValueError):
            a.data[0] = 5.0


class TestSoftmax:
    def test_uniform_on_zeros(self):
        out = softmax_tempered(t([0.0, 0.0, 0.0, 0.0]), 1.0)
        np.testing.assert_allclose(out.data, 0.25, atol=1e-15)

    def test_zero_temperature_flattens(self):
        out = softmax_tempered(t([5.0, -3.0, 0.7]), 0.0)
        np.testing.assert_allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_direct_value(self):
        out = softmax_tempered(t([np.log(2.0), 0.0]), 1.0)
        np.testing.assert_allclose(out.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)

    def test_sum_to_one_many_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = rng.normal(scale=50.0, size=rng.integers(1, 40))
            tau = float(rng.uniform(-5, 5))
            s = softmax_tempered(t(v), tau).data.sum()
            assert abs(s - 1.0) < 1e-9

    def test_overflow_safety(self):
        out = softmax_tempered(t([1e4, 0.0]), 1.0)
        assert np.all(np.isfinite(out.data))


class TestCosine:
    def test_identical_direction(self):
        assert cosine_similarity(t([1.0, 0.0]), t([1.0, 0.0])).item() == 1.0

    def test_orthogonal(self):
        assert cosine_similarity(t([1.0, 0.0]), t([0.0, 1.0])).item() == 0.0

    def test_derived_value(self):
        got = cosine_similarity(t([1.0, 1.0]), t([1.0, 0.0])).item()
        assert got == pytest.approx(0.70710678, abs=1e-8)

    def test_zero_vector_guarded(self):
        assert cosine_similarity(t([0.0, 0.0]), t([1.0, 2.0])).item() == 0.0

    def test_bitwise_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x, y = rng.normal(size=8), rng.normal(size=8)
            assert cosine_similarity(t(x), t(y)).item() == cosine_similarity(t(y), t(x)).item()


class TestBackward:
    def test_sum_of_squares(self):
        x = t([1.0, 2.0], rg=True)
        loss = (x * x).sum()
        grads = backward(loss)
        np.testing.assert_allclose(grads[x], [2.0, 4.0], atol=1e-15)

    def test_constant_loss_zero_grads(self):
        x = t([1.0, 2.0], rg=True)
        loss = Tensor(3.0)
        grads = backward(loss, params=[x])
        np.testing.assert_array_equal(grads[x], [0.0, 0.0])

    def test_unconnected_loss_without_params_raises(self):
        with pytest.raises(GraphError):
            backward(Tensor(3.0))

    def test_non_scalar_loss_raises(self):
        x = t([1.0, 2.0], rg=True)
        with pytest.raises(GraphError):
            backward(x * x)

    def test_softmax_grad_sums_to_zero(self):
        x = t([0.3, -1.2, 0.7], rg=True)
        loss = softmax_tempered(x, 1.0)[0].sum()
        grads = backward(loss)
        assert abs(grads[x].sum()) < 1e-12

    def test_determinism_same_recording(self):
        rng = np.random.default_rng(0)
        x = t(rng.normal(size=(4, 3)), rg=True)
        w = t(rng.normal(size=(3, 2)), rg=True)
        loss = (matmul(x, w).exp()).sum()
        g1 = backward(loss)
        g2 = backward(loss)
        assert np.array_equal(g1[x], g2[x]) and np.array_equal(g1[w], g2[w])

    def test_reverse_recording_order(self):
        x = t([2.0], rg=True)
        y = (x * 3.0 + 1.0).log()
        rec = record_for(y)
        seqs = [op.seq for op in rec.ops]
        assert seqs == sorted(seqs) and len(rec) == 3

    def test_diamond_accumulates_once(self):
        x = t([3.0], rg=True)
        y = x * 2.0
        loss = (y + y * x).sum()  # 2x + 2x^2, grad = 2 + 4x = 14
        grads = backward(loss)
        np.testing.assert_allclose(grads[x], [14.0], atol=1e-12)

    def test_no_grad_blocks_recording(self):
        x = t([1.0, 2.0], rg=True)
        with no_grad():
            y = (x * x).sum()
        assert y._op is None and not y.requires_grad

    def test_abs_and_norm_subgradient_zero(self):
        x = t([0.0, 3.0], rg=True)
        grads = backward(x.abs().sum())
        np.testing.assert_array_equal(grads[x], [0.0, 1.0])
        z = t([0.0, 0.0], rg=True)
        grads = backward(z.norm())
        np.testing.assert_array_equal(grads[z], [0.0, 0.0])

    def test_broadcast_unreduces(self):
        x = t(np.ones((4, 3)), rg=True)
        b = t(np.ones(3), rg=True)
        grads = backward((x + b).sum())
        np.testing.assert_array_equal(grads[b], [4.0, 4.0, 4.0])
        np.testing.assert_array_equal(grads[x], np.ones((4, 3)))


class TestFiniteCheck:
    def test_assert_finite_passes(self):
        assert_finite(t([1.0, 2.0]), "ok")

    def test_assert_finite_raises(self):
        bad = Tensor.__new__(Tensor)
        bad.data = np.array([1.0, np.nan])
        bad.requires_grad = False
        bad.grad = None
        bad._op = None
        with pytest.raises(NonFiniteError, match="noisy input"):
            assert_finite(bad, "noisy input")
