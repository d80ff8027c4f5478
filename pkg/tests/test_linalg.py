import numpy as np
import pytest

from layerlab import linalg
from layerlab.errors import NumericalError, ShapeError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for t in range(a.shape[1]):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def power_iteration_norm(a, iters=5000):
    v = np.ones(a.shape[1]) / np.sqrt(a.shape[1])
    g = a.T @ a
    for _ in range(iters):
        v = g @ v
        v /= np.linalg.norm(v)
    return float(np.sqrt(v @ g @ v))


class TestMatmul:
    def test_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(linalg.matmul(np.eye(3), a), a)

    def test_hand_computed(self):
        out = linalg.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
        assert np.array_equal(out, [[2.0], [4.0]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        assert np.allclose(linalg.matmul(a, b), naive_matmul(a, b), atol=1e-14)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match="2x3.*4x2"):
            linalg.matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(NumericalError):
            linalg.matmul(np.array([[np.nan, 1.0]]), np.ones((2, 1)))


class TestSvd:
    def test_identity(self):
        res = linalg.svd(np.eye(3))
        assert np.allclose(res.sigma, [1.0, 1.0, 1.0])

    def test_diagonal(self):
        res = linalg.svd(np.diag([3.0, 2.0]))
        assert np.allclose(res.sigma, [3.0, 2.0])

    @pytest.mark.parametrize("shape", [(4, 3), (3, 4), (6, 6), (200, 180)])
    def test_reconstruction_and_orthonormality(self, shape):
        rng = np.random.default_rng(shape[0] * 1000 + shape[1])
        a = rng.standard_normal(shape)
        res = linalg.svd(a)
        scale = max(1.0, np.linalg.norm(a))
        assert np.linalg.norm(res.reconstruct() - a) <= 1e-10 * scale
        r = min(shape)
        assert np.linalg.norm(res.u.T @ res.u - np.eye(r)) <= 1e-10
        assert np.linalg.norm(res.v.T @ res.v - np.eye(r)) <= 1e-10
        assert np.all(np.diff(res.sigma) <= 0)
        assert np.all(res.sigma >= 0)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericalError):
            linalg.svd(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestNorms:
    def test_three_four_five(self):
        assert linalg.frobenius_norm([[3.0, 4.0]]) == pytest.approx(5.0)

    def test_zero(self):
        assert linalg.frobenius_norm(np.zeros((4, 2))) == 0.0

    def test_matches_elementwise_sum(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 6))
        oracle = np.sqrt(sum(v * v for v in a.ravel()))
        assert linalg.frobenius_norm(a) == pytest.approx(oracle, abs=1e-14)

    def test_spectral_identity(self):
        assert linalg.spectral_norm(np.eye(5)) == pytest.approx(1.0)

    def test_spectral_diagonal(self):
        assert linalg.spectral_norm(np.diag([3.0, 2.0])) == pytest.approx(3.0)

    def test_spectral_matches_power_iteration(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 5))
        assert linalg.spectral_norm(a) == pytest.approx(
            power_iteration_norm(a), abs=1e-8
        )

    def test_spectral_below_frobenius(self):
        rng = np.random.default_rng(3)
        for trial in range(20):
            a = rng.standard_normal((rng.integers(2, 8), rng.integers(2, 8)))
            assert linalg.spectral_norm(a) <= linalg.frobenius_norm(a) + 1e-12


class TestTrace:
    def test_identity(self):
        assert linalg.trace(np.eye(4)) == 4.0

    def test_hand_computed(self):
        assert linalg.trace([[1.0, 9.0], [9.0, 2.0]]) == 3.0

    def test_non_square(self):
        with pytest.raises(ShapeError):
            linalg.trace(np.ones((2, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gram_trace_equals_squared_frobenius(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
        lhs = linalg.trace(linalg.matmul(a, a.T))
        rhs = linalg.frobenius_norm(a) ** 2
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)
