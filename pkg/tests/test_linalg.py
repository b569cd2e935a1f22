import numpy as np
import pytest

from erpbpnn.linalg import as_matrix, as_vector, lsq_slope, matvec, tanh_vec


def oracle_slope(xs, ys):
    """Independent least-squares fit via the normal equations (lstsq)."""
    design = np.stack([np.asarray(xs, dtype=float), np.ones(len(xs))], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(ys, dtype=float), rcond=None)
    return coef[0]


class TestMatvec:
    def test_identity(self):
        np.testing.assert_array_equal(matvec(np.eye(2), [3.0, 4.0]), [3.0, 4.0])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(matvec(np.zeros((2, 2)), [3.0, 4.0]), [0.0, 0.0])

    def test_hand_multiplication(self):
        np.testing.assert_allclose(matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matvec(np.eye(2), [1.0, 2.0, 3.0])

    def test_linearity(self, rng):
        for _ in range(50):
            m = rng.standard_normal((4, 3))
            u = rng.standard_normal(3)
            v = rng.standard_normal(3)
            a, b = rng.standard_normal(2)
            lhs = matvec(m, a * u + b * v)
            rhs = a * matvec(m, u) + b * matvec(m, v)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestTanhVec:
    def test_zero(self):
        np.testing.assert_array_equal(tanh_vec([0.0, 0.0]), [0.0, 0.0])

    def test_saturation(self):
        assert abs(tanh_vec([100.0])[0] - 1.0) < 1e-12
        assert abs(tanh_vec([-100.0])[0] + 1.0) < 1e-12

    def test_unit_value(self):
        # 0.76159415595576488811... computed with 50-digit arithmetic.
        assert tanh_vec([1.0])[0] == pytest.approx(0.7615941559557649, abs=1e-15)

    def test_range_strict(self, rng):
        # In float64, tanh saturates to exactly +-1.0 for |x| > ~19; strict
        # bounds are tested over the representable range.
        x = rng.uniform(-18.0, 18.0, size=1000)
        y = tanh_vec(x)
        assert np.all(y > -1.0) and np.all(y < 1.0)


class TestLsqSlope:
    def test_constant_series(self):
        assert lsq_slope(np.arange(1.0, 6.0), np.full(5, 3.7)) == pytest.approx(0.0, abs=1e-12)

    def test_exact_line(self):
        assert lsq_slope(np.arange(1.0, 6.0), np.arange(1.0, 6.0)) == pytest.approx(1.0)

    def test_alternating_series(self):
        xs = np.arange(1.0, 6.0)
        ys = np.array([0.0, 1.0, 0.0, 1.0, 0.0])
        assert lsq_slope(xs, ys) == pytest.approx(oracle_slope(xs, ys), abs=1e-12)
        assert lsq_slope(xs, ys) == pytest.approx(0.0, abs=1e-12)

    def test_matches_oracle_on_random_windows(self, rng):
        for _ in range(200):
            xs = np.arange(5, dtype=float) + rng.integers(0, 1000)
            ys = rng.standard_normal(5) * 10
            assert lsq_slope(xs, ys) == pytest.approx(oracle_slope(xs, ys), abs=1e-10)

    def test_line_recovery(self, rng):
        for _ in range(100):
            a, b = rng.standard_normal(2) * 5
            xs = np.arange(10, dtype=float) + rng.integers(0, 100)
            assert lsq_slope(xs, a * xs + b) == pytest.approx(a, abs=1e-10)

    def test_shift_invariance(self, rng):
        xs = np.arange(7, dtype=float)
        ys = rng.standard_normal(7)
        base = lsq_slope(xs, ys)
        assert lsq_slope(xs, ys + 123.456) == pytest.approx(base, abs=1e-12)

    def test_degenerate_xs(self):
        with pytest.raises(ValueError, match="equal"):
            lsq_slope(np.full(5, 2.0), np.arange(5.0))

    def test_too_short(self):
        with pytest.raises(ValueError, match="two points"):
            lsq_slope([1.0], [1.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            lsq_slope([1.0, 2.0], [1.0, 2.0, 3.0])


class TestValidators:
    def test_as_matrix_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            as_matrix([[1.0, np.nan]])

    def test_as_vector_rejects_matrix(self):
        with pytest.raises(ValueError, match="1-D"):
            as_vector([[1.0, 2.0]])
