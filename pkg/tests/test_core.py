import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sagdiv.core import (
    Dataset,
    LearningRateSchedule,
    LossSpec,
    SearchSetSpec,
    loss_deriv2,
    loss_value,
    project_linf,
)
from sagdiv.errors import InvalidInputError

finite = st.floats(-1e6, 1e6, allow_nan=False)


class TestDataset:
    def test_vectors_become_columns(self):
        d = Dataset(np.arange(3.0), np.arange(3.0), np.zeros(3))
        assert d.x.shape == (3, 1) and d.z.shape == (3, 1) and d.n == 3

    def test_row_mismatch(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((3, 1)), np.zeros((2, 1)), np.zeros(3))

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[0.0], [np.nan]]), np.zeros((2, 1)), np.zeros(2))

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))

    def test_take(self):
        d = Dataset(np.arange(5.0), np.arange(5.0) * 2, np.arange(5.0) * 3)
        sub = d.take(slice(1, 3))
        np.testing.assert_array_equal(sub.y, [3.0, 6.0])


class TestSearchSet:
    def test_default_and_diameter(self):
        s = SearchSetSpec()
        assert s.bound == 10 and s.diameter == 20

    def test_rejects_non_positive(self):
        with pytest.raises(InvalidInputError):
            SearchSetSpec(0.0)


class TestProjection:
    def test_interior_fixed(self):
        np.testing.assert_array_equal(project_linf([0.5, -0.2], 10), [0.5, -0.2])

    def test_clamps(self):
        np.testing.assert_array_equal(project_linf([12, -15, 3], 10), [10, -10, 3])

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            project_linf([1.0, np.inf], 10)

    @given(arrays(float, 20, elements=finite), st.floats(1e-3, 1e3))
    def test_idempotent(self, v, a):
        p = project_linf(v, a)
        np.testing.assert_array_equal(project_linf(p, a), p)
        assert np.all(np.abs(p) <= a)

    @given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite))
    def test_one_lipschitz(self, v, w):
        assert np.all(np.abs(project_linf(v, 3.0) - project_linf(w, 3.0)) <= np.abs(v - w))


class TestLossExamples:
    def test_quadratic(self):
        q = LossSpec.quadratic()
        assert loss_value(q, 3, 1) == 2.0
        assert loss_deriv2(q, 3, 1) == -2.0
        assert q.lipschitz == 1 and q.c0 == 0

    def test_bce_at_zero(self):
        b = LossSpec.logistic_bce(1.0)
        assert loss_value(b, 1, 0) == pytest.approx(math.log(2), abs=1e-15)
        assert loss_deriv2(b, 1, 0) == pytest.approx(-0.5, abs=1e-15)

    def test_bce_extended_precision(self):
        beta = math.sqrt(0.1)
        mpmath.mp.dps = 50
        t = mpmath.mpf(1) / mpmath.sqrt(mpmath.mpf("0.1"))
        expected = float(-mpmath.log(1 - 1 / (1 + mpmath.exp(-t))))
        assert loss_value(LossSpec.logistic_bce(beta), 0, 1) == pytest.approx(expected, rel=1e-14)

    def test_bce_fd_example(self):
        b = LossSpec.logistic_bce(0.5)
        h = 1e-5
        fd = (loss_value(b, 0, 0.3 + h) - loss_value(b, 0, 0.3 - h)) / (2 * h)
        assert loss_deriv2(b, 0, 0.3) == pytest.approx(fd, rel=1e-6)

    def test_bce_constants(self):
        beta = 0.25
        b = LossSpec.logistic_bce(beta)
        assert b.c0 == pytest.approx(1 / (2 * beta))
        assert b.lipschitz == pytest.approx(max(1 / beta, 1 / (4 * beta**2)))
        assert abs(loss_deriv2(b, 0, 0)) == pytest.approx(b.c0)

    def test_bce_stable_far_out(self):
        b = LossSpec.logistic_bce(1.0)
        v = b.value(np.array([0.0, 1.0, 0.0, 1.0]), np.array([700.0, 700.0, -700.0, -700.0]))
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v, [700.0, 0.0, 0.0, 700.0], atol=1e-12)

    @pytest.mark.parametrize("y", [-0.1, 1.5])
    def test_bce_rejects_y_outside_unit_interval(self, y):
        b = LossSpec.logistic_bce(1.0)
        with pytest.raises(InvalidInputError):
            loss_value(b, y, 0.0)
        with pytest.raises(InvalidInputError):
            loss_deriv2(b, y, 0.0)

    def test_extended_derivative_is_affine_in_y(self):
        b = LossSpec.logistic_bce(0.5)
        y = np.array([-1.0, 0.0, 1.0, 2.0])
        g = b.deriv2(y, 0.3, extend=True)
        np.testing.assert_allclose(np.diff(g), -2.0, rtol=1e-12)

    def test_invalid_spec(self):
        with pytest.raises(InvalidInputError):
            LossSpec("hinge")
        with pytest.raises(InvalidInputError):
            LossSpec.logistic_bce(0.0)

    def test_dict_round_trip(self):
        b = LossSpec.logistic_bce(0.3)
        assert LossSpec.from_dict(b.to_dict()) == b


@pytest.fixture(params=["quadratic", "bce"])
def loss(request):
    return LossSpec.quadratic() if request.param == "quadratic" else LossSpec.logistic_bce(math.sqrt(0.1))


class TestLossProperties:
    def _pairs(self, loss, rng, n=1000):
        y = rng.uniform(0, 1, n) if loss.kind == "logistic_bce" else rng.normal(0, 3, n)
        return y, rng.normal(0, 3, n)

    def test_finite_differences(self, loss):
        y, yp = self._pairs(loss, np.random.default_rng(0))
        h = 1e-5
        fd = (loss.value(y, yp + h) - loss.value(y, yp - h)) / (2 * h)
        np.testing.assert_allclose(loss.deriv2(y, yp), fd, rtol=1e-6, atol=1e-8)

    def test_lipschitz(self, loss):
        rng = np.random.default_rng(1)
        y, yp = self._pairs(loss, rng)
        u, up = self._pairs(loss, rng)
        lhs = np.abs(loss.deriv2(y, yp) - loss.deriv2(u, up))
        assert np.all(lhs <= loss.lipschitz * (np.abs(y - u) + np.abs(yp - up)) + 1e-12)

    def test_growth_bound(self, loss):
        y, yp = self._pairs(loss, np.random.default_rng(2))
        assert np.all(np.abs(loss.deriv2(y, yp)) <= loss.c0 + loss.lipschitz * (np.abs(y) + np.abs(yp)) + 1e-12)

    def test_convex_in_prediction(self, loss):
        rng = np.random.default_rng(3)
        y, a = self._pairs(loss, rng)
        b = rng.normal(0, 3, y.size)
        mid = loss.value(y, (a + b) / 2)
        assert np.all(mid <= 0.5 * loss.value(y, a) + 0.5 * loss.value(y, b) + 1e-12)


class TestSchedule:
    def test_inverse_sqrt(self):
        s = LearningRateSchedule.inverse_sqrt(400)
        assert len(s) == 400
        np.testing.assert_allclose(s.values, 0.05)

    def test_custom_positive(self):
        assert len(LearningRateSchedule.custom([0.1, 0.2])) == 2
        with pytest.raises(InvalidInputError):
            LearningRateSchedule.custom([0.1, 0.0])

    @settings(max_examples=25)
    @given(st.integers(1, 10_000))
    def test_inverse_sqrt_any_length(self, m):
        s = LearningRateSchedule.inverse_sqrt(m)
        assert np.all(s.values == 1 / math.sqrt(m))
