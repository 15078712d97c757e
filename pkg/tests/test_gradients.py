"""Finite-difference verification of every hand-derived gradient."""

import numpy as np
import pytest

from rankforge.core import DistillTriplet, LossConfig
from rankforge.gradcheck import (
    PASS_THRESHOLD,
    central_difference,
    check_end_to_end,
    check_objective,
    max_relative_error,
)
from rankforge.losses import OBJECTIVES, adr_mse, bce_pair, margin_mse

LIST_SIZES = (2, 8, 50)


def test_central_difference_on_known_function():
    # oracle sanity: d/dx of x0^2 + 3 x1 is (2 x0, 3)
    f = lambda x: float(x[0] ** 2 + 3 * x[1])
    grad = central_difference(f, np.array([1.5, -2.0]))
    assert grad == pytest.approx([3.0, 3.0], abs=1e-8)


def test_max_relative_error_scales_small_gradients():
    assert max_relative_error([0.0], [1e-9]) == pytest.approx(1e-9)
    assert max_relative_error([100.0], [100.0 + 1e-4]) == pytest.approx(1e-6, rel=1e-2)


@pytest.mark.parametrize("objective", OBJECTIVES)
@pytest.mark.parametrize("n", LIST_SIZES)
def test_analytic_gradients_match_finite_differences(objective, n):
    worst = check_objective(objective, n=n, trials=34, seed=n)
    assert worst < PASS_THRESHOLD


def test_spot_checks_from_worked_examples():
    out = bce_pair(1.3, -0.7)
    numeric = central_difference(lambda s: bce_pair(s[0], s[1]).value, np.array([1.3, -0.7]))
    assert max_relative_error(out.grad, numeric) < 1e-6

    triplet = DistillTriplet("q", "p", "n", 2.5, -1.0)
    out = margin_mse(triplet, 0.3, 0.2)
    numeric = central_difference(lambda s: margin_mse(triplet, s[0], s[1]).value,
                                 np.array([0.3, 0.2]))
    assert max_relative_error(out.grad, numeric) < 1e-6


def test_adr_gradient_with_nondefault_temperature():
    cfg = LossConfig(temperature=0.37)
    worst = check_objective("adr_mse", n=12, trials=25, seed=2, cfg=cfg)
    assert worst < PASS_THRESHOLD


def test_adr_gradient_direct_n50():
    rng = np.random.default_rng(123)
    s = rng.normal(0, 3, size=50)
    out = adr_mse(s)
    numeric = central_difference(lambda x: adr_mse(x).value, s)
    assert max_relative_error(out.grad, numeric) < 1e-5


def test_broken_gradient_is_detected():
    worst = check_objective("bce", trials=5, seed=0, break_gradient=True)
    assert worst > PASS_THRESHOLD


@pytest.mark.parametrize("objective", OBJECTIVES)
@pytest.mark.parametrize("kind", ("linear", "mlp1"))
def test_end_to_end_parameter_gradients(objective, kind):
    worst = check_end_to_end(objective, kind=kind, dim=5, hidden=4, n=6, trials=10, seed=1)
    assert worst < PASS_THRESHOLD
