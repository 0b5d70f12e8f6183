"""Test the Newton baseline and classical variance formulas."""

import numpy as np
import pytest
from ampmest.baseline import (
    classical_variance,
    m_estimate,
    objective,
    whiten_design,
)
from ampmest.errors import MatrixError, SolverError
from ampmest.loss import HuberLoss, LogCoshLoss
from ampmest.noise import parse_noise
from scipy import stats


def test_objective_hand(squared, hand_instance):
    """Sum of losses at a given theta."""
    assert objective(hand_instance, squared, np.array([2.5])) == pytest.approx(1.125)
    assert objective(hand_instance, squared, np.array([0.0])) == pytest.approx(4.25)


def test_least_squares(squared, make_instance):
    """Newton on the squared loss is ordinary least squares."""
    instance = make_instance(noise="cn:0.05,10")
    estimate = m_estimate(instance, squared)
    ols = np.linalg.lstsq(instance.X, instance.Y, rcond=None)[0]
    np.testing.assert_allclose(estimate.theta, ols, atol=1e-8)
    assert estimate.gradient_norm <= 1e-10
    assert estimate.iterations <= 3
    assert estimate.loss_value == pytest.approx(
        objective(instance, squared, estimate.theta)
    )


@pytest.mark.parametrize("loss", [HuberLoss(3.0), HuberLoss(1.0), LogCoshLoss(0.5)])
def test_robust_losses(loss, squared, make_instance):
    """Stationary and no worse than least squares in its own objective."""
    instance = make_instance(n=200, p=40, noise="cn:0.1,10", seed=7)
    estimate = m_estimate(instance, loss)
    assert estimate.gradient_norm <= 1e-10
    ols = m_estimate(instance, squared).theta
    assert estimate.loss_value <= objective(instance, loss, ols) + 1e-12


def test_start_at_solution(squared, hand_instance):
    """A stationary start returns immediately."""
    estimate = m_estimate(hand_instance, squared, theta_init=np.array([2.5]))
    assert estimate.iterations == 0
    assert estimate.theta == pytest.approx([2.5])


def test_debug_and_budget(huber, make_instance):
    """Iterations are reported and an empty budget fails."""
    instance = make_instance(noise="cn:0.05,10")
    lines = []
    m_estimate(instance, huber, debug_cmd=lines.append)
    assert lines[0].startswith("newton iter=0 loss=")
    with pytest.raises(SolverError, match="did not converge in 0 iterations"):
        m_estimate(instance, huber, max_iters=0)


def test_classical_variance(squared, normal):
    """E psi^2 / (E psi')^2 against closed forms."""
    assert classical_variance(squared, normal) == pytest.approx(1.0)
    assert classical_variance(squared, parse_noise("normal:0,2")) == pytest.approx(4.0)

    k = 1.345
    inside = stats.norm.cdf(k) - stats.norm.cdf(-k)
    second = inside - 2 * k * stats.norm.pdf(k) + k**2 * (1 - inside)
    expected = second / inside**2
    assert classical_variance(HuberLoss(k), normal) == pytest.approx(
        expected, rel=2e-3
    )


def test_classical_variance_vanishing_slope(huber):
    """psi' = 0 almost surely has no sandwich variance."""
    with pytest.raises(ValueError, match="vanishes"):
        classical_variance(huber, parse_noise("atom:100"))


def test_whiten_design():
    """Whitening preserves fitted values and inverts cleanly."""
    rng = np.random.default_rng(8)
    A = rng.standard_normal((5, 5))
    Sigma = A @ A.T + 5 * np.eye(5)
    X = rng.standard_normal((30, 5))
    theta = rng.standard_normal(5)
    whitened = whiten_design(X, Sigma)
    np.testing.assert_allclose(
        whitened.X_standard @ whitened.to_standard(theta), X @ theta, atol=1e-10
    )
    np.testing.assert_allclose(
        whitened.from_standard(whitened.to_standard(theta)), theta, atol=1e-10
    )
    np.testing.assert_allclose(
        whitened.sqrt_sigma @ whitened.sqrt_sigma, Sigma, atol=1e-10
    )


@pytest.mark.parametrize(
    ("Sigma", "message"),
    [
        (np.array([[1.0, 0.5], [0.0, 1.0]]), "symmetric"),
        (np.eye(3), "symmetric 2 x 2"),
        (np.array([[1.0, 2.0], [2.0, 1.0]]), "not positive definite"),
    ],
)
def test_whiten_design_invalid(Sigma, message):
    """Sigma must be symmetric positive definite."""
    with pytest.raises(MatrixError, match=message):
        whiten_design(np.ones((4, 2)), Sigma)
