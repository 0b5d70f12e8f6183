"""Test the AMP iteration and its calibration."""

import math

import numpy as np
import pytest
from ampmest.amp import (
    AmpState,
    amp_run,
    amp_step,
    analytic_schedule,
    calibrate_empirical,
    fixed_point_check,
    initial_amp_state,
)
from ampmest.baseline import m_estimate
from ampmest.errors import CalibrationError
from ampmest.instance import ProblemInstance, generate
from ampmest.loss import HuberLoss, LogCoshLoss, parse_loss
from ampmest.noise import contaminated_normal
from ampmest.state_evolution import fixed_point


@pytest.mark.parametrize("delta", [1.5, 2.0, 5.0])
def test_calibrate_squared(squared, delta):
    """Squared loss calibrates to 1 / (delta - 1) on any residuals."""
    resid = np.random.default_rng(0).standard_normal(50)
    expected = 1 / (delta - 1)
    assert calibrate_empirical(resid, squared, delta) == pytest.approx(expected)
    assert calibrate_empirical(resid, squared, delta, b_hint=0.1) == pytest.approx(
        expected
    )
    assert calibrate_empirical(resid, squared, delta, b_hint=5.0) == pytest.approx(
        expected
    )


def test_calibrate_smooth_invariant():
    """The average slope hits 1 / delta for a smooth loss."""
    loss = LogCoshLoss(1.0)
    resid = 3 * np.random.default_rng(1).standard_normal(200)
    b = calibrate_empirical(resid, loss, 4.0)
    assert np.mean(loss.psi_eff_prime(resid, b)) == pytest.approx(0.25, abs=1e-8)


def test_calibrate_unreachable(huber):
    """Residuals far outside the Huber band never reach the slope."""
    with pytest.raises(CalibrationError, match="average slope"):
        calibrate_empirical(np.full(10, 1e9), huber, 5.0)


def test_fixed_point_check_hand(squared, hand_instance):
    """Gradient of the objective on a two point problem."""
    assert fixed_point_check(np.array([2.5]), hand_instance, squared) == 0.0
    assert fixed_point_check(np.array([0.0]), hand_instance, squared) == 2.5
    state = initial_amp_state(np.array([0.0]), 2)
    assert fixed_point_check(state, hand_instance, squared) == 2.5


def test_noiseless_truth_is_stationary(squared):
    """Starting at theta_0 without noise leaves theta unchanged."""
    rng = np.random.default_rng(2)
    X = rng.standard_normal((40, 8)) / math.sqrt(40)
    theta0 = rng.standard_normal(8)
    instance = ProblemInstance.from_design(X, theta0, np.zeros(40))
    state = amp_step(initial_amp_state(theta0, 40), instance, squared)
    np.testing.assert_allclose(state.resid_adj, 0.0, atol=1e-14)
    np.testing.assert_allclose(state.theta, theta0, atol=1e-14)
    assert state.t == 1
    assert state.b == pytest.approx(1 / 4)


def test_amp_step_shape_mismatch(squared, make_instance):
    """States must match the instance."""
    instance = make_instance()
    state = AmpState(np.zeros(3), np.zeros(instance.n), 1.0)
    with pytest.raises(ValueError, match="does not match"):
        amp_step(state, instance, squared)


def test_amp_step_calibration_invariant(make_instance):
    """Each empirical step satisfies mean Psi'(R^t; b_t) = 1 / delta."""
    loss = LogCoshLoss(1.0)
    instance = make_instance(n=200, p=40, noise="mix:0.9,0,1;0.1,0,3")
    state = initial_amp_state(np.zeros(40), 200)
    for _ in range(5):
        state = amp_step(state, instance, loss)
        slope = np.mean(loss.psi_eff_prime(state.resid_adj, state.b))
        assert slope == pytest.approx(1 / instance.delta, abs=1e-8)


def test_amp_least_squares_limit(squared, make_instance):
    """With the squared loss AMP converges to ordinary least squares."""
    instance = make_instance(n=400, p=40, seed=3)
    report = amp_run(instance, squared, max_iters=300, tol=1e-10)
    ols = np.linalg.lstsq(instance.X, instance.Y, rcond=None)[0]
    assert report.converged
    assert report.mode == "empirical"
    np.testing.assert_allclose(report.theta, ols, atol=1e-7)
    for row in report.rows:
        assert row.b == pytest.approx(1 / 9)


def test_amp_matches_newton(make_instance):
    """AMP and damped Newton find the same M-estimate."""
    loss = LogCoshLoss(1.0)
    instance = make_instance(n=500, p=100, noise="mix:0.9,0,1;0.1,0,3", seed=4)
    newton = m_estimate(instance, loss)
    report = amp_run(instance, loss, max_iters=500, reference=newton.theta)
    assert report.converged
    assert report.rows[-1].rmse_mest <= 1e-4
    assert fixed_point_check(report.state, instance, loss) <= 1e-6


def test_amp_rows(squared, make_instance):
    """One row per iterate, starting from theta = 0."""
    instance = make_instance(theta0_norm=2.0)
    report = amp_run(instance, squared, max_iters=4, tol=0.0)
    assert not report.converged
    assert report.iterations == 4
    assert [row.t for row in report.rows] == [0, 1, 2, 3, 4]
    first = report.rows[0]
    assert first.rmse_truth == pytest.approx(2.0)
    assert first.mse == pytest.approx(4.0)
    assert first.tau_hat == pytest.approx(math.sqrt(4.0 * instance.p / instance.n))
    assert math.isnan(first.rmse_mest)
    assert len(report.trajectory) == 5
    assert report.trajectory[0][:3] == (0, first.b, first.rmse_truth)
    assert report.residuals.shape == (instance.n,)
    assert len(report.resid_moments) == len(report.rows)
    assert report.resid_moments[0][1] == pytest.approx(np.mean(instance.Y**2))
    assert report.resid_moments[-1][0] == pytest.approx(np.mean(report.residuals))


def test_amp_run_debug(squared, make_instance):
    """Each iteration is reported."""
    lines = []
    amp_run(make_instance(), squared, max_iters=3, tol=0.0, debug_cmd=lines.append)
    assert len(lines) == 3
    assert lines[0].startswith("amp t=0 b=0.25")


def test_amp_run_invalid(squared, make_instance):
    """delta must exceed one and schedules be nonempty."""
    with pytest.raises(ValueError, match="n > p"):
        amp_run(make_instance(n=20, p=20), squared)
    with pytest.raises(ValueError, match="empty"):
        amp_run(make_instance(), squared, b_schedule=[])


def test_analytic_schedule_squared(squared, normal, make_instance):
    """State evolution calibration for least squares is constant."""
    instance = make_instance()
    schedule = analytic_schedule(instance, squared, normal, iters=7)
    assert len(schedule) == 7
    np.testing.assert_allclose(schedule, 0.25, atol=1e-9)
    report = amp_run(instance, squared, max_iters=5, tol=0.0, b_schedule=schedule)
    assert report.mode == "analytic"
    assert [row.b for row in report.rows] == pytest.approx([0.25] * 6)


def test_analytic_schedule_padding(huber, contaminated, make_instance):
    """Short state evolution runs are padded with their last value."""
    instance = make_instance(noise="cn:0.05,10")
    schedule = analytic_schedule(instance, huber, contaminated, iters=1)
    assert len(schedule) == 1
    long = analytic_schedule(instance, huber, contaminated, iters=30)
    assert len(long) == 30
    assert long[0] == pytest.approx(schedule[0])


@pytest.mark.slow
def test_running_example():
    """Huber(3) under 5% contamination at n = 1000, p = 200."""
    loss, model = HuberLoss(3.0), contaminated_normal(0.05, 10.0)
    point = fixed_point(loss, model, 5.0)
    b_final, rmse = [], []
    for seed in range(5):
        instance = generate(1000, 200, model, seed, theta0_norm=6.0)
        report = amp_run(instance, loss, max_iters=20, tol=0.0)
        b_final.append(report.rows[-1].b)
        rmse.append(report.rows[-1].rmse_truth)
    assert np.mean(b_final) == pytest.approx(point.b_star, abs=0.02)
    assert np.mean(rmse) == pytest.approx(math.sqrt(5 * point.tau_star_sq), abs=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("spec", ["squared", "huber-ridge:3,0.05"])
def test_amp_matches_newton_strongly_convex(make_instance, spec):
    """On twenty instances AMP converges to the Newton M-estimate."""
    loss = parse_loss(spec)
    for seed in range(20):
        instance = make_instance(
            n=400, p=80, noise="cn:0.05,10", seed=seed, theta0_norm=6.0
        )
        newton = m_estimate(instance, loss)
        report = amp_run(
            instance, loss, max_iters=500, tol=1e-10, reference=newton.theta
        )
        assert report.rows[-1].rmse_mest <= 1e-4, seed
