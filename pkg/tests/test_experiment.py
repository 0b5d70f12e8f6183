"""Test replicated experiments and their summaries."""

import dataclasses
import math

import numpy as np
import pytest
from ampmest import experiment
from ampmest.amp import AmpRow
from ampmest.errors import PreconditionError, SolverError
from ampmest.parameters import ExperimentConfig
from ampmest.state_evolution import FixedPoint, SEState, fixed_point


@pytest.fixture()
def small_config():
    """Fast Huber experiment under contamination."""
    return ExperimentConfig(n=100, p=20, replications=3, amp_iters=10, theta0_norm=1.0)


def test_raw_moments():
    """Mean of powers."""
    moments = experiment.raw_moments(np.array([1.0, 2.0, 3.0]))
    assert moments == pytest.approx((2.0, 14 / 3, 12.0, 98 / 3))


def test_initial_tau_sq():
    """||theta_0||^2 / n for both ways of giving the signal."""
    assert experiment.initial_tau_sq(ExperimentConfig()) == pytest.approx(7.2)
    explicit = ExperimentConfig(n=10, p=2, theta0=(3.0, 4.0))
    assert experiment.initial_tau_sq(explicit) == pytest.approx(2.5)


def test_predicted_residual_moments():
    """Least squares residuals are Gaussian with variance 0.8 at delta = 5."""
    config = ExperimentConfig(loss="squared", noise="normal:0,1")
    point = fixed_point(config.loss_function, config.noise_model, 5.0)
    moments = experiment.predicted_residual_moments(config, point)
    assert moments == pytest.approx((0.0, 0.8, 0.0, 1.92), abs=1e-8)


def test_run_replication(small_config):
    """One replication measures AMP, Newton and the dual Lasso."""
    record = experiment.run_replication(small_config, 2)
    assert record.seed == 2
    assert len(record.rows) <= small_config.amp_iters + 1
    assert record.rows[0].t == 0
    assert record.newton_gradient_norm <= small_config.newton_tol
    assert len(record.residual_moments) == 4
    assert record.duality_gap <= 1e-6
    assert record.duality_kkt <= 1e-6
    assert len(record.resid_adj_moments) == len(record.rows)
    assert all(len(moments) == 4 for moments in record.resid_adj_moments)


def test_run_replication_requires_stationary_newton(small_config, mocker):
    """A Newton solution off the stationarity tolerance cannot be mapped."""
    real = experiment.m_estimate

    def loose(instance, loss, tol, iters, debug_cmd=None):
        estimate = real(instance, loss, tol, iters, debug_cmd=debug_cmd)
        return dataclasses.replace(estimate, theta=estimate.theta + 1e-3)

    mocker.patch.object(experiment, "m_estimate", side_effect=loose)
    with pytest.raises(PreconditionError, match="not a Huber M-estimate"):
        experiment.run_replication(small_config, 2)


def test_run_replication_squared(small_config):
    """Duality columns are only filled for Huber losses."""
    record = experiment.run_replication(small_config.replace(loss="squared"), 0)
    assert math.isnan(record.duality_gap)
    assert math.isnan(record.duality_kkt)
    assert record.amp_vs_newton <= 1e-2


def test_run_experiment(small_config):
    """Summaries line up with the records and state evolution."""
    lines = []
    records, summary = experiment.run_experiment(small_config, lines.append)
    assert [r.seed for r in records] == [0, 1, 2]
    assert summary.failures == []
    assert len(lines) == 3
    assert lines[0].startswith("replication seed=0 rmse=")

    longest = max(len(r.rows) for r in records)
    assert len(summary.rows) == longest
    first = summary.rows[0]
    assert first.t == 0
    assert first.reps == 3
    assert first.mse_pred == pytest.approx(5 * summary.se_trajectory[0].tau_sq)
    assert first.mae_pred == pytest.approx(math.sqrt(2 * first.mse_pred / math.pi))
    assert first.mse_mean == pytest.approx(1.0)
    assert summary.se_trajectory[0].tau_sq == pytest.approx(0.2)
    assert len(summary.residual_moments_mean) == 4
    assert len(summary.residual_moments_se) == 4
    assert first.gap_pred == pytest.approx(
        5 * (summary.se_trajectory[0].tau_sq - summary.fixed_point.tau_star_sq)
    )
    assert first.resid_z_max >= 0
    assert summary.amp_rmse_mean == pytest.approx(
        np.mean([r.rows[-1].rmse_truth for r in records])
    )


def test_run_experiment_threads_match(small_config):
    """Thread count does not change the results."""
    serial, _ = experiment.run_experiment(small_config)
    threaded, _ = experiment.run_experiment(small_config.replace(workers=3))
    for a, b in zip(serial, threaded):
        assert a.seed == b.seed
        assert a.newton_rmse == pytest.approx(b.newton_rmse, rel=1e-12)
        assert len(a.rows) == len(b.rows)
        assert a.rows[-1].b == pytest.approx(b.rows[-1].b, rel=1e-9)


def test_run_experiment_failures(small_config, mocker):
    """Failed replications are recorded; all failing is an error."""
    real = experiment.run_replication

    def flaky(config, seed, debug_cmd=None):
        if seed == 1:
            msg = "Line search failed"
            raise SolverError(msg)
        return real(config, seed, debug_cmd)

    mocker.patch.object(experiment, "run_replication", side_effect=flaky)
    lines = []
    records, summary = experiment.run_experiment(small_config, lines.append)
    assert [r.seed for r in records] == [0, 2]
    assert summary.failures == [(1, "Line search failed")]
    assert "replication seed=1 failed: Line search failed" in lines
    assert summary.rows[0].reps == 2

    mocker.patch.object(
        experiment, "run_replication", side_effect=SolverError("singular")
    )
    with pytest.raises(SolverError, match="All 3 replications failed"):
        experiment.run_experiment(small_config)


def test_summarize_within_three_se(small_config):
    """Agreement flags compare means to predictions in standard errors."""
    rows = [
        AmpRow(0, 0.3, 1.0, math.nan, 0.0, mse, 0.8, 0.4)
        for mse in (0.9, 1.1)
    ]
    records = [
        experiment.ReplicationRecord(seed, [row], True, 0.0, 1.0, 0.0, (0,) * 4)
        for seed, row in enumerate(rows)
    ]
    state = SEState(0.2, 0.3, 5.0)
    point = FixedPoint(0.2, 0.3, 1.0, 1, 0.0, 5.0)
    (row,) = experiment.summarize(records, small_config, point, [state])
    assert row.mse_mean == pytest.approx(1.0)
    assert row.mse_se == pytest.approx(0.1)
    assert row.within_3se
    assert row.mae_se == 0.0
    assert not row.mae_within_3se
    assert row.gap_mean == pytest.approx(0.0)
    assert row.gap_se == pytest.approx(0.1)
    assert row.gap_pred == 0.0
    assert row.gap_within_3se
    assert math.isnan(row.resid_z_max)
    assert not row.resid_within_4se

    far = experiment.summarize(records, small_config, point, [])
    assert far[0].mse_pred == pytest.approx(1.0)
    assert far[0].b_pred == 0.3


def test_moment_agreement():
    """Distances are measured in standard errors of the replication means."""
    samples = [(0.0, 1.0), (0.2, 1.4), (0.4, 1.2)]
    means, ses, z_max = experiment.moment_agreement(samples, (0.2, 1.2))
    assert means == pytest.approx((0.2, 1.2))
    assert ses == pytest.approx((0.2 / math.sqrt(3), 0.2 / math.sqrt(3)))
    assert z_max == pytest.approx(0.0, abs=1e-9)

    _, _, z_max = experiment.moment_agreement(samples, (0.0, 1.2))
    assert z_max == pytest.approx(math.sqrt(3))
    _, _, z_max = experiment.moment_agreement([(1.0,), (1.0,)], (0.5,))
    assert z_max == math.inf
    means, _, z_max = experiment.moment_agreement([], (0.0, 1.0))
    assert math.isnan(means[0])
    assert math.isnan(z_max)


def test_gaussian_moments():
    """W + tau Z for standard normal W has variance 1 + tau^2."""
    config = ExperimentConfig(noise="normal:0,1")
    assert experiment.gaussian_moments(config, 0.25) == pytest.approx(
        (0.0, 1.25, 0.0, 3 * 1.25**2), abs=1e-10
    )


@pytest.mark.slow
def test_running_example_experiment():
    """Across seeds, AMP and Newton match the predicted risk."""
    config = ExperimentConfig(replications=10, workers=4)
    records, summary = experiment.run_experiment(config)
    assert len(records) == 10
    predicted = math.sqrt(summary.fixed_point.asymptotic_variance)
    assert summary.amp_rmse_mean == pytest.approx(predicted, abs=0.1)
    assert summary.newton_rmse_mean == pytest.approx(predicted, abs=0.1)
    assert summary.b_final_mean == pytest.approx(summary.fixed_point.b_star, abs=0.02)
    assert predicted == pytest.approx(1.6182, abs=0.1)
    for values in (
        [r.rows[-1].rmse_truth for r in records],
        [r.newton_rmse for r in records],
    ):
        spread = np.std(values, ddof=1) / math.sqrt(len(values))
        assert abs(np.mean(values) - 1.6182) <= 0.1 + 3 * spread


@pytest.mark.slow
def test_running_example_tracks_state_evolution():
    """Every iterate matches its SE prediction within the error bands."""
    config = ExperimentConfig(replications=40, workers=4)
    records, summary = experiment.run_experiment(config)
    assert len(records) == 40
    for row in summary.rows[1:11]:
        assert row.within_3se, row
        assert row.mae_within_3se, row
        assert row.gap_within_3se, row
    for row in summary.rows[:11]:
        assert row.resid_within_4se, row
    assert summary.residual_within_4se
    assert summary.residual_moments_pred[1] == pytest.approx(
        summary.residual_moments_mean[1], rel=0.05
    )
