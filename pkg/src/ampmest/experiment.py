"""Replicated AMP experiments compared against state evolution."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .amp import MOMENT_ORDERS, AmpRow, amp_run, analytic_schedule, raw_moments
from .baseline import m_estimate, objective
from .duality import build_dual, lasso_from_huber, lasso_kkt_residual, lasso_objective
from .errors import AmpMestError, SolverError
from .instance import generate_from_config
from .loss import HuberLoss
from .state_evolution import FixedPoint, SEState, fixed_point, se_run

if TYPE_CHECKING:  # pragma: no cover
    from .parameters import ExperimentConfig

DebugCmd = Callable[[str], None]

#: ||X^T psi|| / sqrt(p) accepted when mapping the Newton solution to the Lasso,
#: as a multiple of the Newton tolerance
STATIONARITY_FACTOR = 10.0


@dataclass
class ReplicationRecord:
    """Everything measured on one replication.

    Attributes:
        seed: replication seed
        rows: AMP observables per iterate
        amp_converged: whether AMP met its step tolerance
        amp_vs_newton: ||theta_AMP - theta_Newton|| / sqrt(p)
        newton_rmse: ||theta_Newton - theta_0|| / sqrt(p)
        newton_gradient_norm: stationarity gap of the Newton solution
        residual_moments: raw moments of orders 1 to 4 of Y - X theta_Newton
        duality_gap: |Huber objective - Lasso objective| at the mapped
            solution, NaN for non-Huber losses
        duality_kkt: Lasso KKT residual of the mapped solution, NaN likewise
        resid_adj_moments: raw moments of orders 1 to 4 of R^t for every row
    """

    seed: int
    rows: list[AmpRow]
    amp_converged: bool
    amp_vs_newton: float
    newton_rmse: float
    newton_gradient_norm: float
    residual_moments: tuple[float, ...]
    duality_gap: float = math.nan
    duality_kkt: float = math.nan
    resid_adj_moments: list[tuple[float, ...]] = field(default_factory=list)


@dataclass(frozen=True)
class SummaryRow:
    """Across-replication statistics of one iteration with SE predictions.

    Attributes:
        gap_mean: mean of MSE(theta^t) - MSE(theta_Newton)
        gap_pred: delta (tau_t^2 - tau*^2)
        resid_z_max: largest distance, in standard errors, between the raw
            moments of R^t and those of W + tau_t Z
    """

    t: int
    reps: int
    mse_mean: float
    mse_se: float
    mae_mean: float
    mae_se: float
    tau_hat_mean: float
    tau_hat_se: float
    b_mean: float
    b_se: float
    mse_pred: float
    mae_pred: float
    b_pred: float
    within_3se: bool
    mae_within_3se: bool
    gap_mean: float
    gap_se: float
    gap_pred: float
    gap_within_3se: bool
    resid_z_max: float
    resid_within_4se: bool


@dataclass
class ExperimentSummary:
    """Aggregate of an experiment."""

    rows: list[SummaryRow]
    fixed_point: FixedPoint
    se_trajectory: list[SEState]
    amp_rmse_mean: float
    newton_rmse_mean: float
    b_final_mean: float
    residual_moments_mean: tuple[float, ...]
    residual_moments_se: tuple[float, ...]
    residual_moments_pred: tuple[float, ...]
    residual_within_4se: bool
    failures: list[tuple[int, str]] = field(default_factory=list)


def run_replication(
    config: ExperimentConfig, seed: int, debug_cmd: DebugCmd | None = None
) -> ReplicationRecord:
    """Generate one instance and solve it with AMP and Newton.

    Args:
        config: experiment configuration
        seed: replication seed
        debug_cmd: forwarded to the solvers

    Returns:
        the record
    """
    loss, model = config.loss_function, config.noise_model
    instance = generate_from_config(config, seed)
    newton = m_estimate(
        instance, loss, config.newton_tol, config.newton_iters, debug_cmd=debug_cmd
    )

    schedule = None
    if config.mode == "analytic":
        schedule = analytic_schedule(instance, loss, model, iters=config.amp_iters + 1)
    report = amp_run(
        instance,
        loss,
        max_iters=config.amp_iters,
        tol=config.amp_tol,
        b_schedule=schedule,
        reference=newton.theta,
        debug_cmd=debug_cmd,
    )

    residual = instance.Y - instance.X @ newton.theta
    scale = math.sqrt(instance.p)
    record = ReplicationRecord(
        seed=seed,
        rows=report.rows,
        amp_converged=report.converged,
        amp_vs_newton=float(np.linalg.norm(report.theta - newton.theta) / scale),
        newton_rmse=float(np.linalg.norm(newton.theta - instance.theta0) / scale),
        newton_gradient_norm=newton.gradient_norm,
        residual_moments=raw_moments(residual),
        resid_adj_moments=report.resid_moments,
    )

    if isinstance(loss, HuberLoss):
        dual = build_dual(instance, loss.lam)
        tol = STATIONARITY_FACTOR * config.newton_tol
        beta = lasso_from_huber(instance, newton.theta, loss, tol=tol)
        huber_value = objective(instance, loss, newton.theta)
        record.duality_gap = abs(huber_value - lasso_objective(dual, beta))
        record.duality_kkt = lasso_kkt_residual(dual, beta)
    return record




def _mean_se(values: list[float]) -> tuple[float, float]:
    data = np.asarray(values, dtype=float)
    if len(data) < 2:  # noqa: PLR2004
        return float(data.mean()), 0.0
    return float(data.mean()), float(data.std(ddof=1) / math.sqrt(len(data)))


def _slack(prediction: float) -> float:
    return 1e-12 * (1 + abs(prediction))


def _within(mean: float, se: float, prediction: float) -> bool:
    return abs(mean - prediction) <= 3 * se + _slack(prediction)


def moment_agreement(
    samples: Sequence[Sequence[float]], predicted: Sequence[float]
) -> tuple[tuple[float, ...], tuple[float, ...], float]:
    """Compare per-replication moments with their predictions.

    Args:
        samples: one tuple of moments per replication
        predicted: predicted moments, same orders

    Returns:
        means, standard errors and the largest |mean - prediction| / se;
        NaN without samples
    """
    if len(samples) == 0:
        nan = (math.nan,) * len(predicted)
        return nan, nan, math.nan
    columns = np.asarray(samples, dtype=float).T
    means, ses = zip(*(_mean_se(list(column)) for column in columns))
    z_max = 0.0
    for mean, se, prediction in zip(means, ses, predicted):
        distance = abs(mean - prediction)
        if distance <= _slack(prediction):
            continue
        z_max = max(z_max, distance / se if se > 0 else math.inf)
    return tuple(means), tuple(ses), z_max


def gaussian_moments(config: ExperimentConfig, tau_sq: float) -> tuple[float, ...]:
    """Raw moments of W + tau Z, the predicted law of the adjusted residuals.

    Args:
        config: supplies the noise law
        tau_sq: nonnegative tau^2

    Returns:
        moments of orders 1 to 4
    """
    model = config.noise_model
    tau = math.sqrt(tau_sq)

    def moment(k: int) -> float:
        return model.smoothed_expectation(tau, lambda z: np.asarray(z) ** k)

    return tuple(moment(k) for k in MOMENT_ORDERS)


def summarize(
    records: list[ReplicationRecord],
    config: ExperimentConfig,
    point: FixedPoint,
    trajectory: list[SEState],
) -> list[SummaryRow]:
    """Per-iteration means and standard errors next to SE predictions.

    Besides MSE, MAE, tau and b, each row tracks the excess risk of theta^t
    over the Newton solution and the moments of R^t.

    Args:
        records: successful replications
        config: the configuration they share
        point: SE fixed point, used past the end of the trajectory
        trajectory: SE states aligned with AMP iterates

    Returns:
        one row per iteration reached by at least one replication
    """
    delta = config.delta
    longest = max(len(r.rows) for r in records)
    rows = []
    for t in range(longest):
        reached = [r for r in records if len(r.rows) > t]
        at_t = [r.rows[t] for r in reached]
        mse_mean, mse_se = _mean_se([row.mse for row in at_t])
        mae_mean, mae_se = _mean_se([row.mae for row in at_t])
        tau_mean, tau_se = _mean_se([row.tau_hat for row in at_t])
        b_mean, b_se = _mean_se([row.b for row in at_t])
        gap_mean, gap_se = _mean_se([r.rows[t].mse - r.newton_rmse**2 for r in reached])

        if t < len(trajectory):
            tau_sq, b_pred = trajectory[t].tau_sq, trajectory[t].b
        else:
            tau_sq, b_pred = point.tau_star_sq, point.b_star
        mse_pred = delta * tau_sq
        mae_pred = math.sqrt(2 * mse_pred / math.pi)
        gap_pred = delta * (tau_sq - point.tau_star_sq)
        _, _, z_max = moment_agreement(
            [r.resid_adj_moments[t] for r in reached if len(r.resid_adj_moments) > t],
            gaussian_moments(config, tau_sq),
        )
        rows.append(
            SummaryRow(
                t=t,
                reps=len(reached),
                mse_mean=mse_mean,
                mse_se=mse_se,
                mae_mean=mae_mean,
                mae_se=mae_se,
                tau_hat_mean=tau_mean,
                tau_hat_se=tau_se,
                b_mean=b_mean,
                b_se=b_se,
                mse_pred=mse_pred,
                mae_pred=mae_pred,
                b_pred=b_pred,
                within_3se=_within(mse_mean, mse_se, mse_pred),
                mae_within_3se=_within(mae_mean, mae_se, mae_pred),
                gap_mean=gap_mean,
                gap_se=gap_se,
                gap_pred=gap_pred,
                gap_within_3se=_within(gap_mean, gap_se, gap_pred),
                resid_z_max=z_max,
                resid_within_4se=z_max <= 4,
            )
        )
    return rows


def predicted_residual_moments(
    config: ExperimentConfig, point: FixedPoint
) -> tuple[float, ...]:
    """Raw moments of eta(W + tau* Z; b*) by quadrature.

    Args:
        config: supplies the loss and the noise law
        point: the SE fixed point

    Returns:
        moments of orders 1 to 4
    """
    loss, model = config.loss_function, config.noise_model
    tau, b = math.sqrt(point.tau_star_sq), point.b_star

    def moment(k: int) -> float:
        return model.smoothed_expectation(
            tau,
            lambda z: np.asarray(loss.eta_residual(z, b)) ** k,
            kinks=loss.kinks(b),
        )

    return tuple(moment(k) for k in MOMENT_ORDERS)


def initial_tau_sq(config: ExperimentConfig) -> float:
    """tau_0^2 = ||theta_0||^2 / n for AMP started at zero.

    Args:
        config: supplies n, p and the signal

    Returns:
        the initial SE variance
    """
    if config.theta0:
        return float(np.sum(np.square(config.theta0))) / config.n
    return config.theta0_norm**2 * config.p / config.n


def run_experiment(
    config: ExperimentConfig, debug_cmd: DebugCmd | None = None
) -> tuple[list[ReplicationRecord], ExperimentSummary]:
    """Run every replication and aggregate.

    Replications run on ``config.workers`` threads; results are folded in
    seed order, so the summary depends only on the config.

    Args:
        config: experiment configuration
        debug_cmd: receives progress lines

    Returns:
        the successful records and the summary

    Raises:
        SolverError: if every replication fails
    """
    loss, model = config.loss_function, config.noise_model

    def attempt(seed: int) -> ReplicationRecord | str:
        try:
            return run_replication(config, seed)
        except AmpMestError as error:
            return str(error)

    seeds = config.seed_list
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(attempt, seeds))
    else:
        outcomes = [attempt(seed) for seed in seeds]

    records: list[ReplicationRecord] = []
    failures: list[tuple[int, str]] = []
    for seed, outcome in zip(seeds, outcomes):
        if isinstance(outcome, str):
            failures.append((seed, outcome))
            if debug_cmd is not None:
                debug_cmd(f"replication seed={seed} failed: {outcome}")
            continue
        records.append(outcome)
        if debug_cmd is not None:
            final = outcome.rows[-1]
            debug_cmd(
                f"replication seed={seed} rmse={final.rmse_truth:.6g} "
                f"b={final.b:.6g} amp_vs_newton={outcome.amp_vs_newton:.3g}"
            )
    if not records:
        msg = f"All {len(seeds)} replications failed, first error: {failures[0][1]}"
        raise SolverError(msg)

    point = fixed_point(loss, model, config.delta, tol=config.se_tol)
    trajectory = se_run(
        initial_tau_sq(config),
        loss,
        model,
        config.delta,
        max_iters=config.amp_iters,
        tol=0.0,
    )
    rows = summarize(records, config, point, trajectory)
    predicted = predicted_residual_moments(config, point)
    means, ses, z_max = moment_agreement(
        [r.residual_moments for r in records], predicted
    )
    summary = ExperimentSummary(
        rows=rows,
        fixed_point=point,
        se_trajectory=trajectory,
        amp_rmse_mean=float(np.mean([r.rows[-1].rmse_truth for r in records])),
        newton_rmse_mean=float(np.mean([r.newton_rmse for r in records])),
        b_final_mean=float(np.mean([r.rows[-1].b for r in records])),
        residual_moments_mean=means,
        residual_moments_se=ses,
        residual_moments_pred=predicted,
        residual_within_4se=z_max <= 4,
        failures=failures,
    )
    return records, summary
