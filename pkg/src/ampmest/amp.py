"""Approximate message passing for M-estimation.

Each iteration forms adjusted residuals

    R^t = Y - X theta^t + Psi(R^{t-1}; b_{t-1}),

chooses b_t so the effective score has average slope 1/delta on R^t, and
applies the scoring step theta^{t+1} = theta^t + delta X^T Psi(R^t; b_t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .errors import BracketError, CalibrationError
from .numerics import smallest_positive_root, smallest_root_scan
from .state_evolution import se_run

if TYPE_CHECKING:  # pragma: no cover
    from .instance import ProblemInstance
    from .loss import LossFunction
    from .noise import NoiseModel

DebugCmd = Callable[[str], None]

AMP_TOL = 1e-8
AMP_MAX_ITERS = 200
#: orders of the raw moments reported for adjusted and ordinary residuals
MOMENT_ORDERS = (1, 2, 3, 4)
#: b_{-1}; Psi(R^{-1}; b_{-1}) vanishes because R^{-1} = 0
INITIAL_B = 1.0


@dataclass(frozen=True, eq=False)
class AmpState:
    """Iterate theta^t together with the memory term of the previous step.

    Attributes:
        theta: current estimate theta^t
        resid_adj: adjusted residuals R^{t-1} of the previous step
        b: b_{t-1}, calibrated on resid_adj
        t: iteration index
    """

    theta: np.ndarray
    resid_adj: np.ndarray
    b: float
    t: int = 0


@dataclass(frozen=True)
class AmpRow:
    """Observables of one iterate."""

    t: int
    b: float
    rmse_truth: float
    rmse_mest: float
    grad_norm: float
    mse: float
    mae: float
    tau_hat: float


@dataclass(frozen=True, eq=False)
class AmpReport:
    """Outcome of an AMP run."""

    rows: list[AmpRow]
    converged: bool
    state: AmpState
    iterations: int
    mode: str = "empirical"
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    #: raw moments of R^t for every row
    resid_moments: list[tuple[float, ...]] = field(default_factory=list, repr=False)

    @property
    def theta(self) -> np.ndarray:
        """Final estimate."""
        return self.state.theta

    @property
    def trajectory(self) -> list[tuple[int, float, float, float, float]]:
        """Per-iteration (t, b, rmse_truth, rmse_mest, grad_norm).

        Returns:
            one tuple per recorded iterate
        """
        return [
            (row.t, row.b, row.rmse_truth, row.rmse_mest, row.grad_norm)
            for row in self.rows
        ]


def initial_amp_state(theta_init: np.ndarray, n: int) -> AmpState:
    """Starting state with R^{-1} = 0.

    Args:
        theta_init: theta^0
        n: number of observations

    Returns:
        the state at t = 0
    """
    return AmpState(np.array(theta_init, dtype=float), np.zeros(n), INITIAL_B, 0)


def calibrate_empirical(
    resid_adj: np.ndarray,
    loss: LossFunction,
    delta: float,
    b_hint: float | None = None,
) -> float:
    """Smallest b with mean Psi'(R_i; b) = 1 / delta.

    A window [0, 2 b_hint] is scanned first; without a sign change there the
    search falls back to the doubling scan from zero.

    Args:
        resid_adj: adjusted residuals
        loss: the loss
        delta: sampling ratio, above 1
        b_hint: previous b used to size the first window

    Returns:
        the calibrated b

    Raises:
        CalibrationError: if the slope never reaches 1 / delta
    """
    target = 1.0 / delta

    def gap(b: float) -> float:
        return float(np.mean(loss.psi_eff_prime(resid_adj, b))) - target

    if b_hint is not None and b_hint > 0:
        try:
            return smallest_root_scan(gap, 0.0, 2 * b_hint)
        except BracketError:
            pass
    try:
        return smallest_positive_root(gap)
    except BracketError as error:
        msg = f"No b gives average slope {target:.6g} on the adjusted residuals"
        raise CalibrationError(msg) from error


def adjusted_residual(
    state: AmpState, instance: ProblemInstance, loss: LossFunction
) -> np.ndarray:
    """R^t = Y - X theta^t + Psi(R^{t-1}; b_{t-1}).

    Args:
        state: current state
        instance: the problem
        loss: the loss

    Returns:
        adjusted residuals of length n
    """
    memory = np.asarray(loss.psi_eff(state.resid_adj, state.b))
    return instance.Y - instance.X @ state.theta + memory


def amp_step(
    state: AmpState,
    instance: ProblemInstance,
    loss: LossFunction,
    b: float | None = None,
) -> AmpState:
    """One AMP iteration.

    Args:
        state: state at t
        instance: the problem, delta = n / p > 1
        loss: the loss
        b: b_t supplied analytically; calibrated on R^t when None

    Returns:
        state at t + 1, carrying R^t and b_t

    Raises:
        ValueError: if the state does not match the instance
    """
    if state.theta.shape != (instance.p,) or state.resid_adj.shape != (instance.n,):
        msg = (
            f"State of shapes {state.theta.shape}, {state.resid_adj.shape} does not "
            f"match an instance with n={instance.n}, p={instance.p}"
        )
        raise ValueError(msg)
    resid_adj = adjusted_residual(state, instance, loss)
    if b is None:
        b = calibrate_empirical(resid_adj, loss, instance.delta, state.b)
    score = np.asarray(loss.psi_eff(resid_adj, b))
    theta = state.theta + instance.delta * (instance.X.T @ score)
    return AmpState(theta, resid_adj, b, state.t + 1)


def fixed_point_check(
    theta: np.ndarray | AmpState, instance: ProblemInstance, loss: LossFunction
) -> float:
    """Stationarity gap ||X^T psi(Y - X theta)|| / sqrt(p).

    Args:
        theta: estimate or AMP state
        instance: the problem
        loss: the loss

    Returns:
        normalized gradient norm of the M-estimation objective
    """
    if isinstance(theta, AmpState):
        theta = theta.theta
    gradient = instance.X.T @ np.asarray(loss.psi(instance.Y - instance.X @ theta))
    return float(np.linalg.norm(gradient) / math.sqrt(instance.p))


def raw_moments(
    values: np.ndarray, orders: Sequence[int] = MOMENT_ORDERS
) -> tuple[float, ...]:
    """Empirical raw moments.

    Args:
        values: the sample
        orders: moment orders

    Returns:
        mean of values**k for each order k
    """
    return tuple(float(np.mean(values**k)) for k in orders)


def _row(
    t: int,
    b: float,
    theta: np.ndarray,
    instance: ProblemInstance,
    loss: LossFunction,
    reference: np.ndarray | None,
) -> AmpRow:
    error = theta - instance.theta0
    sq_norm = float(error @ error)
    rmse_mest = math.nan
    if reference is not None:
        rmse_mest = float(np.linalg.norm(theta - reference) / math.sqrt(instance.p))
    return AmpRow(
        t=t,
        b=float(b),
        rmse_truth=math.sqrt(sq_norm / instance.p),
        rmse_mest=rmse_mest,
        grad_norm=fixed_point_check(theta, instance, loss),
        mse=sq_norm / instance.p,
        mae=float(np.mean(np.abs(error))),
        tau_hat=math.sqrt(sq_norm / instance.n),
    )


def amp_run(
    instance: ProblemInstance,
    loss: LossFunction,
    theta_init: np.ndarray | None = None,
    max_iters: int = AMP_MAX_ITERS,
    tol: float = AMP_TOL,
    b_schedule: Sequence[float] | None = None,
    reference: np.ndarray | None = None,
    debug_cmd: DebugCmd | None = None,
) -> AmpReport:
    """Iterate AMP until the per-coordinate step falls below tol.

    Args:
        instance: the problem, delta = n / p > 1
        loss: the loss
        theta_init: theta^0, zero by default
        max_iters: iteration budget
        tol: stop once ||theta^{t+1} - theta^t|| / sqrt(p) <= tol
        b_schedule: analytic b_t sequence, its last value reused past the end;
            empirical calibration when None
        reference: M-estimate used for the rmse_mest column
        debug_cmd: receives one line per iteration

    Returns:
        the report, one row per iterate theta^0, ..., theta^T

    Raises:
        ValueError: if delta <= 1 or the schedule is empty
    """
    if not instance.delta > 1:
        msg = f"AMP needs n > p, got delta={instance.delta}"
        raise ValueError(msg)
    if b_schedule is not None and len(b_schedule) == 0:
        msg = "Analytic b schedule is empty"
        raise ValueError(msg)
    if theta_init is None:
        theta_init = np.zeros(instance.p)

    def scheduled(t: int) -> float | None:
        if b_schedule is None:
            return None
        return float(b_schedule[min(t, len(b_schedule) - 1)])

    state = initial_amp_state(theta_init, instance.n)
    rows = []
    moments = []
    converged = False
    for _ in range(max_iters):
        following = amp_step(state, instance, loss, scheduled(state.t))
        rows.append(_row(state.t, following.b, state.theta, instance, loss, reference))
        moments.append(raw_moments(following.resid_adj))
        step = float(np.linalg.norm(following.theta - state.theta))
        step /= math.sqrt(instance.p)
        if debug_cmd is not None:
            last = rows[-1]
            debug_cmd(
                f"amp t={last.t} b={last.b:.6g} rmse={last.rmse_truth:.6g} "
                f"grad={last.grad_norm:.3g} step={step:.3g}"
            )
        state = following
        if step <= tol:
            converged = True
            break

    resid_adj = adjusted_residual(state, instance, loss)
    b_final = scheduled(state.t)
    if b_final is None:
        b_final = calibrate_empirical(resid_adj, loss, instance.delta, state.b)
    rows.append(_row(state.t, b_final, state.theta, instance, loss, reference))
    moments.append(raw_moments(resid_adj))

    return AmpReport(
        rows=rows,
        converged=converged,
        state=state,
        iterations=state.t,
        mode="empirical" if b_schedule is None else "analytic",
        residuals=resid_adj,
        resid_moments=moments,
    )


def analytic_schedule(
    instance: ProblemInstance,
    loss: LossFunction,
    model: NoiseModel,
    theta_init: np.ndarray | None = None,
    iters: int = 20,
) -> list[float]:
    """SE-calibrated b_t for AMP started at theta_init.

    State evolution starts from tau_0^2 = ||theta^0 - theta_0||^2 / n.

    Args:
        instance: the problem
        loss: the loss
        model: noise law of the instance
        theta_init: theta^0, zero by default
        iters: number of b values wanted

    Returns:
        b_0, ..., b_{iters - 1}
    """
    if theta_init is None:
        theta_init = np.zeros(instance.p)
    error = np.asarray(theta_init, dtype=float) - instance.theta0
    tau0_sq = float(error @ error) / instance.n
    steps = max(iters - 1, 1)
    trajectory = se_run(tau0_sq, loss, model, instance.delta, steps, tol=0.0)
    schedule = [state.b for state in trajectory]
    return (schedule + [schedule[-1]] * iters)[:iters]
