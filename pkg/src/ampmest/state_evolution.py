"""State evolution for AMP on robust M-estimation.

The scalar recursion tracks tau_t^2, the variance of the extra Gaussian noise
seen by the effective score, together with the parameter b_t that makes the
average slope of Psi(.; b_t) equal to 1/delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np

from .errors import BracketError, CalibrationError, FixedPointError
from .numerics import (
    QuadratureRule,
    RngStream,
    ROOT_TOL,
    find_root_bracketed,
    smallest_positive_root,
)

if TYPE_CHECKING:  # pragma: no cover
    from .loss import LossFunction
    from .noise import NoiseModel, RandomSource

DebugCmd = Callable[[str], None]

SE_TOL = 1e-10
SE_MAX_ITERS = 200
FIXED_POINT_MAX_ITERS = 500
#: plain iteration hands over to the bracketed polish at this relative change
HANDOFF_TOL = 1e-6
DAMPING = 0.5
BRACKET_EXPANSIONS = 60
#: b and the polished tau^2 are solved this much tighter than the residual tol
CALIBRATION_SHARPENING = 1e-2
POLISH_SHARPENING = 1e-1


@dataclass(frozen=True)
class SEState:
    """One state of the recursion.

    Attributes:
        tau_sq: extra Gaussian variance tau_t^2
        b: effective score parameter calibrated at tau_t
        delta: sampling ratio n / p
        t: iteration index
    """

    tau_sq: float
    b: float
    delta: float
    t: int = 0


@dataclass(frozen=True)
class FixedPoint:
    """Solution (tau*^2, b*) of the coupled fixed point equations."""

    tau_star_sq: float
    b_star: float
    asymptotic_variance: float
    iterations: int
    residual: float
    delta: float


@dataclass(frozen=True)
class ResidualLaw:
    """Law of eta(W + tau Z; b), the predicted ordinary residual."""

    loss: LossFunction
    model: NoiseModel
    tau: float
    b: float

    def sample(self, n: int, rng: RandomSource) -> np.ndarray:
        """Draw ordinary residuals from the predicted law.

        Args:
            n: sample size
            rng: stream or generator

        Returns:
            n draws of eta(W + tau Z; b)
        """
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        adjusted = self.model.sample(n, gen) + self.tau * gen.standard_normal(n)
        return np.asarray(self.loss.eta_residual(adjusted, self.b))

    def describe(self) -> dict[str, object]:
        """Serializable descriptor.

        Returns:
            loss and noise specs with tau and b
        """
        return {
            "loss": self.loss.spec,
            "noise": self.model.name,
            "tau": self.tau,
            "b": self.b,
        }


@dataclass(frozen=True)
class PredictionReport:
    """Predicted observables for a state of the recursion."""

    mse: float
    mae: float
    tau_sq: float
    b: float
    delta: float
    residual_law: ResidualLaw
    trajectory: list[tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class LowerBounds:
    """Fisher information lower bounds on tau^2."""

    fisher_information: float
    delta: float
    at_iteration: float
    accumulation: float
    degenerate: bool
    t: int | None


@dataclass(frozen=True)
class ResidualMoments:
    """Moments of the predicted ordinary residual."""

    mean: float
    variance: float
    mean_abs: float


def _check_delta(delta: float) -> None:
    if not delta > 1:
        msg = f"Sampling ratio delta must exceed 1, got {delta}"
        raise ValueError(msg)


def variance_map(
    loss: LossFunction,
    model: NoiseModel,
    tau_sq: float,
    b: float,
    delta: float,
    rule: QuadratureRule | None = None,
) -> float:
    """V(tau^2, b) = delta E{Psi(W + tau Z; b)^2}.

    Args:
        loss: the loss
        model: noise law of W
        tau_sq: nonnegative tau^2
        b: nonnegative effective score parameter
        delta: sampling ratio
        rule: quadrature rule

    Returns:
        the variance map value

    Raises:
        ValueError: if tau_sq is negative
    """
    if tau_sq < 0:
        msg = f"tau^2 must be nonnegative, got {tau_sq}"
        raise ValueError(msg)
    return delta * model.smoothed_expectation(
        math.sqrt(tau_sq),
        lambda z: np.square(loss.psi_eff(z, b)),
        rule,
        loss.kinks(b),
    )


def expected_slope(
    loss: LossFunction,
    model: NoiseModel,
    tau: float,
    b: float,
    rule: QuadratureRule | None = None,
) -> float:
    """E Psi'(W + tau Z; b), continuous in b through Stein's identity.

    Args:
        loss: the loss
        model: noise law of W
        tau: nonnegative smoothing scale
        b: nonnegative effective score parameter
        rule: quadrature rule

    Returns:
        the average slope of the effective score
    """
    return model.smoothed_slope(
        tau,
        lambda z: np.asarray(loss.psi_eff(z, b)),
        lambda z: np.asarray(loss.psi_eff_prime(z, b)),
        rule,
        loss.kinks(b),
    )


def calibrate_b(
    loss: LossFunction,
    model: NoiseModel,
    tau: float,
    delta: float,
    rule: QuadratureRule | None = None,
    tol: float = ROOT_TOL,
) -> float:
    """Smallest b >= 0 with E Psi'(W + tau Z; b) = 1 / delta.

    Args:
        loss: the loss
        model: noise law of W
        tau: nonnegative smoothing scale
        delta: sampling ratio, above 1
        rule: quadrature rule
        tol: tolerance on b

    Returns:
        the calibrated b

    Raises:
        CalibrationError: if no root is found on the scanned range
    """
    _check_delta(delta)
    target = 1.0 / delta

    def gap(b: float) -> float:
        return expected_slope(loss, model, tau, b, rule) - target

    try:
        return smallest_positive_root(gap, tol=tol)
    except BracketError as error:
        msg = f"Unable to calibrate b for {loss.spec} at tau={tau}, delta={delta}"
        raise CalibrationError(msg) from error


def initial_state(
    tau0_sq: float,
    loss: LossFunction,
    model: NoiseModel,
    delta: float,
    rule: QuadratureRule | None = None,
) -> SEState:
    """State at t = 0 with b calibrated at tau_0.

    Args:
        tau0_sq: nonnegative initial tau^2
        loss: the loss
        model: noise law
        delta: sampling ratio
        rule: quadrature rule

    Returns:
        the starting state

    Raises:
        ValueError: if tau0_sq is negative
    """
    if tau0_sq < 0:
        msg = f"tau_0^2 must be nonnegative, got {tau0_sq}"
        raise ValueError(msg)
    b = calibrate_b(loss, model, math.sqrt(tau0_sq), delta, rule)
    return SEState(float(tau0_sq), b, float(delta), 0)


def se_step(
    state: SEState,
    loss: LossFunction,
    model: NoiseModel,
    rule: QuadratureRule | None = None,
) -> SEState:
    """Advance one step, tau_{t+1}^2 = V(tau_t^2, b_t).

    Args:
        state: current state, b already calibrated at its tau
        loss: the loss
        model: noise law
        rule: quadrature rule

    Returns:
        the next state with b_{t+1} calibrated at tau_{t+1}
    """
    tau_sq = variance_map(loss, model, state.tau_sq, state.b, state.delta, rule)
    b = calibrate_b(loss, model, math.sqrt(tau_sq), state.delta, rule)
    return SEState(tau_sq, b, state.delta, state.t + 1)


def se_run(
    tau0_sq: float,
    loss: LossFunction,
    model: NoiseModel,
    delta: float,
    max_iters: int = SE_MAX_ITERS,
    tol: float = SE_TOL,
    rule: QuadratureRule | None = None,
    debug_cmd: DebugCmd | None = None,
) -> list[SEState]:
    """Iterate the recursion from tau_0^2.

    Args:
        tau0_sq: initial tau^2
        loss: the loss
        model: noise law
        delta: sampling ratio
        max_iters: maximum number of steps, at least 1
        tol: stop once |tau_{t+1}^2 - tau_t^2| <= tol (1 + tau_t^2)
        rule: quadrature rule
        debug_cmd: receives one line per step

    Returns:
        the trajectory including the initial state

    Raises:
        ValueError: if max_iters is below 1
    """
    if max_iters < 1:
        msg = f"max_iters must be at least 1, got {max_iters}"
        raise ValueError(msg)
    trajectory = [initial_state(tau0_sq, loss, model, delta, rule)]
    for _ in range(max_iters):
        current = trajectory[-1]
        following = se_step(current, loss, model, rule)
        trajectory.append(following)
        if debug_cmd is not None:
            debug_cmd(
                f"se t={following.t} tau_sq={following.tau_sq:.10g} "
                f"b={following.b:.10g}"
            )
        if abs(following.tau_sq - current.tau_sq) <= tol * (1 + current.tau_sq):
            break
    return trajectory


def calibrated_variance_map(
    loss: LossFunction,
    model: NoiseModel,
    tau_sq: float,
    delta: float,
    rule: QuadratureRule | None = None,
    tol: float = ROOT_TOL,
) -> tuple[float, float]:
    """Ṽ(tau^2) = V(tau^2, b(tau)).

    Args:
        loss: the loss
        model: noise law
        tau_sq: nonnegative tau^2
        delta: sampling ratio, above 1
        rule: quadrature rule
        tol: tolerance on the calibrated b

    Returns:
        the map value and the b used
    """
    b = calibrate_b(loss, model, math.sqrt(tau_sq), delta, rule, tol)
    return variance_map(loss, model, tau_sq, b, delta, rule), b


def _bracket(g: Callable[[float], float], x: float) -> tuple[float, float]:
    lo, hi = x * (1 - 1e-3), x * (1 + 1e-3)
    for _ in range(BRACKET_EXPANSIONS):
        if g(lo) >= 0:
            break
        lo = lo / 2 if lo > 1e-12 else 0.0
    for _ in range(BRACKET_EXPANSIONS):
        if g(hi) <= 0:
            break
        hi = 2 * hi + 1e-12
    return lo, hi


def fixed_point(
    loss: LossFunction,
    model: NoiseModel,
    delta: float,
    tol: float = SE_TOL,
    max_iters: int = FIXED_POINT_MAX_ITERS,
    tau0_sq: float | None = None,
    rule: QuadratureRule | None = None,
    debug_cmd: DebugCmd | None = None,
) -> FixedPoint:
    """Solve tau^2 = V(tau^2, b) together with E Psi'(W + tau Z; b) = 1 / delta.

    Ṽ is iterated, with damping once successive steps change direction, until
    the relative change drops below 1e-6; Brent's method on Ṽ(x) - x then
    polishes the root.

    Args:
        loss: the loss
        model: noise law
        delta: sampling ratio, above 1
        tol: tolerance on both residuals
        max_iters: iteration budget before the polish
        tau0_sq: starting tau^2, default Ṽ(0)
        rule: quadrature rule
        debug_cmd: receives one line per iteration

    Returns:
        the fixed point

    Raises:
        FixedPointError: if iteration stalls or the residuals stay above tolerance
    """
    _check_delta(delta)
    b_tol = CALIBRATION_SHARPENING * tol

    def v_tilde(x: float) -> float:
        tau_sq = max(x, 0.0)
        return calibrated_variance_map(loss, model, tau_sq, delta, rule, b_tol)[0]

    x = v_tilde(0.0) if tau0_sq is None else float(tau0_sq)
    trajectory = [x]
    step_size = 1.0
    previous_change = 0.0
    iterations = 0
    for iterations in range(1, max_iters + 1):  # noqa: B007
        change = v_tilde(x) - x
        if previous_change * change < 0:
            step_size = DAMPING
        x += step_size * change
        trajectory.append(x)
        previous_change = change
        if debug_cmd is not None:
            debug_cmd(
                f"fixed point iter={iterations} tau_sq={x:.10g} change={change:.3g}"
            )
        if abs(change) <= HANDOFF_TOL * (1 + x):
            break
    else:
        msg = f"Fixed point iteration did not settle in {max_iters} iterations"
        raise FixedPointError(msg, trajectory)

    def g(value: float) -> float:
        return v_tilde(value) - value

    if g(x) != 0:
        lo, hi = _bracket(g, x)
        try:
            x = find_root_bracketed(g, lo, hi, POLISH_SHARPENING * tol * (1 + x))
        except ValueError as error:
            msg = f"Unable to polish fixed point near tau^2={x}"
            raise FixedPointError(msg, trajectory) from error

    tau_star_sq = x
    b_star = calibrate_b(loss, model, math.sqrt(x), delta, rule, b_tol)
    residual = max(
        abs(variance_map(loss, model, tau_star_sq, b_star, delta, rule) - tau_star_sq),
        abs(
            expected_slope(loss, model, math.sqrt(tau_star_sq), b_star, rule)
            - 1 / delta
        ),
    )
    if residual > tol * (1 + tau_star_sq):
        msg = f"Fixed point residual {residual:.3g} exceeds tolerance {tol}"
        raise FixedPointError(msg, trajectory)

    return FixedPoint(
        tau_star_sq=tau_star_sq,
        b_star=b_star,
        asymptotic_variance=delta * tau_star_sq,
        iterations=iterations,
        residual=residual,
        delta=float(delta),
    )


def predict(
    state: SEState | FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    trajectory: list[SEState] | None = None,
) -> PredictionReport:
    """Predicted MSE, MAE and residual law for a state or fixed point.

    Args:
        state: an SE state or a fixed point
        loss: the loss
        model: noise law
        trajectory: optional states to report alongside

    Returns:
        the prediction report
    """
    if isinstance(state, FixedPoint):
        tau_sq, b = state.tau_star_sq, state.b_star
    else:
        tau_sq, b = state.tau_sq, state.b
    mse = state.delta * tau_sq
    return PredictionReport(
        mse=mse,
        mae=math.sqrt(2 * mse / math.pi),
        tau_sq=tau_sq,
        b=b,
        delta=state.delta,
        residual_law=ResidualLaw(loss, model, math.sqrt(tau_sq), b),
        trajectory=[(s.tau_sq, s.b) for s in trajectory or []],
    )


def lower_bounds(model: NoiseModel, delta: float, t: int | None = None) -> LowerBounds:
    """Fisher information lower bounds on tau_t^2 and on accumulation points.

    After t steps, tau_t^2 >= (1 + 1/delta + ... + 1/delta^(t-1)) / (delta I),
    and every accumulation point satisfies tau^2 >= 1 / ((delta - 1) I).

    Args:
        model: noise law
        delta: sampling ratio, above 1
        t: iteration index, None for the accumulation point

    Returns:
        the bounds; zero with the degenerate flag when I(F_W) is infinite
    """
    _check_delta(delta)
    fisher = model.fisher_information()
    if math.isinf(fisher):
        return LowerBounds(fisher, delta, 0.0, 0.0, True, t)

    accumulation = 1 / ((delta - 1) * fisher)
    if t is None:
        at_iteration = accumulation
    else:
        at_iteration = sum(delta**-j for j in range(t)) / (delta * fisher)
    return LowerBounds(fisher, delta, at_iteration, accumulation, False, t)


def h_map(
    point: FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    q: float,
    rule: QuadratureRule | None = None,
) -> float:
    """H(q) = (delta / tau*^2) E_q{Psi(W + tau* Z1; b*) Psi(W + tau* Z2; b*)}.

    Args:
        point: the fixed point
        loss: the loss
        model: noise law
        q: correlation of (Z1, Z2) in [0, 1]
        rule: one dimensional rule expanded to a tensor grid

    Returns:
        H(q)

    Raises:
        ValueError: if q is outside [0, 1]
    """
    if not 0 <= q <= 1:
        msg = f"Correlation must be in [0, 1], got {q}"
        raise ValueError(msg)
    tau_sq, b = point.tau_star_sq, point.b_star

    def psi(z: np.ndarray) -> np.ndarray:
        return np.asarray(loss.psi_eff(z, b))

    cov = (tau_sq, q * tau_sq, tau_sq)
    value = model.correlated_expectation(psi, psi, cov, rule, loss.kinks(b))
    return point.delta / tau_sq * value


def gamma_recursion(
    point: FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    T: int,
    rule: QuadratureRule | None = None,
) -> np.ndarray:
    """Two-time covariance matrix of the AMP iterates at equilibrium.

    Gamma[0, 0] = tau*^2, Gamma[0, t] = Gamma[t, 0] = 0, and
    Gamma[t+1, s+1] = delta E{Psi(W + Z_t; b*) Psi(W + Z_s; b*)} with
    (Z_t, Z_s) centered Gaussian with covariance drawn from Gamma.

    Args:
        point: the fixed point
        loss: the loss
        model: noise law
        T: largest index, at least 1
        rule: quadrature rule

    Returns:
        symmetric (T+1, T+1) matrix with constant diagonal tau*^2

    Raises:
        ValueError: if T is below 1
    """
    if T < 1:
        msg = f"Gamma recursion needs T >= 1, got {T}"
        raise ValueError(msg)
    tau_sq, b = point.tau_star_sq, point.b_star

    def psi(z: np.ndarray) -> np.ndarray:
        return np.asarray(loss.psi_eff(z, b))

    kinks = loss.kinks(b)
    gamma = np.zeros((T + 1, T + 1))
    np.fill_diagonal(gamma, tau_sq)
    for t in range(T):
        for s in range(t):
            cov = (tau_sq, gamma[t, s], tau_sq)
            value = model.correlated_expectation(psi, psi, cov, rule, kinks)
            value *= point.delta
            gamma[t + 1, s + 1] = gamma[s + 1, t + 1] = value
    return gamma


def iterate_gap(gamma: np.ndarray, t: int, s: int, delta: float) -> float:
    """Predicted ||theta^t - theta^s||^2 / p = 2 delta (tau*^2 - Gamma[t, s]).

    Args:
        gamma: output of gamma_recursion
        t: first iteration index
        s: second iteration index
        delta: sampling ratio

    Returns:
        the squared gap per coordinate
    """
    return 2 * delta * (gamma[0, 0] - gamma[t, s])


def variance_map_curve(
    loss: LossFunction,
    model: NoiseModel,
    delta: float,
    grid: np.ndarray,
    rule: QuadratureRule | None = None,
) -> list[tuple[float, float, float]]:
    """Evaluate Ṽ on a grid of tau^2 values.

    Args:
        loss: the loss
        model: noise law
        delta: sampling ratio
        grid: nonnegative tau^2 values
        rule: quadrature rule

    Returns:
        (tau^2, b(tau), Ṽ(tau^2)) for each grid point
    """
    curve = []
    for tau_sq in np.asarray(grid, dtype=float):
        value, b = calibrated_variance_map(loss, model, float(tau_sq), delta, rule)
        curve.append((float(tau_sq), b, value))
    return curve


def fixed_point_slope(
    point: FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    rel_step: float = 1e-4,
    rule: QuadratureRule | None = None,
) -> float:
    """Central difference of Ṽ at tau*^2; below one means locally stable.

    Args:
        point: the fixed point
        loss: the loss
        model: noise law
        rel_step: difference step relative to tau*^2
        rule: quadrature rule

    Returns:
        dṼ / dtau^2 at the fixed point
    """
    h = rel_step * max(point.tau_star_sq, 1e-8)
    upper, _ = calibrated_variance_map(
        loss, model, point.tau_star_sq + h, point.delta, rule
    )
    lower, _ = calibrated_variance_map(
        loss, model, max(point.tau_star_sq - h, 0.0), point.delta, rule
    )
    return (upper - lower) / (point.tau_star_sq + h - max(point.tau_star_sq - h, 0.0))


def residual_law_moments(
    point: FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    rule: QuadratureRule | None = None,
) -> ResidualMoments:
    """Moments of eta(W + tau* Z; b*).

    Args:
        point: the fixed point
        loss: the loss
        model: noise law
        rule: quadrature rule, breakpoint-aware when None

    Returns:
        mean, variance and mean absolute value
    """
    tau, b = math.sqrt(point.tau_star_sq), point.b_star

    def eta(z: np.ndarray) -> np.ndarray:
        return np.asarray(loss.eta_residual(z, b))

    kinks = loss.kinks(b)
    mean = model.smoothed_expectation(tau, eta, rule, kinks)
    second = model.smoothed_expectation(tau, lambda z: eta(z) ** 2, rule, kinks)
    mean_abs = model.smoothed_expectation(
        tau, lambda z: np.abs(eta(z)), rule, (*kinks, 0.0)
    )
    return ResidualMoments(mean, max(second - mean**2, 0.0), mean_abs)


def effective_variance(
    point: FixedPoint,
    loss: LossFunction,
    model: NoiseModel,
    rule: QuadratureRule | None = None,
) -> float:
    """Classical sandwich variance of Psi(.; b*) under W + tau* Z.

    At a fixed point this equals delta tau*^2.

    Args:
        point: the fixed point
        loss: the loss
        model: noise law
        rule: quadrature rule

    Returns:
        E Psi^2 / (E Psi')^2 over the smoothed noise
    """
    tau, b = math.sqrt(point.tau_star_sq), point.b_star
    second = model.smoothed_expectation(
        tau, lambda z: np.square(loss.psi_eff(z, b)), rule, loss.kinks(b)
    )
    slope = expected_slope(loss, model, tau, b, rule)
    return second / slope**2
