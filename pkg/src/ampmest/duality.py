"""Correspondence between M-estimation and penalized least squares.

With X~ an orthonormal basis of the complement of image(X) and Y~ = X~ Y,
minimizing sum_i rho_J(Y_i - <X_i, theta>) over theta is equivalent to

    min_beta  1/2 ||Y~ - X~ beta||^2 + sum_i J(beta_i),

where rho_J is the Moreau envelope of J. For J = lam |.| this is the Lasso,
and rho_J is Huber's loss with the same lam.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Union

import numpy as np

from .baseline import m_estimate, objective
from .errors import PreconditionError, SolverError
from .loss import HuberLoss
from .numerics import least_squares_solve, qr_orthocomplement

if TYPE_CHECKING:  # pragma: no cover
    from .instance import ProblemInstance

ArrayLike = Union[float, np.ndarray]
DebugCmd = Callable[[str], None]

LASSO_TOL = 1e-12
LASSO_MAX_SWEEPS = 100_000
STATIONARITY_TOL = 1e-8


def soft_threshold(x: ArrayLike, alpha: float) -> ArrayLike:
    """eta(x; alpha) = sign(x) (|x| - alpha)_+.

    Args:
        x: values
        alpha: nonnegative threshold

    Returns:
        thresholded values, same shape as x
    """
    value = np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)
    return float(value) if np.ndim(x) == 0 else value


class PenaltyFunction(ABC):
    """Separable convex penalty J with a closed form prox."""

    @abstractmethod
    def value(self, x: ArrayLike) -> ArrayLike:
        """J(x), elementwise."""

    @abstractmethod
    def prox(self, z: ArrayLike, t: float = 1.0) -> ArrayLike:
        """argmin_x (z - x)^2 / (2 t) + J(x), elementwise."""

    def moreau(self, z: ArrayLike) -> ArrayLike:
        """rho_J(z) = min_x 1/2 (z - x)^2 + J(x).

        Args:
            z: points

        Returns:
            the envelope, elementwise
        """
        x = np.asarray(self.prox(z))
        value = 0.5 * (np.asarray(z) - x) ** 2 + np.asarray(self.value(x))
        return float(value) if np.ndim(z) == 0 else value


class L1Penalty(PenaltyFunction):
    """J(x) = lam |x|, whose envelope is Huber's loss."""

    def __init__(self, lam: float) -> None:
        """Store the penalty level.

        Args:
            lam: positive penalty

        Raises:
            ValueError: if lam is not positive
        """
        if not lam > 0:
            msg = f"Penalty level must be positive, got {lam}"
            raise ValueError(msg)
        self.lam = float(lam)

    def value(self, x: ArrayLike) -> ArrayLike:
        """lam |x|."""
        return self.lam * np.abs(x)

    def prox(self, z: ArrayLike, t: float = 1.0) -> ArrayLike:
        """Soft thresholding at t lam."""
        return soft_threshold(z, t * self.lam)


class RidgePenalty(PenaltyFunction):
    """J(x) = (c / 2) x^2, whose envelope is c z^2 / (2 (1 + c))."""

    def __init__(self, c: float) -> None:
        """Store the weight.

        Args:
            c: positive weight

        Raises:
            ValueError: if c is not positive
        """
        if not c > 0:
            msg = f"Ridge weight must be positive, got {c}"
            raise ValueError(msg)
        self.c = float(c)

    def value(self, x: ArrayLike) -> ArrayLike:
        """(c / 2) x^2."""
        return 0.5 * self.c * np.square(x)

    def prox(self, z: ArrayLike, t: float = 1.0) -> ArrayLike:
        """Shrinkage z / (1 + t c)."""
        return np.asarray(z) / (1 + t * self.c)


@dataclass(frozen=True, eq=False)
class DualInstance:
    """Penalized least squares problem paired with an M-estimation instance."""

    Y_tilde: np.ndarray
    X_tilde: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        """Number of unknowns, the n of the original problem."""
        return int(self.X_tilde.shape[1])


@dataclass(frozen=True, eq=False)
class LassoSolution:
    """Coordinate descent result."""

    beta: np.ndarray
    sweeps: int
    kkt_residual: float
    objective: float


@dataclass(frozen=True)
class DualityReport:
    """Agreement between the Huber and Lasso solutions of one instance."""

    huber_objective: float
    lasso_objective: float
    roundtrip_error: float
    kkt_residual: float


def build_dual(instance: ProblemInstance, lam: float = 1.0) -> DualInstance:
    """Build the Lasso paired with Huber(lam) regression on the instance.

    Args:
        instance: problem with n > p and X of full column rank
        lam: penalty level, also the Huber transition point

    Returns:
        the dual instance

    Raises:
        ValueError: if lam is not positive
    """
    if not lam > 0:
        msg = f"Penalty level must be positive, got {lam}"
        raise ValueError(msg)
    X_tilde = qr_orthocomplement(instance.X)
    return DualInstance(X_tilde @ instance.Y, X_tilde, float(lam))


def lasso_objective(dual: DualInstance, beta: np.ndarray) -> float:
    """1/2 ||Y~ - X~ beta||^2 + lam ||beta||_1.

    Args:
        dual: the Lasso problem
        beta: candidate solution of length n

    Returns:
        the Lasso objective
    """
    residual = dual.Y_tilde - dual.X_tilde @ beta
    return float(0.5 * residual @ residual + dual.lam * np.sum(np.abs(beta)))


def lasso_kkt_residual(dual: DualInstance, beta: np.ndarray) -> float:
    """Largest violation of the Lasso subgradient conditions.

    Args:
        dual: the Lasso problem
        beta: candidate solution

    Returns:
        max over coordinates of the distance from X~^T (Y~ - X~ beta) to
        lam * subdifferential of |beta_j|
    """
    gradient = dual.X_tilde.T @ (dual.Y_tilde - dual.X_tilde @ beta)
    active = beta != 0
    violation = np.where(
        active,
        np.abs(gradient - dual.lam * np.sign(beta)),
        np.maximum(np.abs(gradient) - dual.lam, 0.0),
    )
    return float(violation.max(initial=0.0))


def lasso_solve(
    dual: DualInstance,
    tol: float = LASSO_TOL,
    max_sweeps: int = LASSO_MAX_SWEEPS,
    beta_init: np.ndarray | None = None,
    debug_cmd: DebugCmd | None = None,
) -> LassoSolution:
    """Cyclic coordinate descent for the Lasso.

    Args:
        dual: the Lasso problem
        tol: stop once no coordinate moves by more than tol in a sweep
        max_sweeps: sweep budget
        beta_init: starting point, zero by default
        debug_cmd: receives one line per sweep

    Returns:
        the solution

    Raises:
        SolverError: if the sweep budget runs out
    """
    X, lam = dual.X_tilde, dual.lam
    beta = np.zeros(dual.n) if beta_init is None else np.array(beta_init, float)
    residual = dual.Y_tilde - X @ beta
    col_sq = np.einsum("ij,ij->j", X, X)

    for sweep in range(1, max_sweeps + 1):
        largest = 0.0
        for j in np.flatnonzero(col_sq > 0):
            column = X[:, j]
            old = beta[j]
            new = soft_threshold(old + column @ residual / col_sq[j], lam / col_sq[j])
            if new != old:
                residual -= column * (new - old)
                beta[j] = new
                largest = max(largest, abs(new - old))
        if debug_cmd is not None:
            debug_cmd(f"lasso sweep={sweep} max_change={largest:.3g}")
        if largest <= tol:
            return LassoSolution(
                beta,
                sweep,
                lasso_kkt_residual(dual, beta),
                lasso_objective(dual, beta),
            )

    msg = f"Coordinate descent did not converge in {max_sweeps} sweeps"
    raise SolverError(msg)


def lasso_support(beta: np.ndarray) -> np.ndarray:
    """Indices of the nonzero Lasso coefficients.

    A nonzero beta_i marks observation i as an outlier: its Huber residual
    lies beyond lam, in the linear part of the loss.

    Args:
        beta: Lasso solution

    Returns:
        sorted indices i with beta_i != 0
    """
    return np.flatnonzero(np.asarray(beta) != 0)


def ridge_solve(dual: DualInstance, c: float) -> np.ndarray:
    """Closed form minimizer of 1/2 ||Y~ - X~ beta||^2 + (c / 2) ||beta||^2.

    With orthonormal rows in X~ the minimizer is X~^T Y~ / (1 + c).

    Args:
        dual: the least squares data, lam ignored
        c: positive ridge weight

    Returns:
        the ridge solution

    Raises:
        ValueError: if c is not positive
    """
    if not c > 0:
        msg = f"Ridge weight must be positive, got {c}"
        raise ValueError(msg)
    return dual.X_tilde.T @ dual.Y_tilde / (1 + c)


def huber_from_lasso(instance: ProblemInstance, beta_hat: np.ndarray) -> np.ndarray:
    """theta = (X^T X)^{-1} X^T (Y - beta).

    Args:
        instance: the M-estimation problem
        beta_hat: Lasso solution of length n

    Returns:
        the matching M-estimate

    Raises:
        ValueError: if beta_hat does not have length n
    """
    if np.shape(beta_hat) != (instance.n,):
        msg = f"Expected beta of length {instance.n}, got shape {np.shape(beta_hat)}"
        raise ValueError(msg)
    return least_squares_solve(instance.X, instance.Y - beta_hat)


def lasso_from_huber(
    instance: ProblemInstance,
    theta_hat: np.ndarray,
    loss: HuberLoss,
    tol: float = STATIONARITY_TOL,
) -> np.ndarray:
    """beta = Y - X theta - psi(Y - X theta) for a Huber M-estimate theta.

    Args:
        instance: the M-estimation problem
        theta_hat: Huber M-estimate
        loss: the Huber loss used
        tol: allowed ||X^T psi(Y - X theta)|| / sqrt(p)

    Returns:
        the matching Lasso solution

    Raises:
        PreconditionError: if theta_hat is not stationary
    """
    residual = instance.Y - instance.X @ theta_hat
    u = np.asarray(loss.psi(residual))
    stationarity = float(np.linalg.norm(instance.X.T @ u) / math.sqrt(instance.p))
    if stationarity > tol:
        msg = f"theta is not a Huber M-estimate, stationarity gap {stationarity:.3g}"
        raise PreconditionError(msg)
    return residual - u


def huber_psi_via_soft_threshold(z: ArrayLike, b: float, lam: float) -> ArrayLike:
    """Huber effective score written with soft thresholding.

    Psi(z; b) = b z / (1 + b) - eta(b z / (1 + b); lam b).

    Args:
        z: points
        b: nonnegative scale
        lam: Huber transition point

    Returns:
        Psi(z; b) for Huber(lam)
    """
    shrunk = b * np.asarray(z, dtype=float) / (1 + b)
    value = shrunk - np.asarray(soft_threshold(shrunk, lam * b))
    return float(value) if np.ndim(z) == 0 else value


def duality_check(
    instance: ProblemInstance,
    lam: float,
    newton_tol: float = 1e-10,
    lasso_tol: float = LASSO_TOL,
    debug_cmd: DebugCmd | None = None,
) -> DualityReport:
    """Solve both sides and compare objectives and mapped solutions.

    Args:
        instance: the M-estimation problem
        lam: Huber transition point and Lasso penalty
        newton_tol: gradient tolerance of the Huber solve
        lasso_tol: coordinate tolerance of the Lasso solve
        debug_cmd: forwarded to both solvers

    Returns:
        objectives, the larger round-trip discrepancy and the Lasso KKT gap
    """
    loss = HuberLoss(lam)
    dual = build_dual(instance, lam)
    lasso = lasso_solve(dual, lasso_tol, debug_cmd=debug_cmd)
    estimate = m_estimate(instance, loss, newton_tol, debug_cmd=debug_cmd)

    theta_from_lasso = huber_from_lasso(instance, lasso.beta)
    beta_from_huber = lasso_from_huber(instance, estimate.theta, loss, tol=1e-6)
    roundtrip = max(
        float(np.max(np.abs(theta_from_lasso - estimate.theta))),
        float(np.max(np.abs(beta_from_huber - lasso.beta))),
    )
    return DualityReport(
        huber_objective=objective(instance, loss, estimate.theta),
        lasso_objective=lasso.objective,
        roundtrip_error=roundtrip,
        kkt_residual=lasso.kkt_residual,
    )
