"""Reference M-estimation by damped Newton, and classical variance formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy import linalg

from .errors import MatrixError, SolverError

if TYPE_CHECKING:  # pragma: no cover
    from .instance import ProblemInstance
    from .loss import LossFunction
    from .noise import NoiseModel
    from .numerics import QuadratureRule

DebugCmd = Callable[[str], None]

NEWTON_TOL = 1e-10
NEWTON_MAX_ITERS = 100
RIDGE_FLOOR = 1e-10
ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60


@dataclass(frozen=True, eq=False)
class MEstimate:
    """Minimizer of sum_i rho(Y_i - <X_i, theta>)."""

    theta: np.ndarray
    gradient_norm: float
    iterations: int
    loss_value: float


def objective(
    instance: ProblemInstance, loss: LossFunction, theta: np.ndarray
) -> float:
    """L(theta) = sum_i rho(Y_i - <X_i, theta>).

    Args:
        instance: the problem
        loss: the loss
        theta: coefficients

    Returns:
        the objective value
    """
    return float(np.sum(loss.rho(instance.Y - instance.X @ theta)))


def m_estimate(
    instance: ProblemInstance,
    loss: LossFunction,
    tol: float = NEWTON_TOL,
    max_iters: int = NEWTON_MAX_ITERS,
    theta_init: np.ndarray | None = None,
    debug_cmd: DebugCmd | None = None,
) -> MEstimate:
    """Damped Newton with an IRLS Hessian and Armijo backtracking.

    The Hessian X^T diag(psi'(r)) X gets a 1e-10 ridge when the loss is not
    strongly convex.

    Args:
        instance: the problem, n > p with X of full column rank
        loss: the loss
        tol: stop once ||X^T psi(Y - X theta)|| / sqrt(p) <= tol
        max_iters: Newton iteration budget
        theta_init: starting point, zero by default
        debug_cmd: receives one line per iteration

    Returns:
        the M-estimate

    Raises:
        SolverError: if the line search fails or the budget runs out
    """
    X, Y = instance.X, instance.Y
    scale = math.sqrt(instance.p)
    ridge = RIDGE_FLOOR if loss.curvature_inf == 0 else 0.0
    theta = np.zeros(instance.p) if theta_init is None else np.array(theta_init, float)
    value = objective(instance, loss, theta)

    for iteration in range(max_iters + 1):
        residual = Y - X @ theta
        score = X.T @ np.asarray(loss.psi(residual))
        grad_norm = float(np.linalg.norm(score) / scale)
        if debug_cmd is not None:
            debug_cmd(f"newton iter={iteration} loss={value:.12g} grad={grad_norm:.3g}")
        if grad_norm <= tol:
            return MEstimate(theta, grad_norm, iteration, value)
        if iteration == max_iters:
            break

        weights = np.asarray(loss.psi_prime(residual))
        hessian = (X.T * weights) @ X + ridge * np.eye(instance.p)
        try:
            direction = linalg.solve(hessian, score, assume_a="pos")
        except linalg.LinAlgError as error:
            msg = f"Newton system is singular at iteration {iteration}"
            raise SolverError(msg) from error

        # the gradient of L is -score
        slope = -float(score @ direction)
        slack = 1e-14 * (1 + abs(value))
        step = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = theta + step * direction
            candidate_value = objective(instance, loss, candidate)
            if candidate_value <= value + ARMIJO_C * step * slope + slack:
                break
            step /= 2
        else:
            msg = (
                f"Line search failed at iteration {iteration}, "
                f"gradient {grad_norm:.3g}"
            )
            raise SolverError(msg)
        theta, value = candidate, candidate_value

    msg = f"Newton did not converge in {max_iters} iterations, gradient {grad_norm:.3g}"
    raise SolverError(msg)


def classical_variance(
    loss: LossFunction, model: NoiseModel, rule: QuadratureRule | None = None
) -> float:
    """Asymptotic variance E psi^2 / (E psi')^2 under the noise law.

    Args:
        loss: the loss
        model: noise law
        rule: quadrature rule

    Returns:
        the classical sandwich variance

    Raises:
        ValueError: if E psi' vanishes
    """
    kinks = loss.kinks(0.0)
    second = model.smoothed_expectation(
        0.0, lambda z: np.square(loss.psi(z)), rule, kinks
    )
    slope = model.smoothed_slope(
        0.0,
        lambda z: np.asarray(loss.psi(z)),
        lambda z: np.asarray(loss.psi_prime(z)),
        rule,
        kinks,
    )
    if slope <= 0:
        msg = f"E psi' vanishes for {loss.spec} under {model.name}"
        raise ValueError(msg)
    return second / slope**2


@dataclass(frozen=True, eq=False)
class WhitenedDesign:
    """General Gaussian design mapped to a standard one.

    ``X_standard = X Sigma^{-1/2}``; coefficients map by theta -> Sigma^{1/2} theta.
    """

    X_standard: np.ndarray
    sqrt_sigma: np.ndarray
    inv_sqrt_sigma: np.ndarray

    def to_standard(self, theta: np.ndarray) -> np.ndarray:
        """Coefficients of the whitened problem.

        Args:
            theta: coefficients for the original design

        Returns:
            Sigma^{1/2} theta
        """
        return self.sqrt_sigma @ theta

    def from_standard(self, theta_standard: np.ndarray) -> np.ndarray:
        """Coefficients of the original problem.

        Args:
            theta_standard: coefficients for the whitened design

        Returns:
            Sigma^{-1/2} theta_standard
        """
        return self.inv_sqrt_sigma @ theta_standard


def whiten_design(X: np.ndarray, Sigma: np.ndarray) -> WhitenedDesign:
    """Whiten a design whose rows have covariance Sigma / n.

    Args:
        X: n by p design
        Sigma: p by p symmetric positive definite matrix

    Returns:
        the whitened design with its coefficient maps

    Raises:
        MatrixError: if Sigma is not symmetric positive definite
    """
    Sigma = np.asarray(Sigma, dtype=float)
    p = np.shape(X)[1]
    if Sigma.shape != (p, p) or not np.allclose(Sigma, Sigma.T, atol=1e-12):
        msg = f"Sigma must be a symmetric {p} x {p} matrix"
        raise MatrixError(msg)
    eigenvalues, vectors = linalg.eigh(Sigma)
    if eigenvalues.min() <= 0:
        msg = f"Sigma is not positive definite, smallest eigenvalue {eigenvalues.min()}"
        raise MatrixError(msg)
    root = np.sqrt(eigenvalues)
    sqrt_sigma = (vectors * root) @ vectors.T
    inv_sqrt_sigma = (vectors / root) @ vectors.T
    X_standard = np.asarray(X, float) @ inv_sqrt_sigma
    return WhitenedDesign(X_standard, sqrt_sigma, inv_sqrt_sigma)
