"""Smooth convex losses and their proximal / effective score family.

For a loss rho with score psi = rho', and b >= 0,

    Prox(z; b) = argmin_x { rho(x) + (x - z)^2 / (2 b) },
    Psi(z; b)  = z - Prox(z; b) = b * psi(Prox(z; b)).

All methods accept scalars or numpy arrays and broadcast elementwise.
"""

from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from typing import Union

import numpy as np

from .errors import ConvergenceError

ArrayLike = Union[float, np.ndarray]

#: Regex for loss specifications, NAME[:ARG[,ARG]]
LOSS_RE = re.compile(r"(?P<name>[a-z][a-z-]*)(:(?P<args>[^:]*))?")

NEWTON_MAX_ITER = 100
NEWTON_RTOL = 1e-12


def _shaped(z: ArrayLike, value: np.ndarray) -> ArrayLike:
    """Return a float for scalar input and an array otherwise."""
    if np.ndim(z) == 0:
        return float(value)
    return value


def _check_b(b: float) -> float:
    b = float(b)
    if not b >= 0 or not math.isfinite(b):
        msg = f"Effective score parameter b must be finite and nonnegative, got {b}"
        raise ValueError(msg)
    return b


class LossFunction(ABC):
    """A convex loss with bounded, nonnegative psi'."""

    #: short tag used in specs and reports
    name: str = ""
    #: sup of psi'
    psi_prime_sup: float = 1.0
    #: inf of rho'', zero when the loss is not strongly convex
    curvature_inf: float = 0.0

    @abstractmethod
    def rho(self, z: ArrayLike) -> ArrayLike:
        """Loss value.

        Args:
            z: residuals

        Returns:
            rho(z), elementwise
        """

    @abstractmethod
    def psi(self, z: ArrayLike) -> ArrayLike:
        """Score function rho'.

        Args:
            z: residuals

        Returns:
            psi(z), elementwise
        """

    @abstractmethod
    def psi_prime(self, z: ArrayLike) -> ArrayLike:
        """Almost-everywhere derivative of psi.

        Args:
            z: residuals

        Returns:
            psi'(z), elementwise
        """

    @property
    @abstractmethod
    def spec(self) -> str:
        """Specification string that parse_loss maps back to this loss."""

    @property
    def strongly_convex(self) -> bool:
        """Whether rho'' is bounded away from zero."""
        return self.curvature_inf > 0

    def __repr__(self) -> str:
        """Loss representation.

        Returns:
            the specification string wrapped in the class name
        """
        return f"{type(self).__name__}({self.spec!r})"

    def __eq__(self, other: object) -> bool:
        """Losses are equal when their specifications match.

        Args:
            other: the other object

        Returns:
            true for a loss with the same specification
        """
        return isinstance(other, LossFunction) and self.spec == other.spec

    def __hash__(self) -> int:
        """Hash on the specification.

        Returns:
            hash of the spec string
        """
        return hash(self.spec)

    def prox(self, z: ArrayLike, b: float) -> ArrayLike:
        """Proximal operator, the unique x with x + b psi(x) = z.

        The base implementation runs a safeguarded Newton iteration; losses
        with a closed form override it.

        Args:
            z: points
            b: nonnegative scale

        Returns:
            Prox(z; b), elementwise
        """
        b = _check_b(b)
        return _shaped(z, self._newton_prox(np.asarray(z, dtype=float), b))

    def _newton_prox(self, z: np.ndarray, b: float) -> np.ndarray:
        x = z.copy()
        if b == 0:
            return x
        psi_zero = abs(float(self.psi(0.0)))
        spread = b * self.psi_prime_sup * np.abs(z) + b * psi_zero + 1
        lo, hi = z - spread, z + spread
        scale = NEWTON_RTOL * (1 + np.abs(z))
        for _ in range(NEWTON_MAX_ITER):
            residual = x + b * np.asarray(self.psi(x)) - z
            if np.all(np.abs(residual) <= scale):
                return x
            # residual is increasing in x
            hi = np.where(residual > 0, x, hi)
            lo = np.where(residual < 0, x, lo)
            step = x - residual / (1 + b * np.asarray(self.psi_prime(x)))
            outside = (step <= lo) | (step >= hi)
            x = np.where(outside, 0.5 * (lo + hi), step)

        msg = f"Prox of {self.spec} did not converge in {NEWTON_MAX_ITER} iterations"
        raise ConvergenceError(msg)

    def psi_eff(self, z: ArrayLike, b: float) -> ArrayLike:
        """Effective score Psi(z; b) = z - Prox(z; b).

        Args:
            z: points
            b: nonnegative scale

        Returns:
            Psi(z; b), elementwise
        """
        return _shaped(z, np.asarray(z, dtype=float) - np.asarray(self.prox(z, b)))

    def psi_eff_prime(self, z: ArrayLike, b: float) -> ArrayLike:
        """Derivative of the effective score in z.

        Uses b rho''(x) / (1 + b rho''(x)) at x = Prox(z; b).

        Args:
            z: points
            b: nonnegative scale

        Returns:
            dPsi/dz, elementwise in [0, 1)
        """
        b = _check_b(b)
        curvature = b * np.asarray(self.psi_prime(self.prox(z, b)), dtype=float)
        return _shaped(z, curvature / (1 + curvature))

    def kinks(self, b: float) -> tuple[float, ...]:
        """Points where Psi(.; b) and Prox(.; b) are not differentiable.

        At b = 0 these are the kinks of psi itself.

        Args:
            b: nonnegative scale

        Returns:
            the kink locations, empty for smooth losses
        """
        _check_b(b)
        return ()

    def eta_residual(self, z: ArrayLike, b: float) -> ArrayLike:
        """Map from adjusted to ordinary residuals, eta(z; b) = z - Psi(z; b).

        Args:
            z: adjusted residuals
            b: nonnegative scale

        Returns:
            Prox(z; b), elementwise
        """
        return self.prox(z, b)


class SquaredLoss(LossFunction):
    """rho(z) = z^2 / 2."""

    name = "squared"
    psi_prime_sup = 1.0
    curvature_inf = 1.0

    @property
    def spec(self) -> str:
        """Specification string."""
        return "squared"

    def rho(self, z: ArrayLike) -> ArrayLike:
        """Half the squared residual."""
        return _shaped(z, 0.5 * np.square(z))

    def psi(self, z: ArrayLike) -> ArrayLike:
        """Identity score."""
        return _shaped(z, np.asarray(z, dtype=float))

    def psi_prime(self, z: ArrayLike) -> ArrayLike:
        """Constant one."""
        return _shaped(z, np.ones_like(z, dtype=float))

    def prox(self, z: ArrayLike, b: float) -> ArrayLike:
        """Closed form z / (1 + b)."""
        b = _check_b(b)
        return _shaped(z, np.asarray(z, dtype=float) / (1 + b))


class HuberLoss(LossFunction):
    """Huber's loss, quadratic on [-lam, lam] and linear outside."""

    name = "huber"
    psi_prime_sup = 1.0
    curvature_inf = 0.0

    def __init__(self, lam: float) -> None:
        """Build a Huber loss.

        Args:
            lam: positive transition point

        Raises:
            ValueError: if lam is not positive
        """
        if not lam > 0:
            msg = f"Huber parameter must be positive, got {lam}"
            raise ValueError(msg)
        self.lam = float(lam)

    @property
    def spec(self) -> str:
        """Specification string."""
        return f"huber:{self.lam!r}"

    def rho(self, z: ArrayLike) -> ArrayLike:
        """Huber loss value."""
        a = np.abs(np.asarray(z, dtype=float))
        lam = self.lam
        return _shaped(z, np.where(a <= lam, 0.5 * a**2, lam * a - 0.5 * lam**2))

    def psi(self, z: ArrayLike) -> ArrayLike:
        """Clipped identity."""
        return _shaped(z, np.clip(np.asarray(z, dtype=float), -self.lam, self.lam))

    def psi_prime(self, z: ArrayLike) -> ArrayLike:
        """Indicator of |z| <= lam, closed at the kinks."""
        inside = np.abs(np.asarray(z, dtype=float)) <= self.lam
        return _shaped(z, inside.astype(float))

    def prox(self, z: ArrayLike, b: float) -> ArrayLike:
        """Shrink by 1 + b inside, shift by b lam outside."""
        b = _check_b(b)
        z_arr = np.asarray(z, dtype=float)
        inside = np.abs(z_arr) <= self.lam * (1 + b)
        value = np.where(
            inside, z_arr / (1 + b), z_arr - b * self.lam * np.sign(z_arr)
        )
        return _shaped(z, value)

    def kinks(self, b: float) -> tuple[float, ...]:
        """Ends of the shrinkage band, +-lam (1 + b)."""
        edge = self.lam * (1 + _check_b(b))
        return (-edge, edge)


class HuberRidgeLoss(LossFunction):
    """Huber loss plus (c/2) z^2, a strongly convex Huber variant."""

    name = "huber-ridge"

    def __init__(self, lam: float, ridge: float) -> None:
        """Build the hybrid loss.

        Args:
            lam: positive Huber transition point
            ridge: positive quadratic weight c

        Raises:
            ValueError: if either parameter is not positive
        """
        if not lam > 0 or not ridge > 0:
            msg = f"huber-ridge needs positive parameters, got {lam}, {ridge}"
            raise ValueError(msg)
        self.lam = float(lam)
        self.ridge = float(ridge)
        self.psi_prime_sup = 1.0 + self.ridge
        self.curvature_inf = self.ridge

    @property
    def spec(self) -> str:
        """Specification string."""
        return f"huber-ridge:{self.lam!r},{self.ridge!r}"

    def rho(self, z: ArrayLike) -> ArrayLike:
        """Huber value plus the ridge term."""
        z_arr = np.asarray(z, dtype=float)
        a = np.abs(z_arr)
        lam = self.lam
        huber = np.where(a <= lam, 0.5 * a**2, lam * a - 0.5 * lam**2)
        return _shaped(z, huber + 0.5 * self.ridge * z_arr**2)

    def psi(self, z: ArrayLike) -> ArrayLike:
        """Clipped identity plus c z."""
        z_arr = np.asarray(z, dtype=float)
        return _shaped(z, np.clip(z_arr, -self.lam, self.lam) + self.ridge * z_arr)

    def psi_prime(self, z: ArrayLike) -> ArrayLike:
        """1 + c inside the Huber band, c outside."""
        inside = np.abs(np.asarray(z, dtype=float)) <= self.lam
        return _shaped(z, inside.astype(float) + self.ridge)

    def prox(self, z: ArrayLike, b: float) -> ArrayLike:
        """Piecewise linear closed form."""
        b = _check_b(b)
        z_arr = np.asarray(z, dtype=float)
        inside = np.abs(z_arr) <= self.lam * (1 + b * (1 + self.ridge))
        value = np.where(
            inside,
            z_arr / (1 + b * (1 + self.ridge)),
            (z_arr - b * self.lam * np.sign(z_arr)) / (1 + b * self.ridge),
        )
        return _shaped(z, value)

    def kinks(self, b: float) -> tuple[float, ...]:
        """Ends of the band, +-lam (1 + b (1 + c))."""
        edge = self.lam * (1 + _check_b(b) * (1 + self.ridge))
        return (-edge, edge)


class LogCoshLoss(LossFunction):
    """rho(z) = s^2 log cosh(z / s), smooth but not strongly convex."""

    name = "logcosh"
    psi_prime_sup = 1.0
    curvature_inf = 0.0

    def __init__(self, scale: float = 1.0) -> None:
        """Build the loss.

        Args:
            scale: positive scale s

        Raises:
            ValueError: if the scale is not positive
        """
        if not scale > 0:
            msg = f"logcosh scale must be positive, got {scale}"
            raise ValueError(msg)
        self.scale = float(scale)

    @property
    def spec(self) -> str:
        """Specification string."""
        return f"logcosh:{self.scale!r}"

    def rho(self, z: ArrayLike) -> ArrayLike:
        """Overflow-safe s^2 log cosh(z / s)."""
        u = np.asarray(z, dtype=float) / self.scale
        return _shaped(z, self.scale**2 * (np.logaddexp(u, -u) - math.log(2.0)))

    def psi(self, z: ArrayLike) -> ArrayLike:
        """s tanh(z / s)."""
        return _shaped(z, self.scale * np.tanh(np.asarray(z, dtype=float) / self.scale))

    def psi_prime(self, z: ArrayLike) -> ArrayLike:
        """sech^2(z / s)."""
        t = np.tanh(np.asarray(z, dtype=float) / self.scale)
        return _shaped(z, 1.0 - t**2)


def _parse_args(args: str | None, count: int, spec: str) -> list[float]:
    values = [] if not args else args.split(",")
    if len(values) != count:
        msg = f"Loss {spec!r} expects {count} parameter(s), got {len(values)}"
        raise ValueError(msg)
    try:
        return [float(v) for v in values]
    except ValueError:
        msg = f"Unable to parse parameters of loss {spec!r}"
        raise ValueError(msg) from None


def parse_loss(spec: str) -> LossFunction:
    """Build a loss from a specification string.

    Accepted forms are "squared", "huber:LAM", "logcosh:SCALE" and
    "huber-ridge:LAM,C".

    Args:
        spec: the specification

    Returns:
        The matching loss

    Raises:
        ValueError: if the specification cannot be parsed
    """
    match = LOSS_RE.fullmatch(spec.strip().lower())
    if not match:
        msg = f"Unable to parse loss specification {spec!r}"
        raise ValueError(msg)
    name, args = match.group("name"), match.group("args")
    if name == "squared":
        _parse_args(args, 0, spec)
        return SquaredLoss()
    if name == "huber":
        return HuberLoss(*_parse_args(args, 1, spec))
    if name == "logcosh":
        return LogCoshLoss(*_parse_args(args, 1, spec))
    if name == "huber-ridge":
        return HuberRidgeLoss(*_parse_args(args, 2, spec))

    msg = (
        f"Unknown loss {name!r}. "
        "Valid losses are squared, huber:LAM, logcosh:SCALE, huber-ridge:LAM,C"
    )
    raise ValueError(msg)
