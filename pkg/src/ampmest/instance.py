"""Random regression problems Y = X theta_0 + W."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .numerics import RngStream

if TYPE_CHECKING:  # pragma: no cover
    from .noise import NoiseModel
    from .parameters import ExperimentConfig

#: stream ids of the independent pieces of an instance
DESIGN_STREAM = 0
SIGNAL_STREAM = 1
NOISE_STREAM = 2


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A linear model with Gaussian design.

    Attributes:
        X: n by p design
        Y: responses, X theta0 + W
        theta0: true coefficients
        W: noise vector
        seed: seed the instance was drawn from, -1 when built by hand
    """

    X: np.ndarray
    Y: np.ndarray
    theta0: np.ndarray
    W: np.ndarray
    seed: int = -1

    def __post_init__(self) -> None:
        """Check the shapes agree.

        Raises:
            ValueError: if the arrays do not describe an n by p problem
        """
        if self.X.ndim != 2:  # noqa: PLR2004
            msg = f"Design must be 2-D, got shape {self.X.shape}"
            raise ValueError(msg)
        n, p = self.X.shape
        if self.Y.shape != (n,) or self.W.shape != (n,) or self.theta0.shape != (p,):
            msg = (
                f"Inconsistent shapes: X {self.X.shape}, Y {self.Y.shape}, "
                f"W {self.W.shape}, theta0 {self.theta0.shape}"
            )
            raise ValueError(msg)

    @property
    def n(self) -> int:
        """Number of observations."""
        return int(self.X.shape[0])

    @property
    def p(self) -> int:
        """Number of coefficients."""
        return int(self.X.shape[1])

    @property
    def delta(self) -> float:
        """Sampling ratio n / p."""
        return self.n / self.p

    @classmethod
    def from_design(
        cls, X: np.ndarray, theta0: np.ndarray, W: np.ndarray, seed: int = -1
    ) -> ProblemInstance:
        """Build an instance, computing Y = X theta0 + W.

        Args:
            X: design
            theta0: coefficients
            W: noise
            seed: originating seed

        Returns:
            the instance
        """
        X = np.asarray(X, dtype=float)
        theta0 = np.asarray(theta0, dtype=float)
        W = np.asarray(W, dtype=float)
        return cls(X, X @ theta0 + W, theta0, W, seed)

    def with_outliers(
        self, indices: Sequence[int], magnitude: float
    ) -> ProblemInstance:
        """Copy with gross errors of the given magnitude added to W.

        Each planted error carries the sign of the noise already at its index,
        so |W_i| grows by exactly magnitude.

        Args:
            indices: observations to corrupt
            magnitude: nonnegative size of each error

        Returns:
            the corrupted instance, same design and signal

        Raises:
            ValueError: if an index is out of range or magnitude is negative
        """
        if magnitude < 0:
            msg = f"Outlier magnitude must be nonnegative, got {magnitude}"
            raise ValueError(msg)
        picked = np.asarray(indices, dtype=int)
        if np.any((picked < 0) | (picked >= self.n)):
            msg = f"Outlier indices must lie in [0, {self.n}), got {list(picked)}"
            raise ValueError(msg)
        W = self.W.copy()
        W[picked] += magnitude * np.where(W[picked] < 0, -1.0, 1.0)
        return ProblemInstance.from_design(self.X, self.theta0, W, self.seed)


def gaussian_design(n: int, p: int, rng: RngStream) -> np.ndarray:
    """Design with i.i.d. N(0, 1/n) entries.

    Args:
        n: rows
        p: columns
        rng: random stream

    Returns:
        n by p matrix
    """
    return rng.generator().standard_normal((n, p)) / np.sqrt(n)


def sphere_signal(p: int, radius: float, rng: RngStream) -> np.ndarray:
    """Uniform draw from the sphere of the given radius in R^p.

    Args:
        p: dimension
        radius: sphere radius
        rng: random stream

    Returns:
        vector of length p and norm radius
    """
    direction = rng.generator().standard_normal(p)
    return radius * direction / np.linalg.norm(direction)


def generate(
    n: int,
    p: int,
    model: NoiseModel,
    seed: int,
    theta0_norm: float = 6.0,
    theta0: np.ndarray | None = None,
) -> ProblemInstance:
    """Draw an instance, deterministic in the seed.

    The design, signal and noise come from separate streams of the seed.

    Args:
        n: observations
        p: coefficients
        model: noise law
        seed: replication seed
        theta0_norm: ||theta0|| / sqrt(p) when theta0 is not given
        theta0: explicit coefficients

    Returns:
        the instance
    """
    X = gaussian_design(n, p, RngStream(seed, DESIGN_STREAM))
    if theta0 is None:
        radius = theta0_norm * np.sqrt(p)
        theta0 = sphere_signal(p, radius, RngStream(seed, SIGNAL_STREAM))
    W = model.sample(n, RngStream(seed, NOISE_STREAM))
    return ProblemInstance.from_design(X, theta0, W, seed)


def generate_from_config(config: ExperimentConfig, seed: int) -> ProblemInstance:
    """Draw the instance a config describes for one seed.

    Args:
        config: experiment configuration
        seed: replication seed

    Returns:
        the instance
    """
    theta0 = np.array(config.theta0) if config.theta0 else None
    return generate(
        config.n, config.p, config.noise_model, seed, config.theta0_norm, theta0
    )
