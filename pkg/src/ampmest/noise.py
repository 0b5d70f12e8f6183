"""Noise laws: Gaussian mixtures with optional point atoms."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, special, stats

from .errors import UndefinedFisherError
from .numerics import (
    SEGMENT_HALF_WIDTH,
    QuadratureRule,
    RngStream,
    gauss_hermite,
    gaussian_segments,
    tensor_grid,
)

#: Regex for noise specifications, NAME:ENTRY[;ENTRY...]
NOISE_RE = re.compile(r"(?P<name>[a-z]+):(?P<args>[^:]+)")

WEIGHT_TOL = 1e-12
FISHER_GRID = 4001
FISHER_WIDTH = 10.0

VectorFunction = Callable[[np.ndarray], np.ndarray]
RandomSource = Union[RngStream, np.random.Generator]


@dataclass(frozen=True)
class NoiseModel:
    """Mixture of Gaussian components and point atoms.

    Attributes:
        gaussian_components: (weight, mean, sd) triples, sd > 0
        atoms: (weight, location) pairs
        name: tag used in reports
    """

    gaussian_components: tuple[tuple[float, float, float], ...] = ()
    atoms: tuple[tuple[float, float], ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        """Normalize to tuples and check the weights.

        Raises:
            ValueError: on negative weights, nonpositive sd or total weight != 1
        """
        components = tuple(tuple(float(v) for v in c) for c in self.gaussian_components)
        atoms = tuple(tuple(float(v) for v in a) for a in self.atoms)
        object.__setattr__(self, "gaussian_components", components)
        object.__setattr__(self, "atoms", atoms)

        for weight, _, sd in components:
            if weight < 0 or not sd > 0:
                msg = (
                    "Gaussian component needs weight >= 0 and sd > 0, "
                    f"got {weight}, {sd}"
                )
                raise ValueError(msg)
        for weight, _ in atoms:
            if weight < 0:
                msg = f"Atom weight must be nonnegative, got {weight}"
                raise ValueError(msg)
        total = sum(c[0] for c in components) + sum(a[0] for a in atoms)
        if abs(total - 1) > WEIGHT_TOL:
            msg = f"Noise weights must sum to 1, got {total}"
            raise ValueError(msg)

    def _table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Weights, locations and scales, atoms carrying scale zero."""
        rows = [*self.gaussian_components, *((w, loc, 0.0) for w, loc in self.atoms)]
        table = np.array(rows, dtype=float).reshape(-1, 3)
        return table[:, 0], table[:, 1], table[:, 2]

    @property
    def has_atoms(self) -> bool:
        """Whether any point mass carries positive weight."""
        return any(w > 0 for w, _ in self.atoms)

    def mean(self) -> float:
        """Mixture mean.

        Returns:
            E W
        """
        w, loc, _ = self._table()
        return float(np.dot(w, loc))

    def second_moment(self) -> float:
        """Mixture second moment.

        Returns:
            E W^2
        """
        w, loc, sd = self._table()
        return float(np.dot(w, loc**2 + sd**2))

    def variance(self) -> float:
        """Mixture variance.

        Returns:
            Var W, clipped at zero against rounding
        """
        return max(self.second_moment() - self.mean() ** 2, 0.0)

    def sample(self, n: int, rng: RandomSource) -> np.ndarray:
        """Draw n independent values.

        Args:
            n: sample size
            rng: stream or generator supplying randomness

        Returns:
            array of n draws

        Raises:
            ValueError: if n is negative
        """
        if n < 0:
            msg = f"Sample size must be nonnegative, got {n}"
            raise ValueError(msg)
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        w, loc, sd = self._table()
        cumulative = np.cumsum(w)
        index = np.searchsorted(cumulative, gen.random(n), side="right")
        index = np.minimum(index, len(w) - 1)
        return loc[index] + sd[index] * gen.standard_normal(n)

    def _smoothed_nodes(
        self,
        tau: float,
        rule: QuadratureRule | None,
        kinks: Sequence[float],
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per-component standard nodes, weights and points W + tau Z.

        Without an explicit rule, kinks switch every component to a
        breakpoint-aware rule split where its points cross a kink.
        """
        if tau < 0:
            msg = f"Smoothing scale must be nonnegative, got {tau}"
            raise ValueError(msg)
        w, loc, sd = self._table()
        scale = np.sqrt(sd**2 + tau**2)
        if rule is None and len(kinks) > 0:
            z, weights = gaussian_segments(_standardized(kinks, loc, scale))
        else:
            rule = rule or gauss_hermite()
            z = np.broadcast_to(rule.nodes, (len(w), len(rule)))
            weights = np.broadcast_to(rule.weights, z.shape)
        points = loc[:, None] + scale[:, None] * z
        return w, scale, z, weights, points

    def smoothed_expectation(
        self,
        tau: float,
        f: VectorFunction,
        rule: QuadratureRule | None = None,
        kinks: Sequence[float] = (),
    ) -> float:
        """E f(W + tau Z) with Z standard normal independent of W.

        Each Gaussian component folds its sd into the scale sqrt(sd^2 + tau^2);
        atoms use f(a + tau * node) directly.

        Args:
            tau: nonnegative smoothing scale
            f: vectorized integrand
            rule: quadrature rule, default Gauss-Hermite of order 61, or the
                breakpoint-aware rule when kinks are given
            kinks: points where f is not smooth

        Returns:
            the expectation
        """
        w, _, _, weights, points = self._smoothed_nodes(tau, rule, kinks)
        values = np.sum(np.asarray(f(points), dtype=float) * weights, axis=1)
        return float(np.dot(w, values))

    def smoothed_slope(
        self,
        tau: float,
        f: VectorFunction,
        f_prime: VectorFunction,
        rule: QuadratureRule | None = None,
        kinks: Sequence[float] = (),
    ) -> float:
        """E f'(W + tau Z) through Stein's identity.

        A component with scale s > 0 contributes E{Z f(m + s Z)} / s, which is
        continuous in the parameters of f even when f' jumps. Unsmoothed atoms
        fall back to f'(a).

        Args:
            tau: nonnegative smoothing scale
            f: vectorized function
            f_prime: its a.e. derivative, used only for unsmoothed atoms
            rule: quadrature rule
            kinks: points where f is not smooth

        Returns:
            the expected slope
        """
        w, scale, z, weights, points = self._smoothed_nodes(tau, rule, kinks)
        smooth = scale > 0
        total = 0.0
        if np.any(smooth):
            values = np.asarray(f(points[smooth]), dtype=float)
            stein = np.sum(values * z[smooth] * weights[smooth], axis=1)
            total += float(np.dot(w[smooth], stein / scale[smooth]))
        if not np.all(smooth):
            rough = points[~smooth][:, 0]
            total += float(np.dot(w[~smooth], np.asarray(f_prime(rough), dtype=float)))
        return total

    def correlated_expectation(
        self,
        g: VectorFunction,
        h: VectorFunction,
        cov: tuple[float, float, float],
        rule: QuadratureRule | None = None,
        kinks: Sequence[float] = (),
    ) -> float:
        """E{g(W + U1) h(W + U2)} for a centered Gaussian pair (U1, U2).

        With kinks and no explicit rule, the second coordinate is integrated
        conditionally on the first, each with a breakpoint-aware rule.

        Args:
            g: first vectorized function
            h: second vectorized function
            cov: (Var U1, Cov(U1, U2), Var U2)
            rule: one dimensional rule expanded to a tensor grid
            kinks: points where g and h are not smooth

        Returns:
            the expectation

        Raises:
            ValueError: if cov is not positive semidefinite
        """
        c11, c12, c22 = (float(c) for c in cov)
        if c11 < 0 or c22 < 0 or c12**2 > c11 * c22 * (1 + 1e-12) + 1e-300:
            msg = f"Covariance {cov} is not positive semidefinite"
            raise ValueError(msg)
        segmented = rule is None and len(kinks) > 0
        if not segmented:
            z1, z2, grid_weights = tensor_grid(rule or gauss_hermite())

        total = 0.0
        for weight, loc, sd in zip(*self._table()):
            if weight == 0:
                continue
            a, b, c = sd**2 + c11, sd**2 + c12, sd**2 + c22
            l11 = math.sqrt(a)
            l21 = b / l11 if l11 > 0 else 0.0
            l22 = math.sqrt(max(c - l21**2, 0.0))
            if segmented:
                value = _conditional_pair(g, h, loc, (l11, l21, l22), kinks)
            else:
                x1 = loc + l11 * z1
                x2 = loc + l21 * z1 + l22 * z2
                value = float(np.sum(grid_weights * g(x1) * h(x2)))
            total += weight * value
        return total

    def fisher_information_smoothed(self, tau: float) -> float:
        """Fisher information of W + tau Z.

        The score of the smoothed density is evaluated through log-sum-exp
        responsibilities and integrated with the trapezoid rule.

        Args:
            tau: nonnegative smoothing scale

        Returns:
            I(F_W * N(0, tau^2))

        Raises:
            UndefinedFisherError: if tau is zero and the law has atoms
            ValueError: if tau is negative
        """
        if tau < 0:
            msg = f"Smoothing scale must be nonnegative, got {tau}"
            raise ValueError(msg)
        if tau == 0 and self.has_atoms:
            msg = "Fisher information of a law with point masses is undefined"
            raise UndefinedFisherError(msg)

        w, loc, sd = self._table()
        keep = w > 0
        w, loc, scale = w[keep], loc[keep], np.sqrt(sd[keep] ** 2 + tau**2)

        half_width = np.max(np.abs(loc)) + FISHER_WIDTH * np.max(scale)
        x = np.linspace(-half_width, half_width, FISHER_GRID)
        log_parts = np.log(w)[:, None] + stats.norm.logpdf(
            x[None, :], loc[:, None], scale[:, None]
        )
        log_density = special.logsumexp(log_parts, axis=0)
        responsibility = np.exp(log_parts - log_density)
        pull = (loc[:, None] - x) / scale[:, None] ** 2
        score = np.sum(responsibility * pull, axis=0)
        return float(integrate.trapezoid(score**2 * np.exp(log_density), x))

    def fisher_information(self) -> float:
        """Fisher information of W itself.

        Returns:
            I(F_W), infinite when the law has point masses
        """
        if self.has_atoms:
            return math.inf
        return self.fisher_information_smoothed(0.0)


def _standardized(
    kinks: Sequence[float], loc: np.ndarray, scale: np.ndarray
) -> np.ndarray:
    """Kinks in the standard units of each component, one row per component.

    Unsmoothed atoms get no interior breakpoints.
    """
    k = np.asarray(kinks, dtype=float)[None, :]
    out = np.full((len(loc), k.shape[1]), SEGMENT_HALF_WIDTH)
    np.divide(k - loc[:, None], scale[:, None], out=out, where=scale[:, None] > 0)
    return out


def _conditional_pair(
    g: VectorFunction,
    h: VectorFunction,
    loc: float,
    factor: tuple[float, float, float],
    kinks: Sequence[float],
) -> float:
    """E{g(X1) h(X2)} for X1 = loc + l11 Z1, X2 = loc + l21 Z1 + l22 Z2.

    Z1 is integrated with breakpoints where either coordinate crosses a kink
    when Z2 is switched off; E{h(X2) | Z1} gets its own breakpoints per node.
    """
    l11, l21, l22 = factor
    k = np.asarray(kinks, dtype=float)
    outer = [(k - loc) / l11] if l11 > 0 else []
    if l21 != 0:
        outer.append((k - loc) / l21)
    z1, w1 = gaussian_segments(np.concatenate(outer) if outer else [])
    if l22 > 0:
        shift = loc + l21 * z1[:, None]
        z2, w2 = gaussian_segments((k[None, :] - shift) / l22)
        inner = np.sum(w2 * np.asarray(h(shift + l22 * z2), dtype=float), axis=1)
    else:
        inner = np.asarray(h(loc + l21 * z1), dtype=float)
    return float(np.sum(w1 * np.asarray(g(loc + l11 * z1), dtype=float) * inner))


def standard_normal() -> NoiseModel:
    """N(0, 1) noise.

    Returns:
        the model
    """
    return NoiseModel(((1.0, 0.0, 1.0),), (), "normal:0,1")


def contaminated_normal(eps: float, location: float) -> NoiseModel:
    """(1 - eps) N(0, 1) + eps * (unit atom at location).

    Args:
        eps: contamination fraction in [0, 1]
        location: atom location

    Returns:
        the model

    Raises:
        ValueError: if eps is outside [0, 1]
    """
    if not 0 <= eps <= 1:
        msg = f"Contamination fraction must be in [0, 1], got {eps}"
        raise ValueError(msg)
    name = f"cn:{eps},{location}"
    return NoiseModel(((1 - eps, 0.0, 1.0),), ((eps, location),), name)


def _floats(entry: str, spec: str) -> list[float]:
    try:
        return [float(v) for v in entry.split(",")]
    except ValueError:
        msg = f"Unable to parse {entry!r} in noise specification {spec!r}"
        raise ValueError(msg) from None


def parse_noise(spec: str) -> NoiseModel:
    """Build a noise model from a specification string.

    Accepted forms:
        normal:MEAN,SD
        cn:EPS,X                 (1 - EPS) N(0,1) + EPS atom at X
        mix:W,MEAN,SD;W,LOC;...  three values for a Gaussian, two for an atom
        atom:W,LOC;...  or atom:LOC

    Args:
        spec: the specification

    Returns:
        the model

    Raises:
        ValueError: if the specification cannot be parsed
    """
    match = NOISE_RE.fullmatch(spec.strip().lower().replace(" ", ""))
    if not match:
        msg = f"Unable to parse noise specification {spec!r}"
        raise ValueError(msg)
    name = match.group("name")
    entries = [_floats(e, spec) for e in match.group("args").split(";") if e]

    pair = len(entries) == 1 and len(entries[0]) == 2  # noqa: PLR2004
    if name in ("normal", "cn") and pair:
        first, second = entries[0]
        if name == "normal":
            return NoiseModel(((1.0, first, second),), (), spec)
        model = contaminated_normal(first, second)
        return NoiseModel(model.gaussian_components, model.atoms, spec)

    if name == "atom":
        if len(entries) == 1 and len(entries[0]) == 1:
            return NoiseModel((), ((1.0, entries[0][0]),), spec)
        if all(len(e) == 2 for e in entries):  # noqa: PLR2004
            return NoiseModel((), tuple((w, loc) for w, loc in entries), spec)

    if name == "mix" and entries and all(len(e) in (2, 3) for e in entries):
        gaussians = tuple(
            (e[0], e[1], e[2]) for e in entries if len(e) == 3  # noqa: PLR2004
        )
        atoms = tuple((e[0], e[1]) for e in entries if len(e) == 2)  # noqa: PLR2004
        return NoiseModel(gaussians, atoms, spec)

    msg = (
        f"Unable to parse noise specification {spec!r}. Valid forms are "
        "normal:MEAN,SD, cn:EPS,X, mix:W,MEAN,SD;W,LOC;... and atom:W,LOC;..."
    )
    raise ValueError(msg)
