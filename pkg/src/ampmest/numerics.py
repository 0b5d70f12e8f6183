"""Quadrature, scalar root finding, seeded streams and dense kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e, legendre
from scipy import linalg, optimize

from .errors import BracketError, RankError

#: Default Gauss-Hermite order for every one dimensional Gaussian expectation
DEFAULT_ORDER = 61
MAX_ORDER = 512
#: Root finder tolerance in the argument
ROOT_TOL = 1e-10
#: Smallest-root scan defaults
SCAN_GRID = 256
SCAN_HI = 8.0
SCAN_HI_MAX = 1e6
#: Relative pivot size below which a triangular factor is treated as singular
RANK_RCOND = 1e-12
#: Breakpoint-aware Gaussian rules cover this many standard deviations
SEGMENT_HALF_WIDTH = 12.0
#: Gauss-Legendre nodes on each piece of unit width or less
SEGMENT_ORDER = 16

ScalarFunction = Callable[[float], float]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights approximating an expectation.

    For ``kind == "gauss-hermite"`` the weights are normalized so that
    ``sum(weights * f(nodes))`` approximates ``E f(Z)`` for standard normal Z.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "gauss-hermite"

    def __post_init__(self) -> None:
        """Validate matching, non-empty node and weight arrays.

        Raises:
            ValueError: if the arrays are empty, mismatched or weights negative
        """
        if self.nodes.ndim != 1 or self.nodes.shape != self.weights.shape:
            msg = "Quadrature nodes and weights must be 1-D arrays of equal length"
            raise ValueError(msg)
        if len(self.nodes) == 0:
            msg = "Quadrature rule needs at least one node"
            raise ValueError(msg)
        if np.any(self.weights < 0):
            msg = "Quadrature weights must be nonnegative"
            raise ValueError(msg)

    def __len__(self) -> int:
        """Number of nodes.

        Returns:
            the order of the rule
        """
        return len(self.nodes)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Apply the rule to a vectorized integrand.

        Args:
            f: function evaluated on all nodes at once

        Returns:
            the weighted sum of f over the nodes
        """
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=32)
def _hermite_e_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = hermite_e.hermegauss(order)
    weights = weights / weights.sum()
    # symmetric rules put the middle node at exactly zero
    if order % 2 == 1:
        nodes[order // 2] = 0.0
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Gauss-Hermite rule for expectations under the standard normal law.

    Args:
        order: number of nodes, between 1 and 512

    Returns:
        A rule exact for polynomials of degree up to 2 * order - 1

    Raises:
        ValueError: if order is out of range
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)):
        msg = f"Quadrature order must be an integer, got {order!r}"
        raise ValueError(msg)
    if not 1 <= order <= MAX_ORDER:
        msg = f"Quadrature order must be in [1, {MAX_ORDER}], got {order}"
        raise ValueError(msg)
    nodes, weights = _hermite_e_rule(int(order))
    return QuadratureRule(nodes, weights, "gauss-hermite")


def tensor_grid(rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Product rule for a pair of independent standard normals.

    Args:
        rule: the one dimensional rule

    Returns:
        Nodes for the first and second coordinate and the product weights,
        each shaped (order, order)
    """
    z1, z2 = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
    return z1, z2, np.outer(rule.weights, rule.weights)


@lru_cache(maxsize=8)
def _legendre_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gaussian_segments(
    breaks: np.ndarray | list[float] | tuple[float, ...],
    order: int = SEGMENT_ORDER,
    half_width: float = SEGMENT_HALF_WIDTH,
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E f(Z), Z standard normal, split at breakpoints.

    [-half_width, half_width] is cut at every integer and at each breakpoint,
    and each piece gets a Gauss-Legendre rule weighted by the normal density.
    Integrands that are smooth between breakpoints, such as piecewise linear
    scores with breakpoints at their kinks, are then integrated to rounding
    error.

    Args:
        breaks: breakpoints in standard units, shape (..., k); each row of a
            batch gets its own rule and values beyond half_width are clipped
        order: Gauss-Legendre nodes per piece
        half_width: truncation of the normal law, in standard deviations

    Returns:
        nodes and weights, each shaped (..., pieces * order)
    """
    breaks = np.atleast_1d(np.asarray(breaks, dtype=float))
    lead = breaks.shape[:-1]
    base = np.linspace(-half_width, half_width, int(2 * half_width) + 1)
    edges = np.concatenate(
        [
            np.broadcast_to(base, (*lead, len(base))),
            np.clip(breaks, -half_width, half_width),
        ],
        axis=-1,
    )
    edges = np.sort(edges, axis=-1)
    t, w = _legendre_rule(order)
    lo, hi = edges[..., :-1, None], edges[..., 1:, None]
    half = (hi - lo) / 2
    nodes = (lo + hi) / 2 + half * t
    weights = half * w * np.exp(-0.5 * nodes**2) / math.sqrt(2 * math.pi)
    return nodes.reshape((*lead, -1)), weights.reshape((*lead, -1))


def find_root_bracketed(
    f: ScalarFunction, lo: float, hi: float, tol: float = ROOT_TOL
) -> float:
    """Find a root of f inside a sign-changing bracket.

    Brent's method keeps the bisection fallback, so convergence is
    guaranteed for any continuous f.

    Args:
        f: scalar function
        lo: left end of the bracket
        hi: right end of the bracket
        tol: absolute tolerance on the root

    Returns:
        x with bracket width at most tol around a sign change

    Raises:
        BracketError: if f does not change sign on [lo, hi]
    """
    f_lo = f(lo)
    if f_lo == 0:
        return float(lo)
    f_hi = f(hi)
    if f_hi == 0:
        return float(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        msg = f"No sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}"
        raise BracketError(msg)
    return float(optimize.brentq(f, lo, hi, xtol=tol, maxiter=500))


def smallest_root_scan(
    f: ScalarFunction,
    lo: float,
    hi: float,
    grid: int = SCAN_GRID,
    tol: float = ROOT_TOL,
) -> float:
    """Locate the smallest root of f on [lo, hi].

    The interval is scanned on a uniform grid for the first sign change, which
    is then refined with :func:`find_root_bracketed`.

    Args:
        f: scalar function
        lo: left end of the scan
        hi: right end of the scan
        grid: number of grid points, at least 2
        tol: tolerance handed to the refinement

    Returns:
        the smallest root found

    Raises:
        ValueError: if grid is smaller than 2
        BracketError: if no sign change is found on the grid
    """
    if grid < 2:  # noqa: PLR2004
        msg = f"Scan grid needs at least 2 points, got {grid}"
        raise ValueError(msg)
    points = np.linspace(lo, hi, grid)
    prev_x = float(points[0])
    prev_f = f(prev_x)
    if prev_f == 0:
        return prev_x
    for x in points[1:]:
        x = float(x)  # noqa: PLW2901
        fx = f(x)
        if fx == 0:
            return x
        if np.sign(fx) != np.sign(prev_f):
            return find_root_bracketed(f, prev_x, x, tol)
        prev_x, prev_f = x, fx

    msg = f"No sign change found on [{lo}, {hi}] with {grid} grid points"
    raise BracketError(msg)


def smallest_positive_root(
    f: ScalarFunction,
    *,
    lo: float = 0.0,
    hi: float = SCAN_HI,
    grid: int = SCAN_GRID,
    tol: float = ROOT_TOL,
    hi_max: float = SCAN_HI_MAX,
) -> float:
    """Smallest root of f above lo, doubling the search window as needed.

    Windows [lo, hi], [hi, 2 hi], [2 hi, 4 hi], ... are scanned in order, so
    the first root found is the smallest one visible at grid resolution.

    Args:
        f: scalar function
        lo: left end of the first window
        hi: right end of the first window
        grid: grid points per window
        tol: root tolerance
        hi_max: give up once the window passes this value

    Returns:
        the smallest root

    Raises:
        BracketError: if no sign change is found before hi_max
    """
    left, right = lo, hi
    while True:
        try:
            return smallest_root_scan(f, left, right, grid, tol)
        except BracketError:
            if right > hi_max:
                msg = f"No root of f found on [{lo}, {right}]"
                raise BracketError(msg) from None
            left, right = right, 2 * right


def _checked_qr(
    X: np.ndarray, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:  # noqa: PLR2004
        msg = f"Expected a 2-D matrix, got shape {X.shape}"
        raise ValueError(msg)
    n, p = X.shape
    if n < p:
        msg = f"Need at least as many rows as columns, got {n} x {p}"
        raise ValueError(msg)
    q, r = linalg.qr(X, mode=mode)
    pivots = np.abs(np.diag(r[:p, :p]))
    if p > 0 and (pivots.max() == 0 or pivots.min() <= RANK_RCOND * pivots.max()):
        msg = f"Matrix of shape {X.shape} is rank deficient"
        raise RankError(msg)
    return q, r


def qr_orthocomplement(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of image(X), as rows.

    Args:
        X: n by p matrix with n > p and full column rank

    Returns:
        (n - p) by n matrix with orthonormal rows annihilating X

    Raises:
        ValueError: if n <= p
    """
    n, p = np.shape(X)
    if n <= p:
        msg = f"Orthogonal complement needs n > p, got {n} x {p}"
        raise ValueError(msg)
    q, _ = _checked_qr(X, "full")
    return np.ascontiguousarray(q[:, p:].T)


def least_squares_solve(X: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Least squares coefficients through a thin QR factorization.

    Args:
        X: n by p matrix of full column rank
        v: right hand side of length n

    Returns:
        argmin over c of ||v - X c||_2
    """
    q, r = _checked_qr(X, "economic")
    return linalg.solve_triangular(r, q.T @ np.asarray(v, dtype=float))


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (seed, stream_id).

    Equal pairs produce bit identical draws; distinct stream ids are spawned
    independently from the same seed sequence.
    """

    seed: int
    stream_id: int = 0
    _bits: int = field(default=64, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Check both identifiers fit in 64 bits.

        Raises:
            ValueError: if seed or stream id is negative or too large
        """
        for name, value in (("seed", self.seed), ("stream_id", self.stream_id)):
            if not 0 <= int(value) < 2**self._bits:
                msg = f"{name} must be a 64-bit unsigned integer, got {value}"
                raise ValueError(msg)

    def generator(self) -> np.random.Generator:
        """Build a fresh generator positioned at the start of the stream.

        Returns:
            a numpy Generator
        """
        sequence = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id),)
        )
        return np.random.default_rng(sequence)
