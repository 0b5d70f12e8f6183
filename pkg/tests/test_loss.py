"""Test losses, proximal maps and effective scores."""

import math

import numpy as np
import pytest
from ampmest.loss import (
    HuberLoss,
    HuberRidgeLoss,
    LogCoshLoss,
    LossFunction,
    SquaredLoss,
    parse_loss,
)

LOSSES = [
    SquaredLoss(),
    HuberLoss(3.0),
    HuberLoss(1.345),
    HuberRidgeLoss(1.0, 0.5),
    LogCoshLoss(1.0),
    LogCoshLoss(0.3),
]
GRID = np.linspace(-20, 20, 401)


def test_squared_examples(squared):
    """Closed forms of the squared loss."""
    assert squared.prox(2.0, 1.0) == 1.0
    assert squared.eta_residual(2.0, 1.0) == 1.0
    assert squared.psi_eff(2.0, 1.0) == 1.0
    np.testing.assert_allclose(squared.psi_eff_prime(GRID, 0.25), 0.2)


def test_huber_examples(huber):
    """Interior and saturated branches."""
    assert huber.prox(1.0, 0.5) == pytest.approx(1 / 1.5)
    assert huber.psi_eff(1.0, 0.5) == pytest.approx(0.5 / 1.5)
    assert huber.psi_eff(100.0, 0.5) == pytest.approx(1.5)
    assert huber.psi_eff(-100.0, 0.5) == pytest.approx(-1.5)
    assert huber.eta_residual(100.0, 0.5) == pytest.approx(98.5)
    assert huber.psi_eff_prime(1.0, 0.5) == pytest.approx(0.5 / 1.5)
    assert huber.psi_eff_prime(100.0, 0.5) == 0.0


def test_huber_psi_eff_identity(huber):
    """Psi(z; b) = b psi(z / (1 + b)) on the interior."""
    b = 0.7
    z = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(huber.psi_eff(z, b), b * huber.psi(z / (1 + b)))


def test_scalar_and_array_shapes(huber):
    """Scalars map to floats, arrays keep their shape."""
    assert isinstance(huber.prox(1.0, 0.5), float)
    assert isinstance(huber.psi_prime(1.0), float)
    values = huber.psi_eff(np.ones((2, 3)), 0.5)
    assert values.shape == (2, 3)


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
def test_psi_matches_finite_difference(loss):
    """psi is the derivative of rho away from kinks."""
    h = 1e-6
    z = np.linspace(-7.9, 7.9, 80)
    numeric = (np.asarray(loss.rho(z + h)) - np.asarray(loss.rho(z - h))) / (2 * h)
    np.testing.assert_allclose(loss.psi(z), numeric, atol=1e-5)


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
@pytest.mark.parametrize("b", [0.0, 0.1, 1.0, 7.5])
def test_prox_stationarity(loss, b):
    """x + b psi(x) = z at x = Prox(z; b)."""
    x = np.asarray(loss.prox(GRID, b))
    np.testing.assert_allclose(
        x + b * np.asarray(loss.psi(x)), GRID, atol=1e-9 * (1 + b)
    )
    np.testing.assert_allclose(
        loss.psi_eff(GRID, b), b * np.asarray(loss.psi(x)), atol=1e-9 * (1 + b)
    )


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
def test_prox_monotone_contraction(loss):
    """Prox is nondecreasing and 1-Lipschitz."""
    x = np.asarray(loss.prox(GRID, 0.8))
    steps = np.diff(x)
    assert np.all(steps >= -1e-12)
    assert np.all(steps <= np.diff(GRID) + 1e-12)


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
def test_psi_eff_prime_range(loss):
    """Slope of the effective score lies in [0, 1)."""
    for b in (0.0, 0.3, 4.0, 1e6):
        slope = np.asarray(loss.psi_eff_prime(GRID, b))
        assert np.all(slope >= 0)
        assert np.all(slope < 1)
    np.testing.assert_array_equal(loss.psi_eff(GRID, 0.0), 0.0)


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
def test_psi_eff_prime_finite_difference(loss):
    """Analytic slope agrees with differences of Psi off the kinks."""
    h, b = 1e-5, 0.6
    z = np.linspace(-9.93, 9.93, 60)
    numeric = (
        np.asarray(loss.psi_eff(z + h, b)) - np.asarray(loss.psi_eff(z - h, b))
    ) / (2 * h)
    np.testing.assert_allclose(loss.psi_eff_prime(z, b), numeric, atol=2e-5)


@pytest.mark.parametrize("loss", LOSSES, ids=repr)
def test_psi_eff_prime_random_pairs(loss):
    """Slope matches central differences at random (z, b) off the kinks."""
    rng = np.random.default_rng(2024)
    h = 1e-4
    z = rng.uniform(-15.0, 15.0, 1000)
    b = rng.uniform(0.0, 5.0, 1000)
    checked = 0
    for point, scale in zip(z, b):
        if any(abs(point - kink) <= 10 * h for kink in loss.kinks(scale)):
            continue
        upper = float(loss.psi_eff(point + h, scale))
        lower = float(loss.psi_eff(point - h, scale))
        numeric = (upper - lower) / (2 * h)
        assert float(loss.psi_eff_prime(point, scale)) == pytest.approx(
            numeric, abs=1e-6
        )
        checked += 1
    assert checked >= 990


def test_kinks():
    """Ends of the Huber band move out with b; smooth losses have none."""
    assert HuberLoss(3.0).kinks(0.0) == (-3.0, 3.0)
    assert HuberLoss(3.0).kinks(0.5) == (-4.5, 4.5)
    assert HuberRidgeLoss(1.0, 0.5).kinks(2.0) == (-4.0, 4.0)
    assert SquaredLoss().kinks(1.0) == ()
    assert LogCoshLoss(0.3).kinks(1.0) == ()
    with pytest.raises(ValueError, match="nonnegative"):
        HuberLoss(3.0).kinks(-1.0)
    huber, b = HuberLoss(3.0), 0.7
    for kink in huber.kinks(b):
        below = float(huber.psi_eff_prime(kink - 1e-9, b))
        above = float(huber.psi_eff_prime(kink + 1e-9, b))
        assert below != above


def test_newton_prox_matches_closed_form():
    """The generic Newton solver reproduces the Huber closed form."""
    huber = HuberLoss(2.0)
    newton = LossFunction.prox(huber, GRID, 1.3)
    np.testing.assert_allclose(newton, huber.prox(GRID, 1.3), atol=1e-10)


def test_logcosh_extremes():
    """Large residuals do not overflow."""
    loss = LogCoshLoss(1.0)
    assert loss.rho(1000.0) == pytest.approx(1000.0 - math.log(2.0))
    assert loss.prox(1e6, 2.0) == pytest.approx(1e6 - 2.0)
    assert loss.psi_prime(1000.0) == 0.0


@pytest.mark.parametrize("b", [-0.1, math.nan, math.inf])
def test_invalid_b(huber, b):
    """b must be finite and nonnegative."""
    with pytest.raises(ValueError, match="nonnegative"):
        huber.prox(1.0, b)
    with pytest.raises(ValueError, match="nonnegative"):
        huber.psi_eff_prime(1.0, b)


def test_strong_convexity_flags():
    """Only losses with curvature bounded below are strongly convex."""
    assert SquaredLoss().strongly_convex
    assert HuberRidgeLoss(1.0, 0.1).strongly_convex
    assert not HuberLoss(1.0).strongly_convex
    assert not LogCoshLoss().strongly_convex
    assert HuberRidgeLoss(1.0, 0.1).psi_prime_sup == pytest.approx(1.1)


@pytest.mark.parametrize(
    ("spec", "expected"),
    [
        ("squared", SquaredLoss()),
        ("huber:3", HuberLoss(3.0)),
        (" HUBER:1.345 ", HuberLoss(1.345)),
        ("logcosh:0.5", LogCoshLoss(0.5)),
        ("huber-ridge:1,0.2", HuberRidgeLoss(1.0, 0.2)),
    ],
)
def test_parse_loss(spec, expected):
    """Specs build equal losses and survive a spec round trip."""
    loss = parse_loss(spec)
    assert loss == expected
    assert parse_loss(loss.spec) == loss
    assert hash(loss) == hash(expected)
    assert repr(loss).startswith(type(expected).__name__)


@pytest.mark.parametrize(
    ("spec", "message"),
    [
        ("cauchy:1", "Unknown loss"),
        ("huber", "expects 1 parameter"),
        ("huber:1,2", "expects 1 parameter"),
        ("squared:1", "expects 0 parameter"),
        ("huber:abc", "Unable to parse parameters"),
        ("huber:-1", "must be positive"),
        ("huber-ridge:1,0", "positive parameters"),
        ("logcosh:0", "must be positive"),
        ("9lives", "Unable to parse loss"),
    ],
)
def test_parse_loss_errors(spec, message):
    """Malformed specs raise ValueError."""
    with pytest.raises(ValueError, match=message):
        parse_loss(spec)
