"""Collect common fixtures."""

import numpy as np
import pytest
from ampmest.instance import ProblemInstance, generate
from ampmest.loss import HuberLoss, SquaredLoss
from ampmest.noise import contaminated_normal, parse_noise, standard_normal
from ampmest.numerics import gauss_hermite


@pytest.fixture()
def rule():
    """Default Gauss-Hermite rule."""
    return gauss_hermite()


@pytest.fixture()
def huber():
    """Huber loss of the running example."""
    return HuberLoss(3.0)


@pytest.fixture()
def squared():
    """Least squares."""
    return SquaredLoss()


@pytest.fixture()
def normal():
    """N(0, 1) noise."""
    return standard_normal()


@pytest.fixture()
def contaminated():
    """0.95 N(0, 1) + 0.05 atom at 10."""
    return contaminated_normal(0.05, 10.0)


@pytest.fixture()
def smooth_models():
    """Noise laws with finite Fisher information."""
    return [
        standard_normal(),
        parse_noise("normal:0,2"),
        parse_noise("mix:0.9,0,1;0.1,0,3"),
        parse_noise("mix:0.5,-1,1;0.5,1,1"),
    ]


@pytest.fixture()
def make_instance():
    """Factory for small random instances."""

    def make(n=100, p=20, noise="normal:0,1", seed=0, theta0_norm=1.0):
        return generate(n, p, parse_noise(noise), seed, theta0_norm)

    return make


@pytest.fixture()
def hand_instance():
    """Tiny instance with known structure, X = (1, 0)^T."""
    X = np.array([[1.0], [0.0]])
    return ProblemInstance.from_design(X, np.array([2.0]), np.array([0.5, -1.5]))


@pytest.fixture()
def write_config(tmp_path):
    """Write a config file and return its path."""

    def write(text, name="experiment.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
