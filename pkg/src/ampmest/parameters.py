"""Experiment parameter collection."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .loss import LossFunction, parse_loss
from .noise import NoiseModel, parse_noise

#: Regex for one ``key = value`` line of a config file
CONFIG_LINE_RE = re.compile(r"(?P<key>[a-z][a-z0-9_]*)\s*=\s*(?P<value>.*?)")

MODES = ("empirical", "analytic")

#: fields read from config files and their converters
_CONVERTERS = {
    "n": int,
    "p": int,
    "loss": str,
    "noise": str,
    "theta0_norm": float,
    "theta0": lambda v: tuple(float(x) for x in v.split(",") if x.strip()),
    "replications": int,
    "seeds": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
    "base_seed": int,
    "mode": str,
    "amp_iters": int,
    "amp_tol": float,
    "newton_tol": float,
    "newton_iters": int,
    "se_tol": float,
    "output": str,
    "workers": int,
}


@dataclass
class ExperimentConfig:
    """Collection of parameters from the command line or a config file.

    ``theta0_norm`` is the radius of theta_0 per sqrt(p), so the running
    example's ||theta_0|| = 6 sqrt(p) is ``theta0_norm = 6``.
    """

    n: int = 1000
    p: int = 200
    loss: str = "huber:3.0"
    noise: str = "cn:0.05,10"
    theta0_norm: float = 6.0
    theta0: tuple[float, ...] = ()
    replications: int = 10
    seeds: tuple[int, ...] = ()
    base_seed: int = 0
    mode: str = "empirical"
    amp_iters: int = 20
    amp_tol: float = 1e-8
    newton_tol: float = 1e-10
    newton_iters: int = 100
    se_tol: float = 1e-10
    output: str = ""
    workers: int = 1
    debug: bool = False
    loss_function: LossFunction = field(init=False, repr=False, compare=False)
    noise_model: NoiseModel = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate sizes and parse the loss and noise specifications.

        Raises:
            ValueError: on inconsistent sizes, unknown mode or bad specs
        """
        if not self.n > self.p >= 1:
            msg = f"Need n > p >= 1, got n={self.n}, p={self.p}"
            raise ValueError(msg)
        if self.seeds:
            self.seeds = tuple(int(s) for s in self.seeds)
            self.replications = len(self.seeds)
        if self.replications < 1:
            msg = f"Need at least one replication, got {self.replications}"
            raise ValueError(msg)
        if self.mode not in MODES:
            msg = f"Unknown mode {self.mode!r}, valid modes are {', '.join(MODES)}"
            raise ValueError(msg)
        if self.theta0_norm < 0:
            msg = f"theta0_norm must be nonnegative, got {self.theta0_norm}"
            raise ValueError(msg)
        if self.theta0 and len(self.theta0) != self.p:
            msg = f"Explicit theta0 has length {len(self.theta0)}, expected {self.p}"
            raise ValueError(msg)
        if self.workers < 1:
            msg = f"workers must be positive, got {self.workers}"
            raise ValueError(msg)
        if self.amp_iters < 1:
            msg = f"amp_iters must be positive, got {self.amp_iters}"
            raise ValueError(msg)
        self.theta0 = tuple(float(v) for v in self.theta0)
        self.loss_function = parse_loss(self.loss)
        self.noise_model = parse_noise(self.noise)

    @property
    def delta(self) -> float:
        """Sampling ratio n / p."""
        return self.n / self.p

    @property
    def seed_list(self) -> list[int]:
        """Seeds of all replications, in order.

        Returns:
            the explicit seeds or base_seed, base_seed + 1, ...
        """
        if self.seeds:
            return list(self.seeds)
        return [self.base_seed + i for i in range(self.replications)]

    def replace(self, **changes: object) -> ExperimentConfig:
        """Copy with some fields changed, validating again.

        Args:
            changes: new field values

        Returns:
            the new config
        """
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]


def parse_config(text: str) -> dict[str, object]:
    """Parse the flat ``key = value`` config format.

    Args:
        text: config file contents

    Returns:
        mapping from field names to converted values

    Raises:
        ValueError: if a line is malformed, a key unknown or a value invalid
    """
    values: dict[str, object] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = CONFIG_LINE_RE.fullmatch(line)
        if not match:
            msg = f"Unable to parse config line {number}: {raw!r}"
            raise ValueError(msg)
        key, value = match.group("key"), match.group("value").strip()
        if key not in _CONVERTERS:
            msg = f"Unknown config key {key!r} on line {number}"
            raise ValueError(msg)
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError:
            msg = f"Invalid value {value!r} for {key} on line {number}"
            raise ValueError(msg) from None
    return values


def load_config(path: str | Path, **overrides: object) -> ExperimentConfig:
    """Read an experiment config file.

    Args:
        path: file to read
        overrides: values taking precedence over the file, None entries ignored

    Returns:
        the validated config
    """
    values = parse_config(Path(path).read_text(encoding="utf-8"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)  # type: ignore[arg-type]
