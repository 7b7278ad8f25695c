"""Run configuration files.

A configuration is a flat UTF-8 text file of ``key = value`` lines.  ``#``
starts a comment, blank lines are ignored and an empty value means "unset"
for optional entries.  Unknown or repeated keys are errors, so a misspelled
hyperparameter can never fall back to its default silently.

Relative paths are resolved against the current working directory.

Example
-------
::

    # desk experiment
    n = 64
    m = 32
    grid_k = 5
    noise = gaussian
    snr = 40
    lam = 0.001
    out = runs/desk
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .simulate import NoiseSpec
from .solver import SolverConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "serialize_config", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


_SOLVER_FIELDS = tuple(f.name for f in fields(SolverConfig))


@dataclass
class RunConfig:
    # solver hyperparameters (mirrors SolverConfig)
    fidelity: str = "agm"
    regularizer: str = "aitv"
    alpha: float = 0.8
    lam: float = 0.001
    beta1: float = 0.25
    beta2: float = 0.5
    batch_size: int = 5
    gamma_omega: float = 0.025
    gamma_z: float = 0.1
    estimator: str = "pie"
    blind: bool = False
    epochs: int = 200
    delta_z: float = 0.1
    delta_omega: float = 1e-3
    seed: int = 0
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    zeta: float = 1.0
    u_init: str = "zero"
    kkt_every: int = 10

    # simulated experiment
    n: int = 64
    m: int = 32
    grid_k: int = 5
    probe: str = "disk"
    probe_radius: Optional[float] = None
    probe_width: Optional[float] = None
    probe_curvature: float = 0.0
    noise: str = "gaussian"
    snr: float = 40.0
    noise_zeta: float = 1.0
    mag_file: Optional[str] = None
    phase_file: Optional[str] = None
    mag_min: float = 0.3
    mag_max: float = 1.0
    phase_min: float = -math.pi / 2
    phase_max: float = math.pi / 2
    probe_perturbation: float = 0.05

    # data locations; unset entries default to files inside `out`
    measurements: Optional[str] = None
    scans: Optional[str] = None
    probe_file: Optional[str] = None
    probe_init: Optional[str] = None
    ground_truth: Optional[str] = None
    recon: Optional[str] = None
    out: str = "run"

    # run control
    checkpoint_every: int = 0
    search_radius: int = 5
    record_timing: bool = True
    resume: Optional[str] = None

    def __post_init__(self):
        try:
            self.solver_config()
            self.noise_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if min(self.n, self.m, self.grid_k) < 1:
            raise ConfigError("n, m and grid_k must be positive")
        if self.m > self.n:
            raise ConfigError(f"probe size m={self.m} exceeds object size n={self.n}")
        if self.probe not in ("flat", "disk", "gaussian"):
            raise ConfigError(f"probe must be flat, disk or gaussian, got {self.probe!r}")
        if not (self.mag_min < self.mag_max and self.phase_min < self.phase_max):
            raise ConfigError("magnitude and phase ranges must be increasing")
        if (self.mag_file is None) != (self.phase_file is None):
            raise ConfigError("mag_file and phase_file must be given together")
        if self.probe_perturbation < 0:
            raise ConfigError("probe_perturbation must be nonnegative")
        if self.checkpoint_every < 0 or self.search_radius < 0:
            raise ConfigError("checkpoint_every and search_radius must be nonnegative")
        if not self.out:
            raise ConfigError("out must name a directory")

    def solver_config(self):
        return SolverConfig(**{k: getattr(self, k) for k in _SOLVER_FIELDS})

    def noise_spec(self):
        return NoiseSpec(self.noise, self.snr, self.noise_zeta)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def path(self, key, default_name):
        """The configured path for `key`, or `default_name` inside the output directory."""
        value = getattr(self, key)
        return Path(value) if value else Path(self.out) / default_name

    def check_inputs(self, command):
        """Raise ConfigError unless the files `command` reads exist and `out` is writable."""
        needed = {
            "simulate": ["mag_file", "phase_file", "probe_file"],
            "reconstruct": ["measurements", "scans", "probe_file", "probe_init", "ground_truth", "resume"],
            "evaluate": ["recon", "ground_truth"],
            "pipeline": ["mag_file", "phase_file", "probe_file", "probe_init", "resume"],
        }[command]
        for key in needed:
            value = getattr(self, key)
            if value and not Path(value).is_file():
                raise ConfigError(f"{key}: no such file {value!r}")
        if command == "reconstruct":
            for key, name in (("measurements", "measurements.pme"), ("scans", "scans.txt")):
                if not self.path(key, name).is_file():
                    raise ConfigError(f"{key}: no such file {str(self.path(key, name))!r}")
        out = Path(self.out)
        probe = out
        while not probe.exists():
            probe = probe.parent
        if not probe.is_dir() or not os.access(probe, os.W_OK):
            raise ConfigError(f"output directory {self.out!r} is not writable")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key, text, lineno):
    kind = _FIELD_TYPES[key]
    optional = kind.startswith("Optional[") if isinstance(kind, str) else False
    base = kind[len("Optional["):-1] if optional else kind
    if text == "":
        if optional:
            return None
        raise ConfigError(f"line {lineno}: {key} needs a value")
    try:
        if base == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {text!r}")
            return low == "true"
        if base == "int":
            return int(text)
        if base == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError(f"non-finite value {text!r}")
            return v
        return text
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: {key}: {exc}") from None


def parse_config(text):
    """Parse configuration text into a RunConfig."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, value, lineno)
    return RunConfig(**values)


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(config):
    """Every field as ``key = value``, in declaration order."""
    return "".join(f"{f.name} = {_format_value(getattr(config, f.name))}\n" for f in fields(RunConfig))


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
