"""Experiment configuration: a flat key/value record with a canonical text form.

The canonical form is one ``key = value`` line per field, sorted by key, with
floats written by ``repr`` and sequences comma-separated. Its SHA-256 (with the
output directory left out) identifies a run.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields, replace

COMMANDS = (
    "dos", "sigma", "psi", "respond", "wegner", "minami", "chain",
    "green", "fermi-decay", "spacings", "mott",
)

WORKERS_ENV = "ACMOTT_WORKERS"

_UNHASHED = ("output_dir", "plot")


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists every offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ExperimentConfig:
    command: str = "dos"
    d: int = 1
    L: int = 64
    W: float = 4.0
    density: str = "uniform"
    master_seed: int = 0
    n_realizations: int = 100
    E_F: float = 0.0
    nu: float = 0.1
    nu_grid: tuple = ()
    nu_max: float = 0.5
    n_bins: int = 50
    energy_min: float | None = None
    energy_max: float | None = None
    n_energy_bins: int = 40
    intervals: tuple = ()
    variant: str = "commutator"
    eta: float = 1e-3
    s: float = 0.2
    max_distance: int | None = None
    ell: float | None = None
    L_factor: float = 205.0
    L_cap: int = 1024
    L_rule: str = "drop"
    observable: str = "psi"
    sigma_csv: str = ""
    field_csv: str = ""
    t_grid: tuple = ()
    workers: int = field(default_factory=_default_workers)
    output_dir: str = "out"
    plot: bool = False

    # -- canonical form -------------------------------------------------------

    def canonical(self, include_unhashed: bool = True) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if not include_unhashed and f.name in _UNHASHED:
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical(include_unhashed=False).encode()).hexdigest()

    def as_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError([f"line {lineno}: expected 'key = value'"])
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        problems, values = [], {}
        for key, value in raw.items():
            if key not in known:
                problems.append(f"{key}: unknown key")
                continue
            try:
                values[key] = _parse(key, value, known[key].type)
            except (TypeError, ValueError) as exc:
                problems.append(f"{key}: cannot parse {value!r} ({exc})")
        if problems:
            raise ConfigError(problems)
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def with_(self, **changes) -> "ExperimentConfig":
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    # -- validation -----------------------------------------------------------

    def validate(self) -> None:
        p = []
        if self.command not in COMMANDS:
            p.append(f"command: unknown subcommand {self.command!r}")
        if self.d < 1:
            p.append("d: must be >= 1")
        if self.L < 3:
            p.append("L: must be >= 3")
        if not self.W > 0:
            p.append("W: must be > 0")
        if self.density != "uniform":
            p.append("density: only 'uniform' is supported")
        if not 0 <= self.master_seed < 2**64:
            p.append("master_seed: must be an unsigned 64-bit integer")
        if self.n_realizations < 1 and self.command != "respond":
            p.append("n_realizations: must be >= 1")
        if not self.nu > 0:
            p.append("nu: must be > 0")
        if any(not 0 < v < 1 for v in self.nu_grid):
            p.append("nu_grid: every frequency must lie in (0, 1)")
        if not self.nu_max > 0:
            p.append("nu_max: must be > 0")
        if self.n_bins < 1:
            p.append("n_bins: must be >= 1")
        if self.n_energy_bins < 1:
            p.append("n_energy_bins: must be >= 1")
        if (self.energy_min is not None and self.energy_max is not None
                and not self.energy_min < self.energy_max):
            p.append("energy_min/energy_max: need energy_min < energy_max")
        for lo, hi in self.intervals:
            if not lo < hi:
                p.append(f"intervals: empty interval ({lo}, {hi}]")
        if self.variant not in ("commutator", "current"):
            p.append("variant: must be 'commutator' or 'current'")
        if self.eta == 0:
            p.append("eta: must be nonzero")
        if not 0 < self.s < 1:
            p.append("s: must lie in (0, 1)")
        if self.max_distance is not None and self.max_distance < 3:
            p.append("max_distance: must be >= 3")
        if self.ell is not None and not self.ell > 0:
            p.append("ell: must be > 0")
        if not self.L_factor > 0:
            p.append("L_factor: must be > 0")
        if self.L_cap < 3:
            p.append("L_cap: must be >= 3")
        if self.L_rule not in ("drop", "clamp"):
            p.append("L_rule: must be 'drop' or 'clamp'")
        if self.observable not in ("psi", "sigma_bar"):
            p.append("observable: must be 'psi' or 'sigma_bar'")
        if self.workers < 1:
            p.append("workers: must be >= 1")
        if self.command == "mott":
            if not self.nu_grid:
                p.append("nu_grid: required for mott")
            if self.ell is None:
                p.append("ell: required for mott (estimate it with the green subcommand)")
        if self.command == "respond":
            if not self.sigma_csv:
                p.append("sigma_csv: required for respond")
            if not self.field_csv:
                p.append("field_csv: required for respond")
            if not self.t_grid:
                p.append("t_grid: required for respond")
        if p:
            raise ConfigError(p)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{lo!r}:{hi!r}" for lo, hi in value)
        return ",".join(repr(v) for v in value)
    return str(value)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def _parse(key: str, value, annotation: str):
    if not isinstance(value, str):
        if key == "intervals":
            return tuple((float(lo), float(hi)) for lo, hi in value)
        if isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        return value
    text = value.strip()
    if key == "intervals":
        if not text:
            return ()
        out = []
        for item in text.split(","):
            lo, hi = item.split(":")
            out.append((float(lo), float(hi)))
        return tuple(out)
    if annotation == "tuple":
        return tuple(float(v) for v in text.split(",") if v.strip())
    if "None" in annotation and text.lower() in ("none", ""):
        return None
    if annotation.startswith("bool"):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError("expected true/false")
    if annotation.startswith("int"):
        return int(text)
    if annotation.startswith("float"):
        return float(text)
    return text
