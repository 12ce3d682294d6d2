"""Experiment configuration: a YAML file with nested sections, overridable per key.

Layout::

    model:    {theta, gamma}
    probes:   {x: [...], t: [...]}
    environment: {z: null | {dt, values: [...]}}
    grid:     {dt, dy, eps, s_max, T_max, K}
    run:      {n_paths, master_seed, workers, output_dir, plots}
    convergence: {ladder_dts: [...], ladder_paths, ladder_x, ladder_t, identity_paths}

``dy`` and ``eps`` may be null; they then follow ``dt`` (``eps = 4 sqrt(dt)``,
``dy = eps / 4``). ``K`` null means no ceiling.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .stats import MIN_SAMPLES, InsufficientSamplesError

OUTPUT_DIR_ENV = "RAYKNIGHT_OUTPUT_DIR"
WORKERS_ENV = "RAYKNIGHT_WORKERS"


_EXECUTION_ONLY = ("workers", "output_dir", "plots")


class ConfigError(ValueError):
    """Invalid configuration; raised before any simulation starts."""


@dataclass
class ModelSection:
    theta: float = 1.0
    gamma: float = 1.0


@dataclass
class ProbeSection:
    x: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    t: list = field(default_factory=lambda: [0.25, 0.5, 1.0])


@dataclass
class EnvironmentSection:
    z: dict | None = None


@dataclass
class GridSection:
    dt: float = 2.0 ** -14
    dy: float | None = None
    eps: float | None = None
    s_max: float = 1e3
    T_max: float = 60.0
    K: float | None = None


@dataclass
class RunSection:
    n_paths: int = 10_000
    master_seed: int = 20240601
    workers: int = 1
    output_dir: str = "rayknight_out"
    plots: bool = False


@dataclass
class ConvergenceSection:
    ladder_dts: list = field(default_factory=lambda: [2.0 ** -14, 2.0 ** -15, 2.0 ** -16])
    ladder_paths: int = 10_000
    ladder_x: float = 1.0
    ladder_t: float = 0.5
    identity_paths: int = 100


_SECTIONS = {
    "model": ModelSection,
    "probes": ProbeSection,
    "environment": EnvironmentSection,
    "grid": GridSection,
    "run": RunSection,
    "convergence": ConvergenceSection,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    probes: ProbeSection = field(default_factory=ProbeSection)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    grid: GridSection = field(default_factory=GridSection)
    run: RunSection = field(default_factory=RunSection)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)

    # derived resolution

    @property
    def eps(self) -> float:
        return self.grid.eps if self.grid.eps is not None else 4.0 * math.sqrt(self.grid.dt)

    @property
    def dy(self) -> float:
        return self.grid.dy if self.grid.dy is not None else self.eps / 4.0

    # serialization

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = data or {}
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        for name, sec in _SECTIONS.items():
            body = data.get(name) or {}
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            known = {f.name for f in fields(sec)}
            bad = set(body) - known
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kw[name] = sec(**body)
        return cls(**kw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"config is not valid YAML: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        return cls.from_yaml(Path(path).read_text())

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_yaml())

    def config_hash(self) -> str:
        """Hash of the fields that affect results (not workers, output_dir, plots)."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k not in _EXECUTION_ONLY}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # overrides

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply flat ``key -> value`` overrides; keys are unique across sections."""
        out = ExperimentConfig.from_dict(self.to_dict())
        for key, value in overrides.items():
            if value is None:
                continue
            sec = section_of(key)
            setattr(out, sec, replace(getattr(out, sec), **{key: value}))
        return out

    def with_env(self, environ=None) -> "ExperimentConfig":
        env = os.environ if environ is None else environ
        over = {}
        if env.get(OUTPUT_DIR_ENV):
            over["output_dir"] = env[OUTPUT_DIR_ENV]
        if env.get(WORKERS_ENV):
            try:
                over["workers"] = int(env[WORKERS_ENV])
            except ValueError as e:
                raise ConfigError(f"{WORKERS_ENV} must be an integer") from e
        return self.with_overrides(over)

    # validation

    def validate(self) -> "ExperimentConfig":
        m, g, r, c = self.model, self.grid, self.run, self.convergence
        for name, v in (("theta", m.theta), ("gamma", m.gamma)):
            if not _finite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        xs = self.probes.x
        if not xs or any(not _finite(x) or x <= 0 for x in xs):
            raise ConfigError(f"probe x values must be positive, got {xs}")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError("probe x values must be strictly increasing")
        ts = self.probes.t
        if not ts or any(not _finite(t) or t < 0 for t in ts):
            raise ConfigError(f"probe t levels must be >= 0, got {ts}")
        if not _finite(g.dt) or g.dt <= 0:
            raise ConfigError(f"dt must be positive, got {g.dt}")
        if not _finite(self.eps) or self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not _finite(self.dy) or self.dy <= 0 or self.dy > self.eps:
            raise ConfigError(f"dy must be in (0, eps], got dy={self.dy}, eps={self.eps}")
        if not g.s_max > 0 or not g.T_max > 0:
            raise ConfigError("s_max and T_max must be positive")
        if max(ts) > g.T_max:
            raise ConfigError("probe times exceed the Feller horizon T_max")
        if g.K is not None:
            if not g.K > 0:
                raise ConfigError(f"K must be positive, got {g.K}")
            n = g.K / self.dy
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"K={g.K} must be a multiple of dy={self.dy}")
        if int(r.n_paths) != r.n_paths:
            raise ConfigError("n_paths must be an integer")
        if r.n_paths < MIN_SAMPLES:
            raise InsufficientSamplesError(
                f"insufficient samples: n_paths={r.n_paths} < {MIN_SAMPLES}")
        if r.workers < 1:
            raise ConfigError("workers must be >= 1")
        if r.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")
        z = self.environment.z
        if z is not None:
            if not isinstance(z, dict) or set(z) != {"dt", "values"}:
                raise ConfigError("environment z must be null or a table {dt, values}")
            if not z["dt"] > 0 or len(z["values"]) < 2 or min(z["values"]) < 0:
                raise ConfigError("environment table needs dt > 0 and >= 2 values >= 0")
        validate_ladder(c.ladder_dts)
        if c.ladder_paths < MIN_SAMPLES or c.identity_paths < 1:
            raise InsufficientSamplesError("convergence study sample sizes too small")
        return self


def validate_ladder(dts) -> list:
    if len(dts) < 3:
        raise ConfigError("a convergence ladder needs at least 3 resolutions")
    if any(not _finite(d) or d <= 0 for d in dts):
        raise ConfigError("ladder dts must be positive")
    if len(set(dts)) != len(dts):
        raise ConfigError("ladder dts must be distinct")
    return sorted(dts, reverse=True)


def _finite(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def section_of(key: str) -> str:
    hits = [name for name, sec in _SECTIONS.items() if key in {f.name for f in fields(sec)}]
    if len(hits) != 1:
        raise ConfigError(f"unknown or ambiguous config key {key!r}")
    return hits[0]


def flat_keys() -> dict:
    """``key -> (section, default)`` for every overridable scalar or list key."""
    out = {}
    for name, sec in _SECTIONS.items():
        inst = sec()
        for f in fields(sec):
            out[f.name] = (name, getattr(inst, f.name))
    return out
