"""Feller's branching diffusion with logistic growth and its coupled field.

``Z`` solves ``dZ = Z (theta - gamma (Z + 2 z(t))) dt + 2 sqrt(Z) dW`` where
``z`` is an environment path (``z = 0`` gives the plain logistic Feller
diffusion). Stacking such solutions on top of each other builds the field
``x -> Z^x`` that is non-decreasing in the ancestral mass ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as kern
from .drifts import integrate_drift_g, jit_drift
from .sde_core import RngStream, TimeGrid


class NotExtinctError(RuntimeError):
    """The path is still alive at the grid horizon; extend the grid."""


@dataclass(frozen=True)
class ModelParams:
    """Growth rate ``theta`` and competition rate ``gamma``.

    ``general_drift`` is an optional exploration drift ``g(level, local_time)``
    replacing ``theta/2 - gamma * local_time``; the matching Feller drift is
    ``f(t, l) = 2 int_0^l g(t, y) dy``.
    """

    theta: float
    gamma: float
    general_drift: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("theta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def is_driftless(self, z=None) -> bool:
        return self.general_drift is None and self.theta == 0 and self.gamma == 0

    def feller_drift(self) -> Callable:
        """Compiled ``f(t, l)`` for :func:`simulate_feller_general`."""
        if self.general_drift is not None:
            return integrate_drift_g(self.general_drift)
        return jit_drift(_logistic(self.theta, self.gamma))


def _logistic(theta, gamma):
    def f(t, l):
        return theta * l - gamma * l * l
    return f


@dataclass
class EnvironmentPath:
    """Non-negative path sampled on a uniform grid, linear in between, 0 past the end."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size != self.grid.n_steps + 1:
            raise ValueError("environment needs one value per grid node")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("environment values must be finite and >= 0")

    @classmethod
    def zero(cls, grid: TimeGrid) -> "EnvironmentPath":
        return cls(np.zeros(grid.n_steps + 1), grid)

    def __call__(self, t):
        return np.interp(t, self.grid.times, self.values, right=0.0)


@dataclass
class FellerPath:
    values: np.ndarray
    grid: TimeGrid
    x: float
    extinct: bool
    extinction_time: float | None

    def at(self, t: float) -> float:
        return float(self.values[self.grid.index_of(t)])


@dataclass
class FellerField:
    x_grid: np.ndarray
    paths: list[FellerPath]

    def matrix(self) -> np.ndarray:
        return np.vstack([p.values for p in self.paths])


def _env(z: EnvironmentPath | None):
    if z is None:
        return np.zeros(0), 1.0
    return z.values, float(z.grid.dt)


def _path_from_run(x, grid, ext, path) -> FellerPath:
    if ext >= 0:
        path[ext:] = 0.0
    extinct = ext >= 0
    return FellerPath(path, grid, float(x), extinct, ext * grid.dt if extinct else None)


def simulate_feller(params: ModelParams, x: float, z: EnvironmentPath | None,
                    grid: TimeGrid, stream: RngStream) -> FellerPath:
    """Euler full-truncation path of the logistic Feller SDE in environment ``z``."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if params.general_drift is not None:
        if z is not None:
            raise ValueError("a general drift already encodes its environment")
        return simulate_feller_general(params.feller_drift(), x, grid, stream)
    zv, zs = _env(z)
    ext, _, _, path = kern.feller_run(stream.generator(), float(x), float(params.theta),
                                      float(params.gamma), zv, zs, grid.dt, grid.n_steps,
                                      np.zeros(0, np.int64), True)
    return _path_from_run(x, grid, ext, path)


def simulate_feller_general(f: Callable, x: float, grid: TimeGrid,
                            stream: RngStream) -> FellerPath:
    """Path of ``dZ = f(t, Z) dt + 2 sqrt(Z) dW``; ``f`` must satisfy ``f(t, 0) >= 0``."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    ext, _, _, path = kern.feller_general_run(stream.generator(), float(x), jit_drift(f),
                                              grid.dt, grid.n_steps, np.zeros(0, np.int64),
                                              True)
    return _path_from_run(x, grid, ext, path)


def _check_x_grid(x_grid) -> np.ndarray:
    xg = np.asarray(x_grid, dtype=float)
    if xg.ndim != 1 or xg.size == 0:
        raise ValueError("x_grid must be a non-empty 1-d sequence")
    if xg[0] <= 0 or np.any(np.diff(xg) <= 0):
        raise ValueError("x_grid must be positive and strictly increasing")
    return xg


def simulate_field(params: ModelParams, x_grid: Sequence[float], grid: TimeGrid,
                   streams: Sequence[RngStream]) -> FellerField:
    """Coupled field ``Z^{x_1} <= Z^{x_2} <= ...`` built left to right.

    ``Z^{x_{k+1}} = Z^{x_k} + V`` with ``V`` the solution started at
    ``x_{k+1} - x_k`` in environment ``Z^{x_k}`` and driven by ``streams[k+1]``.
    """
    if params.general_drift is not None:
        raise ValueError("the coupled field is defined for the logistic drift only")
    xg = _check_x_grid(x_grid)
    if len(streams) < xg.size:
        raise ValueError("need one stream per x level")
    paths: list[FellerPath] = []
    env = EnvironmentPath.zero(grid)
    prev = 0.0
    for k, x in enumerate(xg):
        inc = simulate_feller(params, x - prev, env if k else None, grid, streams[k])
        vals = env.values + inc.values
        zero = np.flatnonzero(vals == 0)
        ext = int(zero[0]) if zero.size else -1
        paths.append(FellerPath(vals, grid, float(x), ext >= 0,
                                ext * grid.dt if ext >= 0 else None))
        env = EnvironmentPath(vals, grid)
        prev = x
    return FellerField(xg, paths)


def total_mass(path: FellerPath) -> float:
    """Trapezoidal area under the path up to extinction."""
    if not path.extinct:
        raise NotExtinctError(
            f"path not extinct by horizon T={path.grid.T}; extend the grid")
    k = int(round(path.extinction_time / path.grid.dt))
    v = path.values[: k + 1]
    return float(path.grid.dt * (v.sum() - 0.5 * (v[0] + v[-1])))


@dataclass
class FellerEnsemble:
    """Probe values, total masses and extinction times of independent paths."""

    x: float
    probe_times: np.ndarray
    values: np.ndarray  # (n_paths, n_times)
    total_mass: np.ndarray
    extinction_time: np.ndarray  # nan when alive at the horizon
    stream_ids: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.values[:, int(np.argmin(np.abs(self.probe_times - t)))]


def probe_indices(grid: TimeGrid, probe_times) -> np.ndarray:
    return np.array([grid.index_of(t) for t in probe_times], dtype=np.int64)


def feller_job(params: ModelParams, x: float, probe_times, grid: TimeGrid,
               stream: RngStream, z: EnvironmentPath | None = None):
    """One path reduced to probe values, total mass and extinction time."""
    idx = probe_indices(grid, probe_times)
    order = np.argsort(idx, kind="stable")
    if params.general_drift is None:
        zv, zs = _env(z)
        ext, tot, pr, _ = kern.feller_run(stream.generator(), float(x), float(params.theta),
                                          float(params.gamma), zv, zs, grid.dt,
                                          grid.n_steps, idx[order], False)
    else:
        ext, tot, pr, _ = kern.feller_general_run(stream.generator(), float(x),
                                                  params.feller_drift(), grid.dt,
                                                  grid.n_steps, idx[order], False)
    vals = np.empty_like(pr)
    vals[order] = pr
    return vals, tot, (ext * grid.dt if ext >= 0 else math.nan)


def field_job(params: ModelParams, x_grid, probe_times, grid: TimeGrid,
              streams: Sequence[RngStream]) -> np.ndarray:
    """Probe values ``(n_x, n_times)`` of one coupled field realisation."""
    fld = simulate_field(params, x_grid, grid, streams)
    idx = probe_indices(grid, probe_times)
    return fld.matrix()[:, idx]


def superposition_check(params: ModelParams, x: float, y: float, grid: TimeGrid,
                        probe_times: Sequence[float], n_paths: int, master_seed: int = 0,
                        workers: int = 1) -> list:
    """KS reports comparing ``Z^{x+y}_t`` with ``Z^{x,0}_t + V_t`` at each probe time.

    ``V`` solves the equation started at ``y`` in environment ``Z^{x,0}``.
    Both ensembles use disjoint stream channels.
    """
    from .parallel import feller_ensemble, field_ensemble
    from .stats import SampleSet, ks_two_sample

    if x <= 0 or y < 0:
        raise ValueError("need x > 0 and y >= 0")
    direct = feller_ensemble(params, x + y, probe_times, n_paths, grid, master_seed,
                             channel=10, workers=workers)
    if y == 0:
        summed = feller_ensemble(params, x, probe_times, n_paths, grid, master_seed,
                                 channel=11, workers=workers).values
    else:
        summed = field_ensemble(params, [x, x + y], probe_times, n_paths, grid, master_seed,
                                channels=(11, 12), workers=workers)[:, 1, :]
    out = []
    for j, t in enumerate(probe_times):
        out.append(ks_two_sample(SampleSet(direct.values[:, j], f"Z^(x+y)_{t}"),
                                 SampleSet(summed[:, j], f"Z^x_{t}+V_{t}")))
    return out
