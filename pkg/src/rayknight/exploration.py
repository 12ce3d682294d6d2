"""Exploration process with a local-time drift and its local-time field.

``H`` is Brownian motion reflected at 0 (optionally also below a ceiling
``K``) with drift ``theta/2 - gamma * (z(H) + L(H))``, where ``L(H)`` is the
local time accumulated so far at the current level. The local-time field is
built on-line with a box kernel; the local time at 0 is tracked exactly through
the Skorokhod pushing process and defines the stopping times ``S_x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import _kernels as kern
from .drifts import jit_drift
from .feller import EnvironmentPath, ModelParams
from .sde_core import LOCAL_TIME_PER_PUSH, GridSanityError, RngStream, TimeGrid


class SxNotReachedError(RuntimeError):
    """``L(0)`` did not pass the target before the path-time cap ``s_max``."""


def default_eps(dt: float) -> float:
    return 4.0 * math.sqrt(dt)


@dataclass(frozen=True)
class LevelGrid:
    """Level nodes ``j * dy``; ``eps`` is the box-kernel bandwidth."""

    dy: float
    eps: float
    y_max: float = 4.0

    def __post_init__(self):
        if not self.dy > 0:
            raise ValueError(f"dy must be positive, got {self.dy}")
        if self.eps < self.dy:
            raise ValueError(f"kernel bandwidth eps={self.eps} must be >= dy={self.dy}")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")

    @classmethod
    def for_dt(cls, dt: float, y_max: float = 4.0) -> "LevelGrid":
        eps = default_eps(dt)
        return cls(dy=eps / 4.0, eps=eps, y_max=y_max)

    @property
    def n_levels(self) -> int:
        return int(round(self.y_max / self.dy)) + 1

    def index_of(self, level: float) -> int:
        return int(round(level / self.dy))


def cell_lengths(n: int, dy: float, K: float = math.inf) -> np.ndarray:
    """Length of the cell owned by each node (half cells at 0 and at ``K``)."""
    lo = np.maximum((np.arange(n) - 0.5) * dy, 0.0)
    hi = np.minimum((np.arange(n) + 0.5) * dy, K)
    return np.maximum(hi - lo, 0.0)


@dataclass
class LocalTimeField:
    """Kernel local times on level nodes plus exact boundary local times.

    ``accumulated[j]`` is the occupation density near ``j * dy`` (semimartingale
    normalization, so the local time at 0 of reflected BM is twice its pushing).
    The kernel spills a little mass above the highest visited level
    ``max_level``; :meth:`profile` and :meth:`at` read 0 there, while the raw
    ``accumulated`` array keeps the full mass.
    """

    accumulated: np.ndarray
    dy: float
    boundary_zero: float
    boundary_K: float = 0.0
    K: float = math.inf
    max_level: float = math.inf

    @property
    def levels(self) -> np.ndarray:
        return self.dy * np.arange(self.accumulated.shape[0])

    def at(self, level: float) -> float:
        """Profile value at ``level``; level 0 returns the exact boundary value."""
        j = int(round(level / self.dy))
        if abs(j * self.dy - level) > 1e-9 * max(1.0, level):
            return float(np.interp(level, self.levels, self.profile()))
        if j == 0:
            return self.boundary_zero
        if j >= self.accumulated.shape[0] or level > self.max_level:
            return 0.0
        return float(self.accumulated[j])

    def profile(self) -> np.ndarray:
        p = self.accumulated.copy()
        p[self.levels > self.max_level] = 0.0
        p[0] = self.boundary_zero
        return p

    def total_occupation(self) -> float:
        n = self.accumulated.shape[0]
        return float(np.dot(self.accumulated, cell_lengths(n, self.dy, self.K)))

    def integral(self, t: float) -> float:
        """Occupation below ``t`` read off the field: sum of density x cell overlap with [0, t]."""
        n = self.accumulated.shape[0]
        j = np.arange(n)
        lo = np.maximum((j - 0.5) * self.dy, 0.0)
        hi = np.minimum(np.minimum((j + 0.5) * self.dy, self.K), t)
        return float(np.dot(self.accumulated, np.maximum(hi - lo, 0.0)))


@dataclass
class ExplorationResult:
    """One exploration run stopped at ``S_x`` (or at a fixed horizon).

    ``profiles[k]`` is the field snapshot at ``S[k]`` for target ``xs[k]``;
    ``profile`` / ``local_time_at_S`` refer to the last target. The path is
    only present when the run was recorded: ``times`` / ``positions`` hold the
    left end of every step plus the final point; skipped excursions appear as
    a single step with ``dB = nan``.
    """

    xs: np.ndarray
    S: np.ndarray
    snapshots: list[LocalTimeField]
    local_time: LocalTimeField
    K: float
    dt: float
    eps: float
    elapsed: float
    max_level: float
    times: np.ndarray | None = None
    positions: np.ndarray | None = None
    dB: np.ndarray | None = None
    push_lower: np.ndarray | None = None
    push_upper: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def S_x(self) -> float:
        return float(self.S[-1]) if self.S.size else math.nan

    @property
    def local_time_at_S(self) -> LocalTimeField:
        return self.snapshots[-1]

    @property
    def profile(self) -> np.ndarray:
        return self.snapshots[-1].profile()

    @property
    def levels(self) -> np.ndarray:
        return self.snapshots[-1].levels

    @property
    def recorded(self) -> bool:
        return self.positions is not None

    def step_durations(self) -> np.ndarray:
        return np.diff(self.times)


def _environment_arrays(z: EnvironmentPath | None) -> tuple[np.ndarray, float]:
    if z is None:
        return np.zeros(0), 1.0
    return np.ascontiguousarray(z.values, dtype=float), float(z.grid.dt)


def _check_targets(xs) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xs.size and (np.any(xs <= 0) or not np.all(np.isfinite(xs))):
        raise ValueError(f"ancestral masses must be positive and finite, got {xs}")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("targets x must be strictly increasing")
    return xs


def _run_kernel(params: ModelParams, z, xs, K, dt, levels: LevelGrid, stream: RngStream,
                s_max, skip_level, record):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    K = math.inf if K is None else float(K)
    if K <= 0:
        raise ValueError("ceiling K must be positive")
    if K < math.inf:
        n = K / levels.dy
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"K={K} must be a multiple of dy={levels.dy}")
        if levels.eps > K:
            raise ValueError("kernel bandwidth exceeds the ceiling K")
    skip = math.inf if skip_level is None else float(skip_level)
    if skip < math.inf and not params.is_driftless(z):
        raise ValueError("excursion skipping is only exact for driftless reflected BM")
    zvals, z_step = _environment_arrays(z)
    use_g = params.general_drift is not None
    g = jit_drift(params.general_drift) if use_g else kern.no_drift
    n0 = max(16, int(math.ceil(levels.y_max / levels.dy)) + 4)
    out = kern.explore(stream.generator(), float(params.theta), float(params.gamma),
                       zvals, z_step, use_g, g, xs, K, float(dt), float(levels.dy),
                       float(levels.eps), float(s_max), skip, bool(record), n0)
    status = out[0]
    if status == kern.NOT_REACHED:
        raise SxNotReachedError(
            f"S_x not reached by s_max={s_max} (stream {stream.stream_id}); raise s_max")
    if status == kern.GRID_SANITY:
        raise GridSanityError(f"step overshoot exceeds K={K}; reduce dt")
    return out


def simulate_exploration(params: ModelParams, z: EnvironmentPath | None,
                         x: float | Sequence[float], K: float | None, dt: float,
                         levels: LevelGrid, stream: RngStream, s_max: float = 1e3,
                         record_path: bool = True,
                         skip_level: float | None = None) -> ExplorationResult:
    """Run the exploration process until ``L(0)`` exceeds ``x``.

    ``x`` may be an increasing sequence; the field is then snapshotted at each
    ``S_x`` of the same path. An empty sequence runs to the fixed horizon
    ``s_max``. ``skip_level`` (driftless models only) replaces excursions above
    that level by their exact first-passage duration; the field above
    ``skip_level`` is then not tracked.
    """
    xs = _check_targets(x) if np.ndim(x) else _check_targets([x])
    out = _run_kernel(params, z, xs, K, dt, levels, stream, s_max, skip_level, record_path)
    (_, h, s, plo, pup, max_h, ell, snaps, S, Smax, rec_t, rec_h, rec_dB, rec_lo,
     rec_up) = out
    Kf = math.inf if K is None else float(K)
    bK = LOCAL_TIME_PER_PUSH * pup
    snapshots = [
        LocalTimeField(snaps[k].copy(), levels.dy, float(xs[k]), math.nan, Kf, float(Smax[k]))
        for k in range(xs.size)
    ]
    final = LocalTimeField(ell, levels.dy, LOCAL_TIME_PER_PUSH * plo, bK, Kf, float(max_h))
    if not snapshots:
        snapshots = [final]
    res = ExplorationResult(
        xs=xs, S=S, snapshots=snapshots, local_time=final, K=Kf, dt=float(dt),
        eps=levels.eps, elapsed=float(s), max_level=float(max_h),
    )
    if record_path:
        res.times, res.positions = rec_t, rec_h
        res.dB, res.push_lower, res.push_upper = rec_dB, rec_lo, rec_up
    return res


def simulate_drifted_reflected(theta: float, K: float, dt: float, stream: RngStream,
                               s_max: float, x: float | Sequence[float] = 1.0,
                               levels: LevelGrid | None = None,
                               record_path: bool = True) -> ExplorationResult:
    """Brownian motion with constant drift ``theta/2`` reflected in ``[0, K]``."""
    if K is None or not math.isfinite(K):
        raise ValueError("the comparison process needs a finite ceiling K")
    levels = levels or LevelGrid.for_dt(dt, y_max=K)
    return simulate_exploration(ModelParams(theta, 0.0), None, x, K, dt, levels, stream,
                                s_max, record_path)


def _require_path(result: ExplorationResult):
    if not result.recorded:
        raise ValueError("this operation needs a recorded path (record_path=True)")


def chop_above_K(result: ExplorationResult, K: float) -> ExplorationResult:
    """Excise the excursions above ``K`` and concatenate the remaining pieces.

    The path is read as piecewise linear between recorded points; pieces above
    ``K`` are removed and the path-time shrinks by their duration. Field entries
    at levels ``<= K`` are copied unchanged.
    """
    _require_path(result)
    if math.isfinite(result.K):
        raise ValueError("chop_above_K expects a run without ceiling")
    t, h = result.times, result.positions
    if np.all(h <= K):
        return result
    a, b, d = h[:-1], h[1:], np.diff(t)
    up = (a <= K) & (b > K)
    down = (a > K) & (b <= K)
    above = (a > K) & (b > K)
    with np.errstate(divide="ignore", invalid="ignore"):
        kept = np.where(up, d * (K - a) / (b - a), d)
        kept = np.where(down, d * (K - b) / (a - b), kept)
    kept = np.where(above, 0.0, kept)
    removed_at = np.concatenate([[0.0], np.cumsum(d - kept)])
    nt = np.concatenate([[t[0]], t[0] + np.cumsum(kept)])
    nh = np.concatenate([[h[0]], np.where(up, K, b)])
    keep = np.concatenate([[True], ~above])
    nt, nh = nt[keep], nh[keep]
    dup = np.concatenate([[False], (np.diff(nt) == 0) & (np.diff(nh) == 0)])
    nt, nh = nt[~dup], nh[~dup]
    removed = float(removed_at[-1])
    n_keep = int(round(K / result.local_time.dy)) + 1

    def cut(f: LocalTimeField) -> LocalTimeField:
        acc = f.accumulated[:n_keep].copy()
        if acc.size < n_keep:
            acc = np.concatenate([acc, np.zeros(n_keep - acc.size)])
        return LocalTimeField(acc, f.dy, f.boundary_zero, float(acc[-1]), K,
                              min(f.max_level, K))

    S_new = np.array([s - np.interp(s, t, removed_at) for s in result.S])
    return ExplorationResult(
        xs=result.xs, S=S_new, snapshots=[cut(f) for f in result.snapshots],
        local_time=cut(result.local_time), K=K, dt=result.dt, eps=result.eps,
        elapsed=float(nt[-1]), max_level=float(min(result.max_level, K)),
        times=nt, positions=nh, dB=None, push_lower=None, push_upper=None,
        diagnostics={"removed_time": removed},
    )


def occupation_time(result: ExplorationResult, t: float, s: float | None = None) -> float:
    """Path time spent at or below level ``t`` up to path time ``s`` (left-point rule)."""
    _require_path(result)
    s = result.elapsed if s is None else s
    if s < 0 or s > result.elapsed + 1e-12:
        raise ValueError(f"s={s} outside simulated range [0, {result.elapsed}]")
    ti = result.times
    d = np.clip(np.minimum(ti[1:], s) - ti[:-1], 0.0, None)
    return float(np.sum(d * (result.positions[:-1] <= t)))


def tanaka_integral(result: ExplorationResult, t: float) -> float:
    """``2 * sum 1{H_n <= t} (H_{n+1} - H_n)`` over the steps up to ``S_x``."""
    _require_path(result)
    h = result.positions
    dh = np.diff(h)
    if result.dB is not None:
        # skipped excursions start and end above any probed level
        dh = np.where(np.isnan(result.dB), 0.0, dh)
    return 2.0 * float(np.sum(dh * (h[:-1] <= t)))


def tanaka_residual(result: ExplorationResult, t: float) -> float:
    """``|L_{S_x}(t) - 2 int_0^{S_x} 1{H <= t} dH|`` for the last target ``x``."""
    if not np.isfinite(result.S_x):
        raise ValueError("S_x was not reached in this run")
    return abs(result.local_time_at_S.at(t) - tanaka_integral(result, t))


def occupation_error(result: ExplorationResult, t: float) -> float:
    """Relative gap between ``A(S_x, t)`` and the field integral of the profile below ``t``."""
    A = occupation_time(result, t, result.S_x)
    I = result.local_time_at_S.integral(t)
    return abs(A - I) / A if A > 0 else abs(I)


@dataclass
class ProfileEnsemble:
    """Profiles of many independent runs at a fixed set of probe levels."""

    xs: np.ndarray
    t_levels: np.ndarray
    values: np.ndarray  # (n_paths, n_x, n_levels)
    S: np.ndarray  # (n_paths, n_x)
    stream_ids: np.ndarray
    occupation_rel_err: np.ndarray  # (n_paths,) |sum ell*cell - S_last| / S_last
    config: dict = field(default_factory=dict)

    def marginal(self, x: float, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.xs - x)))
        j = int(np.argmin(np.abs(self.t_levels - t)))
        return self.values[:, i, j]

    def S_of(self, x: float) -> np.ndarray:
        return self.S[:, int(np.argmin(np.abs(self.xs - x)))]


def profile_job(params: ModelParams, z, xs, t_levels, K, dt, levels: LevelGrid, stream,
                s_max, skip_level):
    """One path reduced to probe values; used by ensemble runners."""
    r = simulate_exploration(params, z, xs, K, dt, levels, stream, s_max,
                             record_path=False, skip_level=skip_level)
    vals = np.array([[snap.at(t) for t in t_levels] for snap in r.snapshots])
    last = r.snapshots[-1]
    occ = abs(last.total_occupation() - r.S_x) / r.S_x if skip_level is None else math.nan
    return vals, r.S.copy(), occ


def extract_S_distribution(params: ModelParams, x: float, K: float | None, n_paths: int,
                           dt: float, master_seed: int = 0, channel: int = 1,
                           s_max: float = 1e3, levels: LevelGrid | None = None,
                           z: EnvironmentPath | None = None, workers: int = 1):
    """i.i.d. samples of ``S_x`` (one path per stream)."""
    from .parallel import exploration_ensemble

    if params.general_drift is None and params.gamma <= 0:
        raise ValueError("gamma must be positive: E[S_x] may be infinite otherwise")
    ens = exploration_ensemble(params, [x], [0.0], n_paths, dt, master_seed, channel=channel,
                               K=K, levels=levels, s_max=s_max, z=z, workers=workers)
    from .stats import SampleSet

    return SampleSet(ens.S[:, 0], label=f"S_x(x={x})")


__all__ = [
    "LevelGrid", "LocalTimeField", "ExplorationResult", "ProfileEnsemble",
    "SxNotReachedError", "simulate_exploration", "simulate_drifted_reflected",
    "chop_above_K", "occupation_time", "tanaka_residual", "tanaka_integral",
    "occupation_error", "extract_S_distribution", "default_eps",
    "cell_lengths", "TimeGrid",
]
