"""Change of measure between reflected BM and the exploration process.

Under the driftless reflected Brownian motion, the exponential martingale
``G_s = exp(M_s - <M>_s / 2)`` with ``M_s = int a(H_r, L_r(H_r)) dB_r`` turns the
path law into that of the exploration process with drift ``a``. In the
discrete scheme the identity is exact step by step, because the Euler step
``h + a dt + dB`` under the weighted measure is what the direct simulator uses.

Also here: Brownian-bridge local times (Rayleigh law at the pinning level) and
a probe for exponential moments of ``L_r(H_r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from . import _kernels as kern
from .drifts import jit_drift
from .exploration import ExplorationResult, LevelGrid, _environment_arrays
from .feller import EnvironmentPath, ModelParams
from .parallel import map_ordered
from .sde_core import RngStream

# exp(700) is close to the largest finite double
LOG_WEIGHT_CAP = 700.0


@dataclass(frozen=True)
class GirsanovWeight:
    """``G = exp(M - bracket / 2)``; ``overflow`` marks a capped weight."""

    M: float
    bracket: float
    G: float
    overflow: bool = False

    @classmethod
    def from_parts(cls, M: float, bracket: float) -> "GirsanovWeight":
        if bracket < 0 or not math.isfinite(M) or not math.isfinite(bracket):
            raise ValueError(f"invalid martingale parts M={M}, bracket={bracket}")
        log_g = M - 0.5 * bracket
        over = log_g > LOG_WEIGHT_CAP
        return cls(float(M), float(bracket), math.exp(min(log_g, LOG_WEIGHT_CAP)), over)


def _drift_parts(params: ModelParams, z: EnvironmentPath | None):
    zvals, z_step = _environment_arrays(z)
    use_g = params.general_drift is not None
    g = jit_drift(params.general_drift) if use_g else kern.no_drift
    return zvals, z_step, use_g, g


def girsanov_weight(result: ExplorationResult, z: EnvironmentPath | None,
                    params: ModelParams, s: float) -> GirsanovWeight:
    """Weight at horizon ``s`` for a recorded driftless reflected-BM run.

    ``result`` must come from a run with ``theta = gamma = 0``, no ceiling and
    ``record_path=True``; ``s`` must lie on its step grid.
    """
    if not result.recorded or result.dB is None:
        raise ValueError("girsanov_weight needs a recorded path with raw increments dB")
    if math.isfinite(result.K):
        raise ValueError("girsanov_weight expects a run without ceiling")
    if np.any(np.isnan(result.dB)):
        raise ValueError("path contains skipped excursions; rerun without skip_level")
    if s < 0 or s > result.elapsed + 1e-12:
        raise ValueError(f"horizon s={s} outside the simulated range [0, {result.elapsed}]")
    n = int(round(s / result.dt))
    if abs(n * result.dt - s) > 1e-9 * max(1.0, s):
        raise ValueError(f"horizon s={s} is not a multiple of dt={result.dt}")
    if n == 0:
        return GirsanovWeight(0.0, 0.0, 1.0)
    zvals, z_step, use_g, g = _drift_parts(params, z)
    dy = result.local_time.dy
    durations = result.step_durations()[:n]
    n0 = max(16, int(math.ceil((result.max_level + result.eps) / dy)) + 4)
    a = kern.replay_integrand(result.positions[:n], result.times[:n],
                              result.push_lower[:n], durations, float(params.theta),
                              float(params.gamma), zvals, z_step, use_g, g, math.inf, dy,
                              result.eps, n0)
    return GirsanovWeight.from_parts(float(np.dot(a, result.dB[:n])),
                                     float(np.dot(a * a, durations)))


@dataclass
class WeightedEnsemble:
    """Weighted fixed-horizon samples from driftless reflected-BM paths.

    ``probes[:, j]`` is the field at ``t_levels[j]`` at horizon ``s`` and
    ``lt_at_position`` is ``L_s(H_s)``. Weights are the capped ``G_s``.
    """

    s: float
    t_levels: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    probes: np.ndarray
    lt_at_position: np.ndarray
    n_overflow: int
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.weights.size)

    @property
    def ess(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / np.dot(w, w))

    def mean_weight(self) -> tuple[float, float]:
        w = self.weights
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))

    def weighted_mean(self, values) -> tuple[float, float]:
        """Self-normalized estimate with its delta-method standard error."""
        v = np.asarray(values, dtype=float)
        w = self.weights
        sw = w.sum()
        mu = float(np.dot(w, v) / sw)
        se = float(math.sqrt(np.dot(w * w, (v - mu) ** 2)) / sw)
        return mu, se

    def probe(self, t: float) -> np.ndarray:
        return self.probes[:, int(np.argmin(np.abs(self.t_levels - t)))]


def _weighted_one(i, params, z, s, dt, levels, t_levels, seed, channel):
    zvals, z_step, use_g, g = _drift_parts(params, z)
    n0 = max(16, int(math.ceil(levels.y_max / levels.dy)) + 4)
    M, br, probes, lt = kern.girsanov_run(RngStream(seed, i, channel).generator(),
                                          float(params.theta), float(params.gamma), zvals,
                                          z_step, use_g, g, float(s), float(dt),
                                          float(levels.dy), float(levels.eps), n0, t_levels)
    return M, br, probes, lt


def weighted_ensemble(params: ModelParams, s: float, n_paths: int, dt: float,
                      master_seed: int, t_levels: Sequence[float] = (), channel: int = 3,
                      z: EnvironmentPath | None = None, levels: LevelGrid | None = None,
                      workers: int | None = None, start: int = 0) -> WeightedEnsemble:
    """Driftless reflected-BM paths on ``[0, s]`` weighted towards ``params``."""
    if not s > 0 or not dt > 0:
        raise ValueError("horizon s and dt must be positive")
    levels = levels or LevelGrid.for_dt(dt)
    tl = np.asarray(t_levels, dtype=float)
    ids = list(range(start, start + n_paths))
    fn = partial(_weighted_one, params=params, z=z, s=s, dt=dt, levels=levels, t_levels=tl,
                 seed=master_seed, channel=channel)
    out = map_ordered(fn, ids, workers)
    ws = [GirsanovWeight.from_parts(o[0], o[1]) for o in out]
    return WeightedEnsemble(
        s=float(s), t_levels=tl,
        weights=np.array([w.G for w in ws]),
        log_weights=np.array([w.M - 0.5 * w.bracket for w in ws]),
        probes=np.array([o[2] for o in out]).reshape(n_paths, tl.size),
        lt_at_position=np.array([o[3] for o in out]),
        n_overflow=sum(w.overflow for w in ws),
        config={"dt": dt, "dy": levels.dy, "eps": levels.eps, "channel": channel},
    )


def fixed_horizon_profiles(params: ModelParams, s: float, n_paths: int, dt: float,
                           master_seed: int, t_levels: Sequence[float], channel: int = 4,
                           z: EnvironmentPath | None = None, levels: LevelGrid | None = None,
                           workers: int | None = None) -> np.ndarray:
    """Direct drifted exploration run to path time ``s``; field at ``t_levels``."""
    levels = levels or LevelGrid.for_dt(dt)
    fn = partial(_fixed_one, params=params, z=z, s=s, dt=dt, levels=levels,
                 t_levels=list(t_levels), seed=master_seed, channel=channel)
    return np.array(map_ordered(fn, list(range(n_paths)), workers)).reshape(n_paths, -1)


def _fixed_one(i, params, z, s, dt, levels, t_levels, seed, channel):
    from .exploration import simulate_exploration

    r = simulate_exploration(params, z, [], None, dt, levels, RngStream(seed, i, channel),
                             s_max=s, record_path=False)
    return [r.local_time.at(t) for t in t_levels]


@dataclass(frozen=True)
class BridgeLocalTimeSample:
    """Kernel local times of a Brownian bridge ``0 -> y`` on ``[0, 1]`` at ``y`` and ``-y``."""

    y: float
    k1: float
    k1_minus: float

    def __post_init__(self):
        if self.k1 < 0 or self.k1_minus < 0:
            raise ValueError("local times must be non-negative")


def sample_bridge_local_time(y: float, dt: float, stream: RngStream,
                             eps: float | None = None) -> BridgeLocalTimeSample:
    """Bridge built as ``W_t - t (W_1 - y)`` on the grid, local times by box kernel."""
    if y < 0:
        raise ValueError(f"level y must be >= 0, got {y}")
    n = int(round(1.0 / dt))
    if n < 1 or abs(n * dt - 1.0) > 1e-9:
        raise ValueError("dt must divide 1")
    eps = 4.0 * math.sqrt(dt) if eps is None else eps
    kp, km = kern.bridge_local_time(stream.generator(), float(y), n, float(eps))
    return BridgeLocalTimeSample(float(y), float(kp), float(km))


def _bridge_one(i, y, dt, eps, seed, channel):
    s = sample_bridge_local_time(y, dt, RngStream(seed, i, channel), eps)
    return s.k1


def bridge_ensemble(y: float, n_paths: int, dt: float, master_seed: int, channel: int = 5,
                    eps: float | None = None, workers: int | None = None) -> np.ndarray:
    fn = partial(_bridge_one, y=y, dt=dt, eps=eps, seed=master_seed, channel=channel)
    return np.array(map_ordered(fn, list(range(n_paths)), workers))


@dataclass(frozen=True)
class RayleighReport:
    p_exceed_1: float
    p_exceed_1_stderr: float
    tail_slope: float
    slope_stderr: float
    n: int


def rayleigh_fit(k1, grid: Sequence[float] = tuple(np.linspace(0.5, 2.0, 7))) -> RayleighReport:
    """Exceedance at 1 and the slope of ``log P(k1 > l)`` against ``l^2``."""
    k = np.asarray(k1, dtype=float)
    n = k.size
    p1 = float(np.mean(k > 1.0))
    lv = np.asarray(grid, dtype=float)
    surv = np.array([np.mean(k > l) for l in lv])
    if np.any(surv <= 0):
        raise ValueError("empty tail on the fit grid; increase the sample size")
    y = np.log(surv)
    # binomial variance of the log survival, used as weights
    var = (1.0 - surv) / (n * surv)
    w = 1.0 / var
    x = lv ** 2
    xm = np.dot(w, x) / w.sum()
    ym = np.dot(w, y) / w.sum()
    sxx = np.dot(w, (x - xm) ** 2)
    slope = float(np.dot(w, (x - xm) * (y - ym)) / sxx)
    return RayleighReport(p1, math.sqrt(p1 * (1 - p1) / n), slope, float(1.0 / math.sqrt(sxx)),
                          n)


@dataclass(frozen=True)
class ExpMomentEstimate:
    alpha: float
    estimate: float
    top_share: float
    tail_dominated: bool
    n: int


def exp_moment_probe(samples, alpha: float, top_fraction: float = 0.01,
                     threshold: float = 0.5) -> ExpMomentEstimate:
    """Empirical ``E[exp(alpha L^2)]`` with a heavy-tail diagnostic.

    ``top_share`` is the part of the sum carried by the largest
    ``top_fraction`` of terms; above ``threshold`` the estimate is flagged
    as tail-dominated.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    v = np.asarray(samples, dtype=float)
    if v.size == 0 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("samples must be finite, non-negative and non-empty")
    if alpha == 0:
        return ExpMomentEstimate(0.0, 1.0, top_fraction, False, v.size)
    terms = np.sort(np.exp(alpha * v * v))
    total = terms.sum()
    k = max(1, int(math.ceil(top_fraction * v.size)))
    share = float(terms[-k:].sum() / total)
    return ExpMomentEstimate(float(alpha), float(total / v.size), share, share > threshold,
                             v.size)
