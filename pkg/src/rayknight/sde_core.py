"""Numeric kernels shared by the Feller and exploration simulators.

Time grids, reproducible per-path random streams, the full-truncation step for
square-root diffusions and the Skorokhod clamp onto ``[0, K]`` with explicit
bookkeeping of the pushing process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

# Semimartingale local time at a reflecting boundary per unit of Skorokhod
# pushing: H = B + L(0)/2, so L(0) = 2 * push.
LOCAL_TIME_PER_PUSH = 2.0


class GridSanityError(ValueError):
    """Raised when one free step overshoots a boundary by more than ``K``."""


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")

    @classmethod
    def from_horizon(cls, T: float, dt: float) -> "TimeGrid":
        return cls(dt=dt, n_steps=max(1, int(math.ceil(T / dt - 1e-9))))

    @property
    def T(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of time ``t`` (rounded to the nearest node)."""
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps:
            raise ValueError(f"time {t} outside grid [{self.t0}, {self.T}]")
        return k


@dataclass(frozen=True)
class RngStream:
    """Independent random stream keyed by ``(master_seed, stream_id)``.

    ``channel`` separates families of streams used by one experiment (for
    instance the Feller side and the exploration side of a comparison), so the
    same ``stream_id`` can be reused across families without sharing noise.
    """

    master_seed: int
    stream_id: int
    channel: int = 0

    def __post_init__(self):
        if self.master_seed < 0 or self.stream_id < 0 or self.channel < 0:
            raise ValueError("seed, stream_id and channel must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.channel, self.stream_id))
        return np.random.Generator(np.random.Philox(ss))


def streams(master_seed: int, n: int, channel: int = 0, start: int = 0) -> list[RngStream]:
    return [RngStream(master_seed, start + i, channel) for i in range(n)]


def gaussian_increments(stream: RngStream, grid: TimeGrid) -> np.ndarray:
    """``grid.n_steps`` independent N(0, dt) draws from ``stream``."""
    return math.sqrt(grid.dt) * stream.generator().standard_normal(grid.n_steps)


@numba.njit(cache=True)
def sqrt_diffusion_step(z, drift_value, dW, dt):
    nz = z + drift_value * dt + 2.0 * math.sqrt(max(z, 0.0)) * dW
    return nz if nz > 0.0 else 0.0


def step_sqrt_diffusion(z: float, drift_value: float, dW: float, dt: float) -> float:
    """One full-truncation Euler step of ``dZ = drift dt + 2 sqrt(Z) dW``.

    The result is clipped at 0, so ``z = 0`` with zero drift stays at 0.
    """
    if z < 0:
        raise ValueError(f"level must be non-negative, got {z}")
    return float(sqrt_diffusion_step(float(z), float(drift_value), float(dW), float(dt)))


@dataclass(frozen=True)
class ReflectedStepResult:
    new_position: float
    push_lower: float
    push_upper: float


@numba.njit(cache=True)
def reflect_clamp(free, K):
    """Skorokhod clamp of ``free`` onto ``[0, K]``.

    Returns ``(position, push_lower, push_upper, ok)``; ``ok`` is False when the
    overshoot past a boundary exceeds ``K`` (step too coarse for the ceiling).
    """
    if free < 0.0:
        return 0.0, -free, 0.0, -free <= K
    if free > K:
        return K, 0.0, free - K, free - K <= K
    return free, 0.0, 0.0, True


def step_reflected(h: float, drift_value: float, dB: float, dt: float,
                   K: float | None = None) -> ReflectedStepResult:
    """Free Euler step ``h + drift dt + dB`` mapped onto ``[0, K]`` by clamping.

    ``push_lower`` / ``push_upper`` are the amounts added / removed by the
    clamp. Their running sums are the lower and upper pushing processes, half
    the boundary local times.
    """
    K = math.inf if K is None else float(K)
    if not (0.0 <= h <= K):
        raise ValueError(f"position {h} outside [0, {K}]")
    pos, lo, up, ok = reflect_clamp(h + drift_value * dt + dB, K)
    if not ok:
        raise GridSanityError(
            f"free step overshoots the boundary by more than K={K}; reduce dt")
    return ReflectedStepResult(pos, lo, up)
