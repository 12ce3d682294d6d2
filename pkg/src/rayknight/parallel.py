"""Ensemble runners: one job per stream id, results reduced in stream order.

Every path draws from its own ``RngStream``, so the result of a job depends on
its stream id only. ``ProcessPoolExecutor.map`` returns results in submission
order, which makes aggregates independent of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .exploration import LevelGrid, ProfileEnsemble, profile_job
from .feller import FellerEnsemble, ModelParams, feller_job, field_job
from .sde_core import RngStream, TimeGrid

WORKERS_ENV = "RAYKNIGHT_WORKERS"


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def map_ordered(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    chunk = max(1, len(items) // (8 * workers))
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def _explore_one(i, params, z, xs, t_levels, K, dt, levels, s_max, skip_level, seed, channel):
    return profile_job(params, z, xs, t_levels, K, dt, levels, RngStream(seed, i, channel),
                       s_max, skip_level)


def exploration_ensemble(params: ModelParams, xs, t_levels, n_paths: int, dt: float,
                         master_seed: int, channel: int = 1, K: float | None = None,
                         levels: LevelGrid | None = None, s_max: float = 1e3, z=None,
                         workers: int | None = None, skip_level: float | None = None,
                         start: int = 0) -> ProfileEnsemble:
    levels = levels or LevelGrid.for_dt(dt)
    xs = np.asarray(xs, dtype=float)
    t_levels = np.asarray(t_levels, dtype=float)
    ids = list(range(start, start + n_paths))
    fn = partial(_explore_one, params=params, z=z, xs=xs, t_levels=t_levels, K=K, dt=dt,
                 levels=levels, s_max=s_max, skip_level=skip_level, seed=master_seed,
                 channel=channel)
    out = map_ordered(fn, ids, workers)
    return ProfileEnsemble(
        xs=xs, t_levels=t_levels,
        values=np.array([o[0] for o in out]).reshape(n_paths, xs.size, t_levels.size),
        S=np.array([o[1] for o in out]).reshape(n_paths, xs.size),
        stream_ids=np.array(ids),
        occupation_rel_err=np.array([o[2] for o in out]),
        config={"dt": dt, "dy": levels.dy, "eps": levels.eps, "K": K, "channel": channel},
    )


def _feller_one(i, params, x, probe_times, grid, seed, channel, z):
    return feller_job(params, x, probe_times, grid, RngStream(seed, i, channel), z)


def feller_ensemble(params: ModelParams, x: float, probe_times, n_paths: int, grid: TimeGrid,
                    master_seed: int, channel: int = 0, workers: int | None = None,
                    start: int = 0, z=None) -> FellerEnsemble:
    ids = list(range(start, start + n_paths))
    fn = partial(_feller_one, params=params, x=x, probe_times=list(probe_times), grid=grid,
                 seed=master_seed, channel=channel, z=z)
    out = map_ordered(fn, ids, workers)
    return FellerEnsemble(
        x=float(x), probe_times=np.asarray(probe_times, dtype=float),
        values=np.array([o[0] for o in out]).reshape(n_paths, len(probe_times)),
        total_mass=np.array([o[1] for o in out]),
        extinction_time=np.array([o[2] for o in out]),
        stream_ids=np.array(ids),
    )


def _field_one(i, params, x_grid, probe_times, grid, seed, channels):
    return field_job(params, x_grid, probe_times, grid, [RngStream(seed, i, c) for c in channels])


def field_ensemble(params: ModelParams, x_grid, probe_times, n_paths: int, grid: TimeGrid,
                   master_seed: int, channels: Sequence[int] | None = None,
                   workers: int | None = None, start: int = 0) -> np.ndarray:
    """Probe values ``(n_paths, n_x, n_times)`` of coupled field realisations."""
    channels = tuple(channels) if channels is not None else tuple(range(20, 20 + len(x_grid)))
    if len(channels) != len(x_grid):
        raise ValueError("need one stream channel per x level")
    ids = list(range(start, start + n_paths))
    fn = partial(_field_one, params=params, x_grid=list(x_grid), probe_times=list(probe_times),
                 grid=grid, seed=master_seed, channels=channels)
    return np.array(map_ordered(fn, ids, workers))
