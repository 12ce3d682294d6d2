"""Verification pipelines behind the command line.

Each pipeline takes an :class:`ExperimentConfig`, runs its ensembles with
disjoint stream channels and returns a report whose ``passed`` flag decides
the exit status. Writing files is separate (:func:`write_theorem_outputs` and
friends) so that the pipelines can be reused from tests and scripts.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as rio
from .config import ExperimentConfig, validate_ladder
from .exploration import (LevelGrid, chop_above_K, occupation_error, simulate_drifted_reflected,
                          simulate_exploration, tanaka_residual)
from .feller import EnvironmentPath, ModelParams, superposition_check
from .girsanov import bridge_ensemble, rayleigh_fit, weighted_ensemble
from .parallel import exploration_ensemble, feller_ensemble, field_ensemble, map_ordered
from .sde_core import RngStream, TimeGrid
from .stats import (KSReport, holm, ks_pvalue, ks_statistic, ks_two_sample, mean_stderr,
                    moment_compare, monotonicity_check, qq_points)

ALPHA = 0.01
SX_KS_MAX = 0.05

# stream channels; every ensemble family gets its own
CH_EXPLORE = 1
CH_FELLER = 100  # + index of x
CH_CHOP = 30
CH_TWO_SIDED = 31
CH_COMPARE = 32
CH_IDENTITY = 33
CH_GIRSANOV = 34
CH_BRIDGE = 35
CH_FIELD = 40  # + index of x


def _params(cfg: ExperimentConfig, gamma: float | None = None) -> ModelParams:
    return ModelParams(cfg.model.theta, cfg.model.gamma if gamma is None else gamma)


def _environment(cfg: ExperimentConfig) -> EnvironmentPath | None:
    z = cfg.environment.z
    if z is None:
        return None
    vals = np.asarray(z["values"], dtype=float)
    return EnvironmentPath(vals, TimeGrid(float(z["dt"]), vals.size - 1))


def _levels(cfg: ExperimentConfig, y_max: float = 4.0) -> LevelGrid:
    return LevelGrid(cfg.dy, cfg.eps, y_max)


def _label(x: float, t: float) -> str:
    return f"x={x:g},t={t:g}"


# main comparison


@dataclass
class TheoremReport:
    passed: bool
    ks: dict
    moments: dict
    sx: dict
    holm_rejected: list
    failures: list
    samples: dict = field(default_factory=dict, repr=False)

    def manifest(self) -> dict:
        return {"passed": self.passed, "failures": self.failures,
                "holm_rejected": self.holm_rejected}


def theorem_exploration(cfg: ExperimentConfig):
    return exploration_ensemble(_params(cfg), list(cfg.probes.x), list(cfg.probes.t),
                                cfg.run.n_paths, cfg.grid.dt, cfg.run.master_seed,
                                channel=CH_EXPLORE, K=cfg.grid.K, levels=_levels(cfg),
                                s_max=cfg.grid.s_max, z=_environment(cfg),
                                workers=cfg.run.workers)


def verify_theorem(cfg: ExperimentConfig, gamma_feller: float | None = None,
                   keep_samples: bool = True, exploration=None) -> TheoremReport:
    """Profile marginals ``L_{S_x}(t)`` against Feller marginals ``Z^x_t``.

    Passes when no marginal is rejected by Holm at level 0.01 and, for every
    ``x``, the KS distance between ``S_x`` and the total mass is below 0.05.
    ``gamma_feller`` replaces the Feller-side competition rate (negative
    control). A precomputed ``exploration`` ensemble for the same config may
    be passed in to share it between runs.
    """
    cfg.validate()
    xs, ts = list(cfg.probes.x), list(cfg.probes.t)
    n, seed, workers = cfg.run.n_paths, cfg.run.master_seed, cfg.run.workers
    z = _environment(cfg)
    ens = exploration or theorem_exploration(cfg)
    grid = TimeGrid.from_horizon(cfg.grid.T_max, cfg.grid.dt)
    fparams = _params(cfg, gamma_feller)
    ks, moments, labels, pvals, samples = {}, {}, [], [], {}
    sx = {}
    for i, x in enumerate(xs):
        fel = feller_ensemble(fparams, x, ts, n, grid, seed, channel=CH_FELLER + i, z=z,
                              workers=workers)
        for j, t in enumerate(ts):
            lab = _label(x, t)
            a, b = ens.values[:, i, j], fel.values[:, j]
            rep = ks_two_sample(a, b, ALPHA)
            ks[lab] = rep.to_dict()
            moments[lab] = moment_compare(a, b).to_dict()
            labels.append(lab)
            pvals.append(rep.p_value)
            if keep_samples:
                samples[lab] = (a, b)
        mass = fel.total_mass
        alive = np.isnan(fel.extinction_time)
        lab = f"x={x:g}"
        if alive.any():
            sx[lab] = {"d_stat": math.nan, "passed": False,
                       "error": f"{int(alive.sum())} Feller paths alive at T_max"}
            continue
        d = ks_statistic(ens.S[:, i], mass)
        mc = moment_compare(ens.S[:, i], mass)
        sx[lab] = {"d_stat": d, "p_value": ks_pvalue(d, n, n), "passed": d < SX_KS_MAX,
                   "mean_S": mc.mean_a, "mean_mass": mc.mean_b, "z_mean": mc.z_scores["mean"]}
        if keep_samples:
            samples[f"S,{lab}"] = (ens.S[:, i], mass)
    rejected = holm(pvals, ALPHA)
    failures = [{"marginal": lab, "p_value": p, "test": "ks-holm"}
                for lab, p, r in zip(labels, pvals, rejected) if r]
    failures += [{"marginal": lab, "d_stat": v["d_stat"], "test": "sx-total-mass"}
                 for lab, v in sx.items() if not v["passed"]]
    return TheoremReport(not failures, ks, moments, sx,
                         [lab for lab, r in zip(labels, rejected) if r], failures, samples)


def write_theorem_outputs(report: TheoremReport, cfg: ExperimentConfig,
                          out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    meta = rio.metadata(cfg.config_hash())
    paths = [
        rio.write_json(out / "ks_report.json", {"marginals": report.ks, "sx": report.sx,
                                               "alpha": ALPHA, "correction": "holm"}, meta),
        rio.write_json(out / "moments.json", {"marginals": report.moments}, meta),
        rio.write_json(out / "manifest.json", report.manifest(), meta),
    ]
    for lab, (a, b) in report.samples.items():
        stem = lab.replace("=", "").replace(",", "_")
        paths.append(rio.write_csv(out / f"qq_{stem}.csv",
                                   ["quantile", "exploration", "feller"], qq_points(a, b), meta))
        if cfg.run.plots:
            paths.append(rio.write_cdf_svg(out / f"cdf_{stem}.svg", a, b, "exploration",
                                           "feller", lab))
    return paths


# single checks


@dataclass
class LemmaReport:
    name: str
    passed: bool
    details: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _check_superposition(cfg, x=1.0, y=1.0, t=0.5, **_):
    grid = TimeGrid.from_horizon(t, cfg.grid.dt)
    reps = superposition_check(_params(cfg), x, y, grid, [t], cfg.run.n_paths,
                               cfg.run.master_seed, workers=cfg.run.workers)
    r = reps[0]
    return r.passed, {"x": x, "y": y, "t": t, **r.to_dict()}


def _chop_one(i, K, x, t, dt, levels, seed, skip):
    r = simulate_exploration(ModelParams(0.0, 0.0), None, x, None, dt, levels,
                             RngStream(seed, i, CH_CHOP), s_max=1e12, skip_level=skip)
    c = chop_above_K(r, K)
    return c.local_time_at_S.at(t)


def _two_sided_one(i, K, x, t, dt, levels, seed):
    r = simulate_exploration(ModelParams(0.0, 0.0), None, x, K, dt, levels,
                             RngStream(seed, i, CH_TWO_SIDED), s_max=1e6, record_path=False)
    return r.local_time_at_S.at(t)


def chop_samples(cfg, K=1.0, x=1.0, t=0.5, n_paths=None):
    """Profiles at ``t`` of chopped one-sided runs and of direct runs in ``[0, K]``.

    Excursions above ``1.25 K`` are skipped (exact for driftless paths); they
    are removed by the chopping anyway.
    """
    from functools import partial

    n = n_paths or cfg.run.n_paths
    levels = _levels(cfg, y_max=2 * K)
    ids = list(range(n))
    a = map_ordered(partial(_chop_one, K=K, x=x, t=t, dt=cfg.grid.dt, levels=levels,
                            seed=cfg.run.master_seed, skip=1.25 * K), ids, cfg.run.workers)
    b = map_ordered(partial(_two_sided_one, K=K, x=x, t=t, dt=cfg.grid.dt, levels=levels,
                            seed=cfg.run.master_seed), ids, cfg.run.workers)
    return np.array(a), np.array(b)


def _check_chop(cfg, K=1.0, x=1.0, t=0.5, **_):
    a, b = chop_samples(cfg, K, x, t)
    r = ks_two_sample(a, b, ALPHA)
    return r.passed, {"K": K, "x": x, "t": t, **r.to_dict(),
                      "moments": moment_compare(a, b).to_dict()}


def _compare_one(i, params, K, s, dt, levels, seed):
    st = RngStream(seed, i, CH_COMPARE)
    h = simulate_exploration(params, None, [], K, dt, levels, st, s_max=s)
    hb = simulate_drifted_reflected(params.theta, K, dt, st, s_max=s, x=[], levels=levels)
    if h.positions.shape != hb.positions.shape:
        raise RuntimeError("paired runs have different step counts")
    return int(np.sum(h.positions > hb.positions)), int(h.positions.size)


def comparison_violations(cfg, K=1.0, s=2.0, n_pairs=1000):
    """Count pathwise violations of ``H^K <= Hbar^K`` under shared noise."""
    from functools import partial

    levels = _levels(cfg, y_max=K)
    out = map_ordered(partial(_compare_one, params=_params(cfg), K=K, s=s, dt=cfg.grid.dt,
                              levels=levels, seed=cfg.run.master_seed),
                      list(range(n_pairs)), cfg.run.workers)
    return sum(o[0] for o in out), sum(o[1] for o in out)


def _check_comparison(cfg, K=1.0, s=2.0, n_pairs=1000, **_):
    bad, total = comparison_violations(cfg, K, s, n_pairs)
    return bad == 0, {"K": K, "s": s, "pairs": n_pairs, "points": total, "violations": bad}


def _check_rayleigh(cfg, dt=None, **_):
    dt = dt or cfg.grid.dt
    n = cfg.run.n_paths
    k0 = bridge_ensemble(0.0, n, dt, cfg.run.master_seed, CH_BRIDGE, workers=cfg.run.workers)
    rep = rayleigh_fit(k0)
    target = math.exp(-0.5)
    ok = abs(rep.p_exceed_1 - target) <= 0.015 and abs(rep.tail_slope + 0.5) <= 0.05
    return ok, {**asdict(rep), "target": target, "p_positive": float(np.mean(k0 > 0)),
                "dt": dt}


def _check_girsanov(cfg, s=1.0, dt=None, **_):
    dt = dt or cfg.grid.dt
    w = weighted_ensemble(_params(cfg), s, cfg.run.n_paths, dt, cfg.run.master_seed,
                          channel=CH_GIRSANOV, workers=cfg.run.workers)
    m, se = w.mean_weight()
    ok = abs(m - 1.0) <= 3.0 * se and w.n_overflow == 0
    return ok, {"mean": m, "stderr": se, "ess": w.ess, "n": w.n, "s": s, "dt": dt,
                "overflow": w.n_overflow}


def _identity_one(i, x, ts, dt, levels, seed, skip):
    r = simulate_exploration(ModelParams(0.0, 0.0), None, x, None, dt, levels,
                             RngStream(seed, i, CH_IDENTITY), s_max=1e12, skip_level=skip)
    lt = [r.local_time_at_S.at(t) for t in ts]
    return ([occupation_error(r, t) for t in ts], [tanaka_residual(r, t) for t in ts], lt)


def identity_errors(dt: float, n_paths: int, master_seed: int, x: float = 1.0,
                    t: float = 0.5, workers: int = 1) -> dict:
    """Median occupation error and median Tanaka residual over driftless runs."""
    from functools import partial

    levels = LevelGrid.for_dt(dt)
    out = map_ordered(partial(_identity_one, x=x, ts=[t], dt=dt, levels=levels,
                              seed=master_seed, skip=t + 1.0), list(range(n_paths)), workers)
    occ = np.array([o[0][0] for o in out])
    tan = np.array([o[1][0] for o in out])
    lt = np.array([o[2][0] for o in out])
    med_lt = float(np.median(lt))
    return {"dt": dt, "occupation_rel_err": float(np.median(occ)),
            "tanaka_residual": float(np.median(tan)), "median_lt": med_lt,
            "tanaka_rel": float(np.median(tan) / med_lt) if med_lt > 0 else math.inf}


def _check_occupation(cfg, x=1.0, t=0.5, **_):
    r = identity_errors(cfg.grid.dt, cfg.convergence.identity_paths, cfg.run.master_seed, x, t,
                        cfg.run.workers)
    return r["occupation_rel_err"] < 0.01, r


def _check_tanaka(cfg, x=1.0, t=0.5, **_):
    r = identity_errors(cfg.grid.dt, cfg.convergence.identity_paths, cfg.run.master_seed, x, t,
                        cfg.run.workers)
    return r["tanaka_rel"] < 0.05, r


def sx_identity(cfg, x=1.0):
    """``S_x`` samples against total-mass samples; returns the distance and mean stability."""
    n, seed = cfg.run.n_paths, cfg.run.master_seed
    ens = exploration_ensemble(_params(cfg), [x], [0.0], n, cfg.grid.dt, seed,
                               channel=CH_EXPLORE, levels=_levels(cfg), s_max=cfg.grid.s_max,
                               workers=cfg.run.workers)
    grid = TimeGrid.from_horizon(cfg.grid.T_max, cfg.grid.dt)
    fel = feller_ensemble(_params(cfg), x, [0.0], n, grid, seed, channel=CH_FELLER,
                          workers=cfg.run.workers)
    S = ens.S[:, 0]
    half = n // 2
    m1, s1 = mean_stderr(S[:half])
    m2, s2 = mean_stderr(S[half:])
    z_halves = (m1 - m2) / math.hypot(s1, s2)
    d = ks_statistic(S, fel.total_mass)
    return {"x": x, "d_stat": d, "mean_S": float(S.mean()),
            "mean_mass": float(np.mean(fel.total_mass)),
            "mean_halves": [m1, m2], "z_halves": z_halves,
            "alive_at_T_max": int(np.isnan(fel.extinction_time).sum())}


def _check_sx(cfg, x=1.0, **_):
    r = sx_identity(cfg, x)
    ok = (r["d_stat"] < SX_KS_MAX and abs(r["z_halves"]) < 3.0 and r["alive_at_T_max"] == 0
          and math.isfinite(r["mean_S"]))
    return ok, r


def _check_field(cfg, **_):
    from .feller import simulate_field

    grid = TimeGrid.from_horizon(max(cfg.probes.t), cfg.grid.dt)
    xs = list(cfg.probes.x)
    bad = []
    for i in range(cfg.run.n_paths):
        st = [RngStream(cfg.run.master_seed, i, CH_FIELD + k) for k in range(len(xs))]
        ok, where = monotonicity_check(simulate_field(_params(cfg), xs, grid, st))
        if not ok:
            bad.append({"stream_id": i, "x_index": where[0], "t_index": where[1]})
    return not bad, {"fields": cfg.run.n_paths, "violations": bad[:20],
                     "n_violations": len(bad)}


LEMMAS = {
    "chapman-kolmogorov": _check_superposition,
    "delmas-chop": _check_chop,
    "comparison": _check_comparison,
    "rayleigh": _check_rayleigh,
    "girsanov-unit-mean": _check_girsanov,
    "occupation": _check_occupation,
    "tanaka": _check_tanaka,
    "sx-identity": _check_sx,
    "monotone-field": _check_field,
}


def verify_lemma(name: str, cfg: ExperimentConfig, **kwargs) -> LemmaReport:
    if name not in LEMMAS:
        raise KeyError(f"unknown check {name!r}; valid names: {', '.join(sorted(LEMMAS))}")
    cfg.validate()
    ok, details = LEMMAS[name](cfg, **kwargs)
    return LemmaReport(name, bool(ok), details)


def write_lemma_output(report: LemmaReport, cfg: ExperimentConfig, out_dir) -> Path:
    return rio.write_json(Path(out_dir) / f"lemma_{report.name}.json", report.to_dict(),
                          rio.metadata(cfg.config_hash()))


# convergence study


@dataclass
class ConvergenceReport:
    rows: list
    orders: dict
    order_stderr: dict
    passed: bool

    def header(self) -> list[str]:
        return list(self.rows[0].keys())


def fit_order(dts, errors, stderr=None) -> tuple[float, float]:
    """Slope of ``log |error|`` against ``log dt`` and its standard error.

    With ``stderr`` given the fit is weighted by ``(error / stderr)^2`` (delta
    method on the log); otherwise the residual scatter sets the error, which
    is 0 for two points.
    """
    e = np.abs(np.asarray(errors, dtype=float))
    d = np.asarray(dts, dtype=float)
    if e.size < 2 or np.any(e == 0):
        return math.nan, math.inf
    x, y = np.log(d), np.log(e)
    if stderr is None:
        slope, icpt = np.polyfit(x, y, 1)
        dof = x.size - 2
        s2 = float(np.sum((y - slope * x - icpt) ** 2) / dof) if dof > 0 else 0.0
        return float(slope), math.sqrt(s2 / np.sum((x - x.mean()) ** 2))
    w = (e / np.asarray(stderr, dtype=float)) ** 2
    xm, ym = np.dot(w, x) / w.sum(), np.dot(w, y) / w.sum()
    sxx = np.dot(w, (x - xm) ** 2)
    return float(np.dot(w, (x - xm) * (y - ym)) / sxx), float(1.0 / math.sqrt(sxx))


MIN_ORDER = 0.5


def convergence_study(cfg: ExperimentConfig, dts=None) -> ConvergenceReport:
    """Profile-mean bias (critical case, exact value ``x``) and identity errors per ``dt``.

    ``eps`` and ``dy`` follow each ``dt`` with the default ratios. Passes when
    the identity errors shrink with fitted order at least 0.5 and the
    profile-mean bias is consistent with that order (slope + 2 se >= 0.5; the
    bias at fine rungs is comparable to Monte Carlo noise).
    """
    c = cfg.convergence
    dts = validate_ladder(list(dts if dts is not None else c.ladder_dts))
    cfg.validate()
    rows = []
    for dt in dts:
        ens = exploration_ensemble(ModelParams(0.0, 0.0), [c.ladder_x], [c.ladder_t],
                                   c.ladder_paths, dt, cfg.run.master_seed, channel=CH_EXPLORE,
                                   levels=LevelGrid.for_dt(dt), s_max=1e12,
                                   skip_level=c.ladder_t + 1.0, workers=cfg.run.workers)
        m, se = mean_stderr(ens.values[:, 0, 0])
        ide = identity_errors(dt, c.identity_paths, cfg.run.master_seed, c.ladder_x, c.ladder_t,
                              cfg.run.workers)
        lv = LevelGrid.for_dt(dt)
        rows.append({"dt": dt, "dy": lv.dy, "eps": lv.eps, "profile_mean": m,
                     "profile_bias": m - c.ladder_x, "stderr": se,
                     "occupation_rel_err": ide["occupation_rel_err"],
                     "tanaka_residual": ide["tanaka_residual"],
                     "tanaka_rel": ide["tanaka_rel"]})
    d = [r["dt"] for r in rows]
    orders, ses = {}, {}
    orders["profile_bias"], ses["profile_bias"] = fit_order(
        d, [r["profile_bias"] for r in rows], [r["stderr"] for r in rows])
    for k in ("occupation_rel_err", "tanaka_rel"):
        orders[k], ses[k] = fit_order(d, [r[k] for r in rows])
    bias_ok = (not math.isfinite(orders["profile_bias"])
               or orders["profile_bias"] + 2.0 * ses["profile_bias"] >= MIN_ORDER)
    passed = (bias_ok and orders["occupation_rel_err"] >= MIN_ORDER
              and orders["tanaka_rel"] >= MIN_ORDER)
    return ConvergenceReport(rows, orders, ses, passed)


def write_convergence_output(report: ConvergenceReport, cfg: ExperimentConfig, out_dir):
    out = Path(out_dir)
    meta = rio.metadata(cfg.config_hash(), **{f"order_{k}": v for k, v in report.orders.items()})
    hdr = report.header()
    return [rio.write_csv(out / "convergence.csv", hdr, [[r[k] for k in hdr] for r in report.rows],
                          meta),
            rio.write_json(out / "convergence.json",
                           {"rows": report.rows, "orders": report.orders,
                            "order_stderr": report.order_stderr,
                            "passed": report.passed}, meta)]
