"""Acceptance criteria at full scale.

Each test records one PASS/FAIL line (printed in the terminal summary) before
asserting. Run just this module with ``pytest -m acceptance -s``.
"""

import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rayknight import experiments as ex
from rayknight.config import ExperimentConfig
from rayknight.exploration import LevelGrid, chop_above_K, simulate_exploration
from rayknight.feller import ModelParams
from rayknight.parallel import exploration_ensemble, feller_ensemble, field_ensemble
from rayknight.sde_core import RngStream, TimeGrid
from rayknight.stats import mean_stderr

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

N = 10_000
GIRSANOV_DT = 2.0 ** -10


def record(k: int, ok: bool, text: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k:>2}: {text}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return ok


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig().validate()


@pytest.fixture(scope="session")
def convergence(cfg):
    # independent seed, so the bias bound used in criterion 1 is not fitted to its own samples
    c = cfg.with_overrides({"master_seed": cfg.run.master_seed + 1, "identity_paths": 1000})
    return ex.convergence_study(c)


@pytest.fixture(scope="session")
def exploration(cfg):
    return ex.theorem_exploration(cfg)


@pytest.fixture(scope="session")
def theorem(cfg, exploration):
    return ex.verify_theorem(cfg, exploration=exploration)


def test_classical_ray_knight(cfg, convergence):
    x, ts = 1.0, [0.25, 0.5]
    row = next(r for r in convergence.rows if r["dt"] == cfg.grid.dt)
    bias_bound = abs(row["profile_bias"]) + 2 * row["stderr"]
    ens = exploration_ensemble(ModelParams(0, 0), [x], ts, N, cfg.grid.dt, cfg.run.master_seed,
                               channel=ex.CH_EXPLORE, levels=LevelGrid.for_dt(cfg.grid.dt),
                               s_max=1e12, skip_level=max(ts) + 1.0)
    ok, parts = True, []
    for j, t in enumerate(ts):
        v = ens.values[:, 0, j]
        m, se = mean_stderr(v)
        var_rel = v.var(ddof=1) / (4 * x * t) - 1
        good = abs(m - x) <= 3 * se + bias_bound and abs(var_rel) <= 0.10
        ok &= good
        parts.append(f"t={t}: mean {m:.4f} (se {se:.4f}), var/4xt-1 {var_rel:+.3f}")
    record(1, ok, f"critical profile moments, bias bound {bias_bound:.4f}; " + "; ".join(parts))
    assert ok


def test_main_theorem(cfg, theorem, exploration):
    worst = min(theorem.ks.values(), key=lambda r: r["p_value"])
    neg = ex.verify_theorem(cfg, gamma_feller=3.0, keep_samples=False, exploration=exploration)
    ok = not theorem.holm_rejected and not neg.passed and len(theorem.ks) == 9
    record(2, ok, f"9 marginals, Holm rejections {theorem.holm_rejected}, min p "
                  f"{worst['p_value']:.4f}; negative control (gamma 3) rejected "
                  f"{len(neg.holm_rejected)}/9")
    assert not theorem.holm_rejected
    assert not neg.passed and neg.holm_rejected


def test_sx_total_mass(theorem):
    s = theorem.sx["x=1"]
    S, _ = theorem.samples["S,x=1"]
    half = S.size // 2
    (m1, s1), (m2, s2) = mean_stderr(S[:half]), mean_stderr(S[half:])
    z = (m1 - m2) / math.hypot(s1, s2)
    ok = s["d_stat"] < 0.05 and math.isfinite(S.mean()) and abs(z) < 3
    record(3, ok, f"x=1: KS distance {s['d_stat']:.4f}, mean S {s['mean_S']:.4f} vs mass "
                  f"{s['mean_mass']:.4f}, halves z {z:+.2f}")
    assert ok


def test_superposition(cfg):
    rep = ex.verify_lemma("chapman-kolmogorov", cfg)
    record(4, rep.passed, f"x=y=1, t=0.5: KS p {rep.details['p_value']:.4f}, "
                          f"D {rep.details['d_stat']:.4f}")
    assert rep.details["p_value"] > 0.01


def test_chopping(cfg):
    rep = ex.verify_lemma("delmas-chop", cfg)
    record(5, rep.passed, f"K=1, x=1, t=0.5: KS p {rep.details['p_value']:.4f}")
    assert rep.details["p_value"] > 0.01


def test_comparison(cfg):
    rep = ex.verify_lemma("comparison", cfg, n_pairs=1000)
    record(6, rep.passed, f"{rep.details['violations']} violations over "
                          f"{rep.details['pairs']} pairs ({rep.details['points']} points)")
    assert rep.details["violations"] == 0


def test_rayleigh(cfg):
    rep = ex.verify_lemma("rayleigh", cfg)
    d = rep.details
    record(7, rep.passed, f"P(K1 > 1) {d['p_exceed_1']:.4f} vs {d['target']:.4f}, "
                          f"tail slope {d['tail_slope']:.4f}")
    assert abs(d["p_exceed_1"] - math.exp(-0.5)) <= 0.015
    assert abs(d["tail_slope"] + 0.5) <= 0.05


def test_girsanov_unit_mean(cfg):
    c = cfg.with_overrides({"n_paths": 100_000})
    rep = ex.verify_lemma("girsanov-unit-mean", c, dt=GIRSANOV_DT)
    d = rep.details
    record(8, rep.passed, f"N=1e5, dt=2^-10: mean {d['mean']:.4f} (se {d['stderr']:.4f}), "
                          f"ess {d['ess']:.0f}")
    assert abs(d["mean"] - 1) <= 3 * d["stderr"]


def test_identity_suite(cfg, convergence):
    row = next(r for r in convergence.rows if r["dt"] == cfg.grid.dt)
    o = convergence.orders
    checks = {
        "occupation < 1%": row["occupation_rel_err"] < 0.01,
        "tanaka < 5%": row["tanaka_rel"] < 0.05,
        "occupation order >= 0.5": o["occupation_rel_err"] >= 0.5,
        "tanaka order >= 0.5": o["tanaka_rel"] >= 0.5,
    }
    failed = [k for k, v in checks.items() if not v]
    record(9, not failed,
           f"default dt: occupation {row['occupation_rel_err']:.2e}, tanaka "
           f"{row['tanaka_rel']:.3%}; orders occupation {o['occupation_rel_err']:.2f}, "
           f"tanaka {o['tanaka_rel']:.2f}, profile bias {o['profile_bias']:.2f}"
           + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed


def test_exact_invariants(cfg):
    dt = cfg.grid.dt
    seed = cfg.run.master_seed
    lv = LevelGrid.for_dt(dt)
    p = ModelParams(1, 1)
    problems = []

    rep = ex.verify_lemma("monotone-field", cfg.with_overrides({"n_paths": 200}))
    if not rep.passed:
        problems.append(f"field monotonicity {rep.details['n_violations']}")

    for i in range(100):
        r = simulate_exploration(p, None, [0.5, 1.0], None, dt, lv, RngStream(seed, i, 50))
        for snap in r.snapshots:
            if np.any(snap.profile()[snap.levels > snap.max_level] != 0):
                problems.append(f"profile support, stream {i}")

    for i in range(100):
        r = simulate_exploration(ModelParams(0, 0), None, 1.0, None, dt, lv,
                                 RngStream(seed, i, 51), s_max=1e12, skip_level=1.25)
        c = chop_above_K(r, 1.0)
        n = c.local_time.accumulated.size
        if not (np.array_equal(c.local_time.accumulated, r.local_time.accumulated[:n])
                and np.all(c.positions <= 1.0)
                and c.local_time_at_S.boundary_zero == r.local_time_at_S.boundary_zero):
            problems.append(f"chop conservation, stream {i}")

    grid = TimeGrid.from_horizon(1.0, dt)
    runs = []
    for w in (1, 2):
        e = exploration_ensemble(p, [0.5, 1.0], [0.25, 0.5], 200, dt, seed, workers=w)
        f = feller_ensemble(p, 1.0, [0.5], 200, grid, seed, workers=w)
        fl = field_ensemble(p, [0.5, 1.0], [0.5], 50, grid, seed, workers=w)
        runs.append([e.values, e.S, f.values, f.total_mass, fl])
    for a, b in zip(*runs):
        if not np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True):
            problems.append("worker-count reproducibility")

    record(10, not problems, "field monotonicity, profile support, chop conservation, "
                             "worker reproducibility" + (f"; broken: {problems[:5]}" if problems
                                                          else ": all exact"))
    assert not problems
