"""Profile-mean bias against dt for the critical and the pure-competition cases.

The exact mean of L_{S_x}(t) is x when theta = gamma = 0; for theta = 0,
gamma > 0 the reference is the Feller mean at the same dt (Euler scheme,
bias O(dt)), so the difference isolates the exploration side.

    python scripts/bias_scan.py --n 40000 --x 0.5 --t 0.25
"""

import argparse

import numpy as np

from rayknight.exploration import LevelGrid
from rayknight.feller import ModelParams
from rayknight.parallel import exploration_ensemble, feller_ensemble
from rayknight.sde_core import TimeGrid
from rayknight.stats import mean_stderr


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=40_000)
    ap.add_argument("--x", type=float, default=0.5)
    ap.add_argument("--t", type=float, default=0.25)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--log2-dt", type=int, nargs="+", default=[-10, -12, -14])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=None)
    a = ap.parse_args()

    print("case      dt        mean_profile  reference   bias      stderr")
    for k in a.log2_dt:
        dt = 2.0 ** k
        lv = LevelGrid.for_dt(dt)
        e = exploration_ensemble(ModelParams(0, 0), [a.x], [a.t], a.n, dt, a.seed, levels=lv,
                                 s_max=1e12, skip_level=a.t + 1.0, workers=a.workers)
        m, se = mean_stderr(e.values[:, 0, 0])
        print(f"critical  2^{k:<4}    {m:.5f}      {a.x:.5f}     {m - a.x:+.5f}  {se:.5f}")

        p = ModelParams(0.0, a.gamma)
        e = exploration_ensemble(p, [a.x], [a.t], a.n, dt, a.seed, levels=lv, workers=a.workers)
        f = feller_ensemble(p, a.x, [a.t], a.n, TimeGrid.from_horizon(60.0, dt), a.seed,
                            channel=100, workers=a.workers)
        m, se = mean_stderr(e.values[:, 0, 0])
        mf, sf = mean_stderr(f.values[:, 0])
        print(f"gamma={a.gamma:<3g} 2^{k:<4}    {m:.5f}      {mf:.5f}     {m - mf:+.5f}  "
              f"{float(np.hypot(se, sf)):.5f}")


if __name__ == "__main__":
    main()
