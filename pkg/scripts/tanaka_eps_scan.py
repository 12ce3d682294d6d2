"""Tanaka residual and occupation error against dt and the kernel width.

Shows that the Tanaka residual barely depends on eps: it is dominated by the
discrete stochastic integral, not by the local-time estimator.

    python scripts/tanaka_eps_scan.py --n 1000
"""

import argparse
import math
from functools import partial

import numpy as np

from rayknight.exploration import (LevelGrid, occupation_error, simulate_exploration,
                                   tanaka_residual)
from rayknight.feller import ModelParams
from rayknight.parallel import map_ordered
from rayknight.sde_core import RngStream


def one(i, dt, lv, x, t, seed):
    r = simulate_exploration(ModelParams(0, 0), None, x, None, dt, lv, RngStream(seed, i, 33),
                             s_max=1e12, skip_level=t + 1.0)
    return occupation_error(r, t), tanaka_residual(r, t), r.local_time_at_S.at(t)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--x", type=float, default=1.0)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--log2-dt", type=int, nargs="+", default=[-12, -14])
    ap.add_argument("--eps-mult", type=float, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--workers", type=int, default=None)
    a = ap.parse_args()

    print("dt       eps/sqrt(dt)  occupation  tanaka/median_L")
    for k in a.log2_dt:
        dt = 2.0 ** k
        for c in a.eps_mult:
            eps = c * math.sqrt(dt)
            lv = LevelGrid(dy=eps / 4, eps=eps)
            out = np.array(map_ordered(partial(one, dt=dt, lv=lv, x=a.x, t=a.t, seed=a.seed),
                                       list(range(a.n)), a.workers))
            occ, tan, lt = np.median(out, axis=0)
            print(f"2^{k:<5}  {c:<12g}  {occ:.2e}    {tan / lt:.4f}")


if __name__ == "__main__":
    main()
