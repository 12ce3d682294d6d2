"""Convergence study with a custom ladder; writes convergence.csv/json.

    python scripts/convergence.py --log2-dt -10 -12 -14 --paths 4000 --out conv/
"""

import argparse
from pathlib import Path

from rayknight import experiments as ex
from rayknight.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--log2-dt", type=int, nargs="+", default=[-14, -15, -16])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--identity-paths", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("rayknight_out"))
    a = ap.parse_args()
    cfg = ExperimentConfig().with_overrides({
        "ladder_dts": sorted((2.0 ** k for k in a.log2_dt), reverse=True),
        "ladder_paths": a.paths, "identity_paths": a.identity_paths, "workers": a.workers,
    }).validate()
    rep = ex.convergence_study(cfg)
    ex.write_convergence_output(rep, cfg, a.out)
    for r in rep.rows:
        print(" ".join(f"{k}={r[k]:.4g}" for k in rep.header()))
    for k, v in rep.orders.items():
        print(f"order {k}: {v:.3f} +- {rep.order_stderr[k]:.3f}")
    print("PASS" if rep.passed else "FAIL")


if __name__ == "__main__":
    main()
