"""Run verify-theorem and every named check with one config; print a summary table.

    python scripts/run_all_checks.py --config my.yaml --out results/
"""

import argparse
import json
import time
from pathlib import Path

from rayknight import experiments as ex
from rayknight.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path)
    ap.add_argument("--out", type=Path, default=Path("rayknight_out"))
    ap.add_argument("--skip", nargs="*", default=[], help="check names to skip")
    args = ap.parse_args()
    cfg = (ExperimentConfig.load(args.config) if args.config else ExperimentConfig()).validate()

    rows = []
    t0 = time.perf_counter()
    rep = ex.verify_theorem(cfg)
    ex.write_theorem_outputs(rep, cfg, args.out / "theorem")
    rows.append(("theorem", rep.passed, time.perf_counter() - t0))
    for name in sorted(ex.LEMMAS):
        if name in args.skip:
            continue
        t0 = time.perf_counter()
        lr = ex.verify_lemma(name, cfg)
        ex.write_lemma_output(lr, cfg, args.out / "lemmas")
        rows.append((name, lr.passed, time.perf_counter() - t0))
    for name, ok, sec in rows:
        print(f"{name:<20} {'PASS' if ok else 'FAIL'} {sec:8.1f}s")
    (args.out / "summary.json").write_text(json.dumps(
        [{"check": n, "passed": ok, "seconds": s} for n, ok, s in rows], indent=2))


if __name__ == "__main__":
    main()
