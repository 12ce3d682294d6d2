"""Command line entry point: ``rayknight {verify-theorem, verify-lemma, convergence-study}``.

Exit codes: 0 pass, 1 statistical failure, 2 validation or usage error,
3 runtime error. Every config key can be overridden by a flag of the same
name (``--n_paths 2000`` or ``--n-paths 2000``); ``RAYKNIGHT_OUTPUT_DIR`` and
``RAYKNIGHT_WORKERS`` override the file, flags override both.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from . import io as rio
from .config import ConfigError, ExperimentConfig, flat_keys
from .exploration import SxNotReachedError
from .sde_core import GridSanityError
from .stats import InsufficientSamplesError

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("rayknight")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="YAML config file")
    g = p.add_argument_group("config overrides")
    for key, (_, default) in flat_keys().items():
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        if key == "z":
            g.add_argument(*flags, dest=key, type=json.loads, default=None,
                           help="environment table as JSON, e.g. '{\"dt\": 0.1, \"values\": [..]}'")
        elif isinstance(default, bool):
            g.add_argument(*flags, dest=key, type=_bool, default=None, metavar="BOOL")
        elif isinstance(default, list):
            g.add_argument(*flags, dest=key, type=float, nargs="+", default=None)
        elif isinstance(default, int):
            g.add_argument(*flags, dest=key, type=int, default=None)
        elif isinstance(default, str):
            g.add_argument(*flags, dest=key, type=str, default=None)
        else:
            g.add_argument(*flags, dest=key, type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rayknight", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("verify-theorem", help="profile marginals vs Feller marginals")
    t.add_argument("--gamma-feller", type=float, default=None,
                   help="competition rate on the Feller side only (negative control)")
    _add_config_flags(t)

    lm = sub.add_parser("verify-lemma", help="run one named check")
    lm.add_argument("name", choices=sorted(ex.LEMMAS), metavar="NAME",
                    help="one of: " + ", ".join(sorted(ex.LEMMAS)))
    _add_config_flags(lm)

    c = sub.add_parser("convergence-study", help="bias and identity errors against dt")
    c.add_argument("--ladder", type=float, nargs="+", default=None,
                   help="dt values (at least 3); overrides ladder_dts")
    _add_config_flags(c)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_env()
    over = {k: getattr(args, k, None) for k in flat_keys()}
    if getattr(args, "ladder", None) is not None:
        over["ladder_dts"] = args.ladder
    return cfg.with_overrides(over).validate()


def _run(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.run.output_dir)
    if args.command == "verify-theorem":
        rep = ex.verify_theorem(cfg, gamma_feller=args.gamma_feller)
        ex.write_theorem_outputs(rep, cfg, out)
        for lab, r in rep.ks.items():
            log.info("%-14s D=%.4f p=%.4f", lab, r["d_stat"], r["p_value"])
        for f in rep.failures:
            print(f"FAIL {f['test']} {f['marginal']}", file=sys.stderr)
        ok = rep.passed
    elif args.command == "verify-lemma":
        rep = ex.verify_lemma(args.name, cfg)
        ex.write_lemma_output(rep, cfg, out)
        ok = rep.passed
        if not ok:
            rio.write_json(out / "manifest.json",
                           {"passed": False, "failures": [{"check": rep.name,
                                                           "details": rep.details}]},
                           rio.metadata(cfg.config_hash()))
    else:
        rep = ex.convergence_study(cfg)
        ex.write_convergence_output(rep, cfg, out)
        for k, v in rep.orders.items():
            log.info("order %-20s %.3f +- %.3f", k, v, rep.order_stderr[k])
        ok = rep.passed
    print(f"{args.command}: {'PASS' if ok else 'FAIL'} (outputs in {out})")
    return EXIT_PASS if ok else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, InsufficientSamplesError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SxNotReachedError, GridSanityError, RuntimeError, FloatingPointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
