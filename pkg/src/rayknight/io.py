"""Report files: RFC-4180 CSV, JSON with stable key order, optional SVG plots.

Every file carries the config hash and the package version. CSV files start
with one ``#`` metadata line (read them with ``comment="#"``); JSON files have
a top-level ``meta`` object.
"""

from __future__ import annotations

import csv
import io
import json
import math
import subprocess
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__version__ = "0.1.0"


@lru_cache(maxsize=1)
def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5, check=True)
        desc = out.stdout.strip()
        if desc:
            return f"rayknight-{__version__}+g{desc}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"rayknight-{__version__}"


def metadata(config_hash: str, **extra) -> dict:
    meta = {"config_hash": config_hash, "version": version_string()}
    meta.update(extra)
    return meta


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps_json(payload: dict, meta: dict) -> str:
    return json.dumps({"meta": _plain(meta), **_plain(payload)}, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, payload: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(payload, meta))
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def dumps_csv(header: Sequence[str], rows: Iterable[Sequence], meta: dict) -> str:
    buf = io.StringIO(newline="")
    line = " ".join(f"{k}={_fmt(v)}" for k, v in sorted(meta.items()))
    buf.write(f"# {line}\r\n")
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence],
              meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(dumps_csv(header, rows, meta))
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    """Inverse of :func:`write_csv`: ``(meta, header, rows)`` with string cells."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        meta = dict(kv.split("=", 1) for kv in first[2:].split(" ") if kv)
        rows = list(csv.reader(fh))
    return meta, rows[0], rows[1:]


def write_weighted_csv(path: str | Path, values, weights, ess: float, meta: dict,
                       value_name: str = "value") -> Path:
    """Weighted samples; the effective sample size goes into the metadata line."""
    meta = dict(meta, ess=float(ess))
    rows = zip(range(len(weights)), values, weights)
    return write_csv(path, ["stream_id", value_name, "weight"], rows, meta)


def write_cdf_svg(path: str | Path, a, b, label_a: str, label_b: str, title: str) -> Path:
    """Empirical CDF overlay; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for v, lab in ((a, label_a), (b, label_b)):
        s = np.sort(np.asarray(v, dtype=float))
        ax.step(s, np.arange(1, s.size + 1) / s.size, where="post", label=lab, lw=1)
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps the SVG byte-stable
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
