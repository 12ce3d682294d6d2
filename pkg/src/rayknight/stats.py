"""Two-sample comparisons and ensemble summaries."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import kolmogorov

MIN_SAMPLES = 10


class InsufficientSamplesError(ValueError):
    pass


@dataclass
class SampleSet:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size < 1:
            raise ValueError("a sample set needs at least one value")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"sample set {self.label!r} contains non-finite values")

    @property
    def n(self) -> int:
        return int(self.values.size)


@dataclass
class KSReport:
    d_stat: float
    p_value: float
    n_a: int
    n_b: int
    passed: bool
    label_a: str = ""
    label_b: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MomentReport:
    mean_a: float
    mean_b: float
    var_a: float
    var_b: float
    stderr_a: float
    stderr_b: float
    z_scores: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _as_set(a) -> SampleSet:
    return a if isinstance(a, SampleSet) else SampleSet(a)


def _check_sizes(a: SampleSet, b: SampleSet):
    if a.n < MIN_SAMPLES or b.n < MIN_SAMPLES:
        raise InsufficientSamplesError(
            f"insufficient samples: need >= {MIN_SAMPLES} per side, got {a.n} and {b.n}")


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Exact sup distance between the two empirical CDFs (ties handled)."""
    a = np.sort(a)
    b = np.sort(b)
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_pvalue(d: float, n_a: int, n_b: int) -> float:
    """Asymptotic two-sample p-value with the Stephens effective-size correction."""
    en = math.sqrt(n_a * n_b / (n_a + n_b))
    return float(min(1.0, max(0.0, kolmogorov((en + 0.12 + 0.11 / en) * d))))


def ks_two_sample(a, b, alpha: float = 0.01) -> KSReport:
    a, b = _as_set(a), _as_set(b)
    _check_sizes(a, b)
    d = ks_statistic(a.values, b.values)
    p = ks_pvalue(d, a.n, b.n)
    return KSReport(d, p, a.n, b.n, p > alpha, a.label, b.label)


def moment_compare(a, b) -> MomentReport:
    """Means and variances with standard errors; z-scores of both differences.

    The variance z-score uses the large-sample variance of the sample variance,
    ``(m4 - s^4) / n``.
    """
    a, b = _as_set(a), _as_set(b)
    _check_sizes(a, b)
    ma, mb = a.values.mean(), b.values.mean()
    va, vb = a.values.var(ddof=1), b.values.var(ddof=1)
    sa, sb = math.sqrt(va / a.n), math.sqrt(vb / b.n)
    se = math.hypot(sa, sb)
    z_mean = 0.0 if ma == mb else ((ma - mb) / se if se > 0 else math.copysign(math.inf, ma - mb))
    m4a = np.mean((a.values - ma) ** 4)
    m4b = np.mean((b.values - mb) ** 4)
    sev = math.sqrt(max(m4a - va * va, 0.0) / a.n + max(m4b - vb * vb, 0.0) / b.n)
    z_var = 0.0 if va == vb else ((va - vb) / sev if sev > 0 else math.copysign(math.inf, va - vb))
    return MomentReport(float(ma), float(mb), float(va), float(vb), sa, sb,
                        {"mean": float(z_mean), "var": float(z_var)})


def mean_stderr(v) -> tuple[float, float]:
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def holm(p_values, alpha: float = 0.01) -> np.ndarray:
    """Holm step-down: boolean array of rejected hypotheses at family-wise level ``alpha``."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    reject = np.zeros(m, dtype=bool)
    for rank, i in enumerate(order):
        if p[i] <= alpha / (m - rank):
            reject[i] = True
        else:
            break
    return reject


def qq_points(a, b, n_quantiles: int = 99) -> np.ndarray:
    q = np.linspace(0.0, 1.0, n_quantiles + 2)[1:-1]
    return np.column_stack([q, np.quantile(_as_set(a).values, q), np.quantile(_as_set(b).values, q)])


def monotonicity_check(field) -> tuple[bool, tuple[int, int] | None]:
    """Exact audit that consecutive field paths are pointwise ordered.

    Returns ``(True, None)`` or ``(False, (x_index, t_index))`` of the first
    violation, where ``x_index`` is the upper path of the offending pair.
    """
    m = field.matrix() if hasattr(field, "matrix") else np.asarray(field, dtype=float)
    if m.size == 0:
        raise ValueError("empty field")
    bad = np.diff(m, axis=0) < 0
    if not bad.any():
        return True, None
    i, k = np.argwhere(bad)[0]
    return False, (int(i) + 1, int(k))
