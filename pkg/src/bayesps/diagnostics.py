"""Balance and positivity diagnostics for propensity-score weights.

Standardized differences are reported in percent::

    100 * (mean_w(C | X=1) - mean_w(C | X=0)) / sqrt((s1^2 + s0^2) / 2)

where the numerator uses weighted arm means and the denominator the
*unweighted* arm variances (Bernoulli ``p (1 - p)`` for binary columns,
sample variance otherwise), so the scale is fixed across propensity draws.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset
from .treatment import PropensityDraws

BALANCE_THRESHOLD = 10.0


def ate_weights(d: Dataset, pi) -> np.ndarray:
    """``X / pi + (1 - X) / (1 - pi)``; works row-wise for a (K, n) array."""
    pi = np.asarray(pi, dtype=float)
    x = d.treatment
    return x / pi + (1 - x) / (1 - pi)


def _pooled_sd(d: Dataset) -> np.ndarray:
    x = d.treatment.astype(bool)
    c = d.confounders
    out = np.empty(d.p)
    for j, col in enumerate(d.columns):
        v1, v0 = c[x, j], c[~x, j]
        if col.kind in ("binary", "categorical"):
            s1 = v1.mean() * (1 - v1.mean())
            s0 = v0.mean() * (1 - v0.mean())
        else:
            s1 = v1.var(ddof=1) if v1.size > 1 else 0.0
            s0 = v0.var(ddof=1) if v0.size > 1 else 0.0
        out[j] = np.sqrt((s1 + s0) / 2)
    return out


def _std_diff_rows(d: Dataset, w: np.ndarray) -> np.ndarray:
    # w: (K, n) -> (K, p)
    x = d.treatment
    w1 = w * x
    w0 = w * (1 - x)
    m1 = (w1 @ d.confounders) / w1.sum(axis=1, keepdims=True)
    m0 = (w0 @ d.confounders) / w0.sum(axis=1, keepdims=True)
    sd = _pooled_sd(d)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 100.0 * (m1 - m0) / sd
    out[:, sd <= 0] = np.nan
    return out


def weighted_std_diff(d: Dataset, w) -> np.ndarray:
    """Percent standardized difference per confounder (NaN where the pooled SD is 0)."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return _std_diff_rows(d, w[None, :])[0]


@dataclass(frozen=True)
class BalanceRow:
    name: str
    unweighted: float
    mean: float
    lower: float
    upper: float
    flagged: bool


@dataclass
class BalanceReport:
    rows: list[BalanceRow]

    @property
    def acceptable(self) -> bool:
        return not any(r.flagged for r in self.rows)

    def to_csv(self, path, order: list[str] | None = None) -> None:
        """Tidy table sorted by posterior mean (or by an explicit name order)."""
        rows = list(self.rows)
        if order is not None:
            rank = {nm: i for i, nm in enumerate(order)}
            rows.sort(key=lambda r: rank.get(r.name, len(rank)))
        else:
            rows.sort(key=lambda r: (np.isnan(r.mean), r.mean))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["confounder", "unweighted", "mean", "lo", "hi", "flag"])
            for r in rows:
                w.writerow([r.name, _fmt(r.unweighted), _fmt(r.mean), _fmt(r.lower),
                            _fmt(r.upper), int(r.flagged)])


def _fmt(v: float) -> str:
    return "NA" if not np.isfinite(v) else repr(float(v))


def balance_posterior(d: Dataset, pd: PropensityDraws | np.ndarray, level: float = 0.95,
                      chunk: int = 250) -> BalanceReport:
    """Distribution of weighted standardized differences across propensity draws."""
    pi = pd.pi if isinstance(pd, PropensityDraws) else np.atleast_2d(np.asarray(pd, dtype=float))
    parts = [_std_diff_rows(d, ate_weights(d, pi[s:s + chunk])) for s in range(0, pi.shape[0], chunk)]
    sd = np.vstack(parts)
    base = weighted_std_diff(d, np.ones(d.n))
    alpha = (1 - level) / 2
    rows = []
    for j, name in enumerate(d.names):
        col = sd[:, j]
        if np.all(np.isnan(col)):
            rows.append(BalanceRow(name, float(base[j]), np.nan, np.nan, np.nan, False))
            continue
        mean = float(col.mean())
        lo, hi = np.quantile(col, [alpha, 1 - alpha])
        rows.append(BalanceRow(name, float(base[j]), mean, float(lo), float(hi),
                               abs(mean) > BALANCE_THRESHOLD))
    return BalanceReport(rows)


@dataclass(frozen=True)
class WeightSummary:
    mean: float
    max: float
    quantiles: dict
    treated_quantiles: dict | None
    control_quantiles: dict | None
    threshold: float
    warning: bool

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


_QS = (0.0, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0)


def _quantiles(w):
    return {f"q{int(round(q * 100)):02d}": float(v) for q, v in zip(_QS, np.quantile(w, _QS))}


def weight_summary(w, treatment=None, threshold: float = 50.0) -> WeightSummary:
    """Mean and max weight, quantiles overall and by arm, and a large-weight flag."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("no weights")
    tq = cq = None
    if treatment is not None:
        x = np.asarray(treatment).astype(bool)
        tq = _quantiles(w[x]) if x.any() else None
        cq = _quantiles(w[~x]) if (~x).any() else None
    mx = float(w.max())
    return WeightSummary(float(w.mean()), mx, _quantiles(w), tq, cq, threshold, mx > threshold)


def posterior_mean_weights(d: Dataset, pd: PropensityDraws) -> np.ndarray:
    """Per-subject average of the weights implied by each propensity draw."""
    return ate_weights(d, pd.pi).mean(axis=0)
