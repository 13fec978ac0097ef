"""Non-Bayesian comparators: naive difference, IPW with sandwich SE, bootstrapped IPW."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .treatment import _log1pexp, expit

Z95 = float(norm.ppf(0.975))


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimateWithCI:
    point: float
    se: float
    lower: float
    upper: float
    method: str
    failures: int = 0

    def as_dict(self) -> dict:
        return {"method": self.method, "point": self.point, "se": self.se,
                "ci": [self.lower, self.upper], "failures": self.failures}


def _normal_ci(point, se, method, failures=0) -> EstimateWithCI:
    return EstimateWithCI(float(point), float(se), float(point - Z95 * se),
                          float(point + Z95 * se), method, failures)


def _arms(d: Dataset):
    x, y = d.treatment, d.outcome
    n1 = x.sum()
    n0 = x.size - n1
    if n1 == 0 or n0 == 0:
        raise EstimationError("a treatment arm is empty")
    return x, y, n1, n0


def naive_estimate(d: Dataset) -> EstimateWithCI:
    """Unadjusted difference in event rates with a two-sample binomial SE."""
    x, y, n1, n0 = _arms(d)
    p1 = y[x == 1].mean()
    p0 = y[x == 0].mean()
    se = np.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0)
    return _normal_ci(p1 - p0, se, "naive")


def ipw_means(d: Dataset, pi) -> tuple[float, float]:
    x, y, _, _ = _arms(d)
    pi = np.asarray(pi, dtype=float)
    w1 = x / pi
    w0 = (1 - x) / (1 - pi)
    return float(w1 @ y / w1.sum()), float(w0 @ y / w0.sum())


def ipw_point(d: Dataset, pi) -> float:
    """Normalized (Hajek) inverse-probability-weighted difference in means."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (d.n,) or not np.all((pi > 0) & (pi < 1)):
        raise ValueError("pi must be a length-n vector inside (0, 1)")
    mu1, mu0 = ipw_means(d, pi)
    return mu1 - mu0


@dataclass
class LogisticFit:
    coef: np.ndarray
    converged: bool
    iterations: int
    fitted: np.ndarray
    separated: bool = False


def fit_logistic_mle(design: np.ndarray, x: np.ndarray, max_iter: int = 100,
                     tol: float = 1e-8) -> LogisticFit:
    """Newton-Raphson maximum likelihood for a logistic regression.

    Stops when the relative change in deviance drops below ``tol``.
    ``converged`` is False when the iteration limit is hit or a step is not
    finite.  ``separated`` marks fitted probabilities within 1e-10 of 0 or 1
    (quasi-complete separation: some coefficients run off to infinity and the
    iteration stops only because the likelihood has flattened).
    """
    design = np.asarray(design, dtype=float)
    x = np.asarray(x, dtype=float)
    beta = np.zeros(design.shape[1])
    eta = design @ beta
    dev = 2.0 * float(np.sum(_log1pexp(eta) - x * eta))
    for it in range(1, max_iter + 1):
        p = expit(eta)
        w = p * (1 - p)
        grad = design.T @ (x - p)
        hess = (design * w[:, None]).T @ design
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return LogisticFit(beta, False, it, p)
        beta = beta + step
        eta = design @ beta
        new_dev = 2.0 * float(np.sum(_log1pexp(eta) - x * eta))
        if abs(new_dev - dev) / (abs(new_dev) + 0.1) < tol:
            p = expit(eta)
            separated = bool(np.any((p < 1e-10) | (p > 1 - 1e-10)))
            return LogisticFit(beta, True, it, p, separated)
        dev = new_dev
    return LogisticFit(beta, False, max_iter, expit(eta))


def ipw_sandwich(d: Dataset, pi, design: np.ndarray | None = None,
                 rcond: float | None = None) -> EstimateWithCI:
    """Hajek IPW estimate with an M-estimation (sandwich) standard error.

    Stacked estimating equations for theta = (mu1, mu0, beta)::

        psi_mu1  = X (Y - mu1) / pi
        psi_mu0  = (1 - X)(Y - mu0) / (1 - pi)
        psi_beta = design_i (X - pi),      pi = expit(design_i beta)

    Var(theta) = A^{-1} B A^{-T} / n with A = -mean(d psi / d theta) and
    B = mean(psi psi^T); the ATE variance is c' Var c with c = (1, -1, 0, ...).
    A is block upper-triangular, so the mean rows of A^{-1} psi are the
    influence functions ``A_mm^{-1} (psi_mu - A_mb A_bb^{-1} psi_beta)``.

    With ``design=None`` the propensities are treated as known and only the
    first two equations are stacked.  By default a singular ``A_bb`` is an
    error; with ``rcond`` set, ``A_bb`` is pseudo-inverted at that relative
    cutoff, which drops coefficient directions carrying no information
    (separated or all-constant columns).
    """
    x, y, _, _ = _arms(d)
    pi = np.asarray(pi, dtype=float)
    n = d.n
    mu1, mu0 = ipw_means(d, pi)
    r1 = x * (y - mu1)
    r0 = (1 - x) * (y - mu0)
    psi_mu = np.vstack([r1 / pi, r0 / (1 - pi)])  # (2, n)
    a_mm = np.array([np.mean(x / pi), np.mean((1 - x) / (1 - pi))])
    if design is not None:
        design = np.asarray(design, dtype=float)
        psi_b = (design * (x - pi)[:, None]).T  # (k, n)
        # d(1/pi)/d beta = -(1 - pi)/pi * design ; d(1/(1-pi))/d beta = pi/(1 - pi) * design
        a_mb = np.vstack([design.T @ (r1 * (1 - pi) / pi) / n,
                          -(design.T @ (r0 * pi / (1 - pi))) / n])
        a_bb = (design * (pi * (1 - pi))[:, None]).T @ design / n
        if rcond is None:
            if not np.all(np.isfinite(a_bb)) or np.linalg.cond(a_bb) > 1e14:
                raise EstimationError("singular information matrix in sandwich variance")
            a_bb_inv = np.linalg.inv(a_bb)
        else:
            a_bb_inv = np.linalg.pinv(a_bb, rcond=rcond, hermitian=True)
        psi_mu = psi_mu - a_mb @ a_bb_inv @ psi_b
    if not np.all(a_mm > 0):
        raise EstimationError("singular information matrix in sandwich variance")
    infl = psi_mu / a_mm[:, None]
    ate_if = infl[0] - infl[1]
    var = float(ate_if @ ate_if) / n ** 2
    return _normal_ci(mu1 - mu0, np.sqrt(max(var, 0.0)), "ipw")


def ipw_mle(d: Dataset) -> EstimateWithCI:
    """Logistic MLE propensity scores, Hajek IPW, stacked sandwich SE.

    A separated fit is kept (its saturated scores give weights near 1) and
    its zero-information coefficient directions are projected out of the
    sandwich; a fit that does not converge is an error.
    """
    design = d.design()
    fit = fit_logistic_mle(design, d.treatment)
    if not fit.converged:
        raise EstimationError("logistic propensity model did not converge")
    pi = np.clip(fit.fitted, 1e-15, 1 - 1e-15)
    return ipw_sandwich(d, pi, design, rcond=1e-10 if fit.separated else None)


def _boot_one(d: Dataset, seed) -> float | None:
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, d.n, size=d.n)
    b = d.take(rows)
    x = b.treatment
    if x.sum() == 0 or x.sum() == b.n:
        return None
    fit = fit_logistic_mle(b.design(), x)
    if not fit.converged or fit.separated:
        return None
    return ipw_point(b, fit.fitted)


def bootstrap_ipw(d: Dataset, B: int = 2000, rng: np.random.Generator | None = None,
                  level: float = 0.95, workers: int = 1) -> EstimateWithCI:
    """Nonparametric bootstrap of the IPW estimate, refitting the propensity model.

    Replicates whose logistic fit does not converge (or that lose a treatment
    arm) are counted in ``failures`` and dropped.  The interval is the
    percentile interval of the surviving replicates.
    """
    if B < 100:
        raise ValueError("B must be >= 100")
    rng = rng if rng is not None else np.random.default_rng()
    seeds = np.random.SeedSequence(int(rng.integers(2**63))).spawn(B)
    full = fit_logistic_mle(d.design(), d.treatment)
    point = ipw_point(d, np.clip(full.fitted, 1e-15, 1 - 1e-15))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(lambda s: _boot_one(d, s), seeds))
    else:
        reps = [_boot_one(d, s) for s in seeds]
    ok = np.array([r for r in reps if r is not None])
    failures = B - ok.size
    if failures > B / 2:
        raise EstimationError(f"bootstrap unstable: {failures} of {B} replicates failed")
    alpha = (1 - level) / 2
    lo, hi = np.quantile(ok, [alpha, 1 - alpha])
    return EstimateWithCI(point, float(ok.std(ddof=1)), float(lo), float(hi), "bootstrap_ipw",
                          failures)
