"""Conjugate beta-binomial ATE posterior over the propensity-weighted pseudo-population.

For one vector of propensity scores ``pi`` the weighted event counts in each
arm are rescaled by ``gamma`` so the pseudo-population arm sizes equal the
observed ones::

    gamma1 = n1 / sum(X / pi)
    a1 = alpha11 + gamma1 * sum(X Y / pi)       b1 = alpha10 + gamma1 * sum(X (1 - Y) / pi)
    gamma0 = n0 / sum((1 - X) / (1 - pi))
    a0 = alpha01 + gamma0 * sum((1 - X) Y / (1 - pi))
    b0 = alpha00 + gamma0 * sum((1 - X) (1 - Y) / (1 - pi))

and ``p1 ~ Beta(a1, b1)``, ``p0 ~ Beta(a0, b0)``, ``Delta = p1 - p0``.

Hyperparameter indices read ``alpha[arm][event]``: ``alpha01`` is the prior
count of control-arm events and ``alpha00`` of control-arm non-events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .treatment import PropensityDraws, posterior_mean_ps

MODES = ("integrated", "mean_ps")


@dataclass(frozen=True)
class OutcomeHyper:
    a00: float = 1.0
    a01: float = 1.0
    a10: float = 1.0
    a11: float = 1.0

    def __post_init__(self):
        if min(self.a00, self.a01, self.a10, self.a11) < 0:
            raise ValueError("prior pseudo-counts must be nonnegative")

    @property
    def improper(self) -> bool:
        return min(self.a00, self.a01, self.a10, self.a11) == 0


@dataclass(frozen=True)
class BetaParams:
    a1: float
    b1: float
    a0: float
    b0: float
    gamma1: float
    gamma0: float

    @property
    def mean_p1(self) -> float:
        return self.a1 / (self.a1 + self.b1)

    @property
    def mean_p0(self) -> float:
        return self.a0 / (self.a0 + self.b0)

    @property
    def mean_ate(self) -> float:
        return self.mean_p1 - self.mean_p0


def _arrays(d: Dataset, pi):
    x = d.treatment
    y = d.outcome
    pi = np.asarray(pi, dtype=float)
    if pi.shape[-1] != d.n:
        raise ValueError(f"propensity vector has length {pi.shape[-1]}, dataset has n={d.n}")
    if not np.all((pi > 0) & (pi < 1)):
        raise ValueError("propensity scores must lie strictly inside (0, 1)")
    n1 = x.sum()
    n0 = d.n - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("a treatment arm is empty; gamma is undefined")
    return x, y, pi, n1, n0


def pseudo_counts_batch(d: Dataset, pi: np.ndarray, h: OutcomeHyper | None = None) -> dict:
    """Vectorised :func:`pseudo_population_counts` over rows of ``pi`` (K, n)."""
    h = h or OutcomeHyper()
    x, y, pi, n1, n0 = _arrays(d, np.atleast_2d(pi))
    w1 = 1.0 / pi
    w0 = 1.0 / (1.0 - pi)
    t_all = w1 @ x
    t_ev = w1 @ (x * y)
    c_all = w0 @ (1.0 - x)
    c_ev = w0 @ ((1.0 - x) * y)
    g1 = n1 / t_all
    g0 = n0 / c_all
    return {
        "a1": h.a11 + g1 * t_ev,
        "b1": h.a10 + g1 * (t_all - t_ev),
        "a0": h.a01 + g0 * c_ev,
        "b0": h.a00 + g0 * (c_all - c_ev),
        "gamma1": g1,
        "gamma0": g0,
    }


def pseudo_population_counts(d: Dataset, pi, h: OutcomeHyper | None = None) -> BetaParams:
    """Conjugate Beta posterior parameters of (p1, p0) given one propensity vector."""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1:
        raise ValueError("expected a single propensity vector")
    h = h or OutcomeHyper()
    x, y, pi, n1, n0 = _arrays(d, pi)
    t_all = np.sum(x / pi)
    c_all = np.sum((1 - x) / (1 - pi))
    g1 = n1 / t_all
    g0 = n0 / c_all
    return BetaParams(
        a1=h.a11 + g1 * np.sum(x * y / pi),
        b1=h.a10 + g1 * np.sum(x * (1 - y) / pi),
        a0=h.a01 + g0 * np.sum((1 - x) * y / (1 - pi)),
        b0=h.a00 + g0 * np.sum((1 - x) * (1 - y) / (1 - pi)),
        gamma1=float(g1),
        gamma0=float(g0),
    )


def draw_ate(bp: BetaParams, J: int, rng: np.random.Generator) -> np.ndarray:
    """``J`` draws of p1 - p0 with independent Beta posteriors."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if min(bp.a1, bp.b1, bp.a0, bp.b0) <= 0:
        raise ValueError("Beta parameters must be positive")
    p1 = rng.beta(bp.a1, bp.b1, size=J)
    p0 = rng.beta(bp.a0, bp.b0, size=J)
    return p1 - p0


@dataclass
class AtePosterior:
    """ATE draws grouped by propensity draw: ``draws[k, j]``."""

    draws: np.ndarray  # (K, J)
    mode: str
    params: dict | None = None

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def K(self) -> int:
        return self.draws.shape[0]

    @property
    def J(self) -> int:
        return self.draws.shape[1]

    @property
    def flat(self) -> np.ndarray:
        """Concatenation across propensity draws (all J draws of k=1 first)."""
        return self.draws.reshape(-1)

    @property
    def group(self) -> np.ndarray:
        return np.repeat(np.arange(self.K), self.J)

    @classmethod
    def from_draws(cls, draws, mode: str = "mean_ps") -> "AtePosterior":
        return cls(np.asarray(draws, dtype=float).reshape(1, -1), mode)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,j,delta\n")
            for k in range(self.K):
                for j in range(self.J):
                    fh.write(f"{k},{j},{float(self.draws[k, j])!r}\n")


def ate_posterior(d: Dataset, pd: PropensityDraws | np.ndarray, mode: str = "integrated",
                  J: int = 10, h: OutcomeHyper | None = None,
                  rng: np.random.Generator | None = None,
                  pi_clip: float | None = None) -> AtePosterior:
    """Posterior draws of the ATE from propensity draws.

    ``integrated``: for each of the K propensity draws form the Beta posteriors
    and draw J values (J*K total).  ``mean_ps``: one Beta posterior from the
    subject-wise posterior-mean propensity score and J*K draws from it.  ``pi_clip``
    optionally bounds the scores to ``[pi_clip, 1 - pi_clip]`` (off by default).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if J < 1:
        raise ValueError("J must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    if isinstance(pd, PropensityDraws):
        n_draws = pd.K
        pi = pd.pi if mode == "integrated" else posterior_mean_ps(pd)[None, :]
    else:
        pi = np.atleast_2d(np.asarray(pd, dtype=float))
        n_draws = pi.shape[0]
        if mode == "mean_ps":
            pi = pi.mean(axis=0, keepdims=True)
    if mode == "mean_ps":
        # same number of outcome draws as the integrated mode, so interval
        # endpoints are resolved equally well
        J = J * n_draws
    if pi.shape[1] != d.n:
        raise ValueError(f"propensity draws cover {pi.shape[1]} subjects, dataset has {d.n}")
    if pi_clip is not None:
        pi = np.clip(pi, pi_clip, 1 - pi_clip)
    bp = pseudo_counts_batch(d, pi, h)
    K = pi.shape[0]
    p1 = rng.beta(bp["a1"][:, None], bp["b1"][:, None], size=(K, J))
    p0 = rng.beta(bp["a0"][:, None], bp["b0"][:, None], size=(K, J))
    return AtePosterior(p1 - p0, mode, params=bp)


def summarize(ap: AtePosterior, level: float = 0.95) -> dict:
    """Mean, SD and equal-tailed empirical interval of the concatenated draws."""
    v = ap.flat
    if v.size == 0:
        raise ValueError("no draws to summarize")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(v, [alpha, 1.0 - alpha])
    # exact zero for constant draws (the mean can carry rounding error)
    sd = float(v.std(ddof=1)) if v.size > 1 and np.ptp(v) > 0 else 0.0
    return {"mean": float(v.mean()), "sd": sd, "lower": float(lo), "upper": float(hi)}


def total_variance_decomposition(ap: AtePosterior) -> dict:
    """Within- plus between-propensity-draw variance of the ATE draws."""
    if ap.mode != "integrated":
        raise ValueError("decomposition requires integrated draws")
    if ap.K < 2 or ap.J < 2:
        raise ValueError("decomposition needs K >= 2 and J >= 2")
    within = float(ap.draws.var(axis=1, ddof=1).mean())
    between = float(ap.draws.mean(axis=1).var(ddof=1))
    return {"within": within, "between": between, "total": within + between}


def posterior_report(ap: AtePosterior, level: float = 0.95) -> dict:
    """JSON-ready summary: mode, J, K, mean, sd, ci, within/between variance."""
    s = summarize(ap, level)
    rep = {"mode": ap.mode, "J": ap.J, "K": ap.K, "mean": s["mean"], "sd": s["sd"],
           "ci": [s["lower"], s["upper"]], "level": level,
           "within_var": None, "between_var": None}
    if ap.mode == "integrated" and ap.K >= 2 and ap.J >= 2:
        tv = total_variance_decomposition(ap)
        rep["within_var"] = tv["within"]
        rep["between_var"] = tv["between"]
    return rep
