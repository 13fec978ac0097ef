"""Bayesian logistic propensity-score models.

Two prior families for the slope coefficients:

* ``student_t``: independent Student-t(df=3, scale=2.5) slopes.
* ``horseshoe``: ``beta_j = z_j * lambda_j * tau`` with ``z_j ~ N(0, 1)`` and
  half-t(3, 0, 1) priors on the local scales ``lambda_j`` and global scale
  ``tau``.  Scales are sampled on the log scale, so the log-posterior carries
  the log-Jacobian ``log lambda_j + log tau``.

The intercept gets a Student-t(3, 0, 10) prior in both cases and is never
shrunk by the horseshoe.

Parameter layout (``theta``): ``[beta_0, beta_1..beta_p]`` for the Student-t
model and ``[beta_0, z_1..z_p, log lambda_1..log lambda_p, log tau]`` for the
horseshoe.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import gammaln

from .data import Dataset, DataError, is_standardized
from .mcmc import ChainDraws, HMCConfig, TargetDensity, rhat, run_hmc

RHAT_THRESHOLD = 1.1


@dataclass(frozen=True)
class PriorSpec:
    variant: str = "student_t"
    df: float = 3.0
    scale: float = 2.5
    local_df: float = 3.0
    local_scale: float = 1.0
    global_df: float = 3.0
    global_scale: float = 1.0
    intercept_df: float = 3.0
    intercept_scale: float = 10.0

    def __post_init__(self):
        if self.variant not in ("student_t", "horseshoe"):
            raise ValueError(f"unknown prior variant {self.variant!r}")
        for name in ("df", "scale", "local_df", "local_scale", "global_df",
                     "global_scale", "intercept_df", "intercept_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def student_t(cls, df=3.0, scale=2.5) -> "PriorSpec":
        return cls("student_t", df=df, scale=scale)

    @classmethod
    def horseshoe(cls, local_df=3.0, global_df=3.0, scale=1.0) -> "PriorSpec":
        return cls("horseshoe", local_df=local_df, global_df=global_df,
                   local_scale=scale, global_scale=scale)

    def n_params(self, p: int) -> int:
        return p + 1 if self.variant == "student_t" else 2 * p + 2


@dataclass
class PropensityDraws:
    """``K`` posterior draws of the n-vector of propensity scores."""

    pi: np.ndarray  # (K, n)
    model: str
    chains: ChainDraws | None = None
    coef: np.ndarray | None = None  # (K, p + 1) coefficient draws, when available
    max_rhat: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pi = np.atleast_2d(np.asarray(self.pi, dtype=float))
        if not np.all((self.pi > 0) & (self.pi < 1)):
            raise ValueError("propensity draws must lie strictly inside (0, 1)")

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def n(self) -> int:
        return self.pi.shape[1]

    @property
    def converged(self) -> bool | None:
        return None if self.max_rhat is None else bool(self.max_rhat < RHAT_THRESHOLD)

    def to_csv(self, path, max_cells: int = 50_000_000) -> None:
        """Rows are draws, columns are subjects."""
        if self.pi.size > max_cells:
            raise ValueError(f"refusing to write {self.pi.size} cells (limit {max_cells})")
        header = ",".join(f"s{i + 1}" for i in range(self.n))
        np.savetxt(path, self.pi, delimiter=",", header=header, comments="", fmt="%.17g")


def _t_const(df: float, scale: float) -> float:
    return gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi) - math.log(scale)


def student_t_logpdf(x, df, scale):
    x = np.asarray(x, dtype=float)
    return _t_const(df, scale) - (df + 1) / 2 * np.log1p((x / scale) ** 2 / df)


@numba.njit(cache=True)
def _log1pexp(eta):
    out = np.empty_like(eta)
    for i in range(eta.size):
        e = eta[i]
        if e > 0:
            out[i] = e + math.log1p(math.exp(-e))
        else:
            out[i] = math.log1p(math.exp(e))
    return out


@numba.njit(cache=True)
def expit_nb(eta):
    out = np.empty_like(eta)
    for i in range(eta.size):
        e = eta[i]
        if e >= 0:
            out[i] = 1.0 / (1.0 + math.exp(-e))
        else:
            z = math.exp(e)
            out[i] = z / (1.0 + z)
    return out


def expit(eta):
    """Overflow-free logistic function."""
    eta = np.asarray(eta, dtype=float)
    return expit_nb(eta.ravel()).reshape(eta.shape)


@numba.njit(cache=True)
def _loglik_grad(beta, design, x):
    eta = design @ beta
    ll = np.sum(x * eta - _log1pexp(eta))
    g = design.T @ (x - expit_nb(eta))
    return ll, g


@numba.njit(cache=True)
def _t_term(v, df, scale, const):
    # log density and derivative of Student-t(df, 0, scale) at v
    q = 1.0 + v * v / (df * scale * scale)
    return const - 0.5 * (df + 1.0) * math.log(q), -(df + 1.0) * v / (df * scale * scale + v * v)


@numba.njit(cache=True)
def _student_t_kernel(theta, design, x, hyper):
    # hyper: df, scale, const, intercept_df, intercept_scale, intercept_const
    ll, g = _loglik_grad(theta, design, x)
    lp0, d0 = _t_term(theta[0], hyper[3], hyper[4], hyper[5])
    ll += lp0
    g[0] += d0
    for j in range(1, theta.size):
        lpj, dj = _t_term(theta[j], hyper[0], hyper[1], hyper[2])
        ll += lpj
        g[j] += dj
    return ll, g


@numba.njit(cache=True)
def _horseshoe_kernel(theta, design, x, hyper):
    # hyper: local df, local scale, local const, global df, global scale, global const,
    #        intercept df, intercept scale, intercept const
    p = design.shape[1] - 1
    z = theta[1:p + 1]
    log_lam = theta[p + 1:2 * p + 1]
    log_tau = theta[2 * p + 1]
    lam = np.exp(log_lam)
    tau = math.exp(log_tau)
    beta = np.empty(p + 1)
    beta[0] = theta[0]
    beta[1:] = z * lam * tau
    ll, gb = _loglik_grad(beta, design, x)

    g = np.zeros(theta.size)
    lp0, d0 = _t_term(theta[0], hyper[6], hyper[7], hyper[8])
    ll += lp0
    g[0] = gb[0] + d0
    log2 = math.log(2.0)
    dtau = 0.0
    for j in range(p):
        # likelihood chain rule through beta_j = z_j lam_j tau
        gbj = gb[j + 1]
        ll += -0.5 * z[j] * z[j] - 0.5 * math.log(2.0 * math.pi)
        g[j + 1] = gbj * lam[j] * tau - z[j]
        # half-t on lambda_j with log-Jacobian
        lpl, dl = _t_term(lam[j], hyper[0], hyper[1], hyper[2])
        ll += log2 + lpl + log_lam[j]
        g[p + 1 + j] = gbj * beta[j + 1] + dl * lam[j] + 1.0
        dtau += gbj * beta[j + 1]
    lpt, dt = _t_term(tau, hyper[3], hyper[4], hyper[5])
    ll += log2 + lpt + log_tau
    g[2 * p + 1] = dtau + dt * tau + 1.0
    return ll, g


def _hyper(prior: PriorSpec) -> np.ndarray:
    ic = _t_const(prior.intercept_df, prior.intercept_scale)
    if prior.variant == "student_t":
        return np.array([prior.df, prior.scale, _t_const(prior.df, prior.scale),
                         prior.intercept_df, prior.intercept_scale, ic])
    return np.array([
        prior.local_df, prior.local_scale, _t_const(prior.local_df, prior.local_scale),
        prior.global_df, prior.global_scale, _t_const(prior.global_df, prior.global_scale),
        prior.intercept_df, prior.intercept_scale, ic,
    ])


def param_names(prior: PriorSpec, names) -> list[str]:
    names = list(names)
    if prior.variant == "student_t":
        return ["(Intercept)", *names]
    return ["(Intercept)", *(f"z[{n}]" for n in names),
            *(f"log_lambda[{n}]" for n in names), "log_tau"]


def make_target(d: Dataset, prior: PriorSpec) -> TargetDensity:
    design = np.ascontiguousarray(d.design())
    x = np.ascontiguousarray(d.treatment, dtype=float)
    kernel = _student_t_kernel if prior.variant == "student_t" else _horseshoe_kernel
    return TargetDensity(prior.n_params(d.p), kernel, (design, x, _hyper(prior)),
                         names=param_names(prior, d.names))


def logistic_log_posterior(theta, d: Dataset, prior: PriorSpec):
    """Log-posterior (up to a constant in the data) and its exact gradient."""
    theta = np.asarray(theta, dtype=float)
    k = prior.n_params(d.p)
    if theta.shape != (k,):
        raise ValueError(f"dimension mismatch: {prior.variant} with p={d.p} needs {k} parameters, "
                         f"got {theta.shape}")
    return make_target(d, prior).evaluate(theta)


def coefficients(theta: np.ndarray, prior: PriorSpec, p: int) -> np.ndarray:
    """Map parameter draws (..., n_params) to regression coefficients (..., p + 1)."""
    theta = np.asarray(theta, dtype=float)
    if prior.variant == "student_t":
        return theta[..., : p + 1]
    z = theta[..., 1: p + 1]
    lam = np.exp(theta[..., p + 1: 2 * p + 1])
    tau = np.exp(theta[..., 2 * p + 1: 2 * p + 2])
    return np.concatenate([theta[..., :1], z * lam * tau], axis=-1)


def thin_indices(total: int, k: int) -> np.ndarray:
    """``k`` evenly spaced indices into ``range(total)`` (all of them if k >= total)."""
    if k is None or k >= total:
        return np.arange(total)
    return np.round(np.linspace(0, total - 1, k)).astype(int)


PI_FLOOR = 1e-15


def fit_treatment_model(d: Dataset, prior: PriorSpec | None = None,
                        sampler: HMCConfig | None = None, thin: int | None = 1000) -> PropensityDraws:
    """Sample the logistic treatment model and return propensity draws.

    ``thin`` caps the number of returned draws K (evenly spaced over the pooled
    chains).  The maximum split R-hat over all parameters is recorded and a
    warning is issued when it reaches 1.1.
    """
    prior = prior or PriorSpec.student_t()
    sampler = sampler or HMCConfig()
    if prior.variant == "horseshoe" and not is_standardized(d):
        raise DataError("continuous confounders must be standardized before horseshoe fitting")
    target = make_target(d, prior)
    chains = run_hmc(target, sampler)
    pooled = chains.pooled()
    idx = thin_indices(pooled.shape[0], thin)
    coef = coefficients(pooled[idx], prior, d.p)
    pi = expit(coef @ d.design().T)
    if prior.variant == "student_t" and np.any((pi < 1e-12) | (pi > 1 - 1e-12)):
        warnings.warn("fitted propensities within 1e-12 of 0 or 1: possible separation",
                      RuntimeWarning, stacklevel=2)
    pi = np.clip(pi, PI_FLOOR, 1 - PI_FLOOR)
    max_r = float(np.max(rhat(chains))) if chains.n_chains >= 2 else None
    if max_r is not None and max_r >= RHAT_THRESHOLD:
        warnings.warn(f"max R-hat {max_r:.3f} >= {RHAT_THRESHOLD}", RuntimeWarning, stacklevel=2)
    return PropensityDraws(pi=pi, model=prior.variant, chains=chains, coef=coef, max_rhat=max_r,
                           meta={"prior": prior.__dict__.copy(), "thin": thin})


def posterior_mean_ps(pd: PropensityDraws) -> np.ndarray:
    """Subject-wise mean of the propensity draws."""
    return pd.pi.mean(axis=0)
