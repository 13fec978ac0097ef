"""Hamiltonian Monte Carlo with warmup adaptation, plus R-hat and ESS.

Targets are numba-compiled kernels ``kernel(theta, *args) -> (logp, grad)``;
the whole trajectory loop runs in compiled code.  All randomness (momenta,
accept uniforms, jittered path lengths) is drawn up front from a numpy
``Generator`` seeded per chain, so the compiled loop is a pure function and
draws do not depend on how chains are scheduled across threads.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TargetDensity:
    """Differentiable log-density over R^dim.

    ``kernel`` must be an ``@numba.njit`` function taking ``(theta, *args)``
    and returning ``(logp, grad)``; it must not mutate ``args``.
    """

    dim: int
    kernel: Callable
    args: tuple = ()
    names: Sequence[str] | None = None

    def evaluate(self, theta):
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got {theta.shape}")
        lp, g = self.kernel(theta, *self.args)
        return float(lp), np.asarray(g)


@dataclass
class HMCConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    max_leapfrog: int = 32
    target_accept: float = 0.8
    seed: int = 0
    workers: int = 1
    init: np.ndarray | None = None
    max_divergence_rate: float = 0.5


@dataclass
class ChainDraws:
    draws: np.ndarray  # (chains, samples, dim)
    warmup: int
    step_size: np.ndarray  # (chains,)
    inv_mass: np.ndarray  # (chains, dim)
    accept_stat: np.ndarray  # (chains, samples)
    divergent: np.ndarray  # (chains, samples) bool
    names: Sequence[str] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.dim)

    def to_csv(self, path) -> None:
        """One row per retained draw; chain and iteration columns first."""
        names = list(self.names) if self.names is not None else [f"theta{j}" for j in range(self.dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration", *names])
            for m in range(self.n_chains):
                for s in range(self.n_samples):
                    w.writerow([m, s, *(repr(float(v)) for v in self.draws[m, s])])


@numba.njit(cache=True)
def _kinetic(p, inv_mass):
    return 0.5 * np.sum(p * p * inv_mass)


@numba.njit(cache=True)
def _leapfrog(kernel, args, theta, p, grad, eps, inv_mass):
    p = p + 0.5 * eps * grad
    theta = theta + eps * inv_mass * p
    lp, grad = kernel(theta, *args)
    p = p + 0.5 * eps * grad
    return theta, p, lp, grad


@numba.njit(cache=True)
def _initial_step_size(kernel, args, theta, lp, grad, p0, inv_mass):
    # Double or halve until the one-step acceptance crosses 1/2.
    eps = 1.0
    h0 = -lp + _kinetic(p0, inv_mass)
    _, p1, lp1, _ = _leapfrog(kernel, args, theta, p0, grad, eps, inv_mass)
    dh = h0 - (-lp1 + _kinetic(p1, inv_mass))
    if not np.isfinite(dh):
        dh = -np.inf
    direction = 1.0 if dh > math.log(0.5) else -1.0
    for _ in range(100):
        eps = eps * 2.0 ** direction
        _, p1, lp1, _ = _leapfrog(kernel, args, theta, p0, grad, eps, inv_mass)
        dh = h0 - (-lp1 + _kinetic(p1, inv_mass))
        if not np.isfinite(dh):
            dh = -np.inf
        if direction > 0 and not dh > math.log(0.5):
            break
        if direction < 0 and dh > math.log(0.5):
            break
    return eps


@numba.njit(cache=True, nogil=True)
def _run_chain(kernel, args, theta0, warmup, samples, n_steps, momenta, uniforms, target_accept):
    d = theta0.size
    total = warmup + samples
    theta = theta0.copy()
    lp, grad = kernel(theta, *args)
    inv_mass = np.ones(d)

    draws = np.empty((samples, d))
    accept = np.empty(samples)
    divergent = np.zeros(samples, dtype=np.bool_)

    eps = _initial_step_size(kernel, args, theta, lp, grad, momenta[0], inv_mass)
    # dual averaging constants
    gamma, t0, kappa = 0.05, 10.0, 0.75
    mu = math.log(10.0 * eps)
    hbar = 0.0
    log_eps_bar = 0.0
    t = 0

    # metric collected over [warmup // 2, metric_end), applied at metric_end
    adapt_metric = warmup >= 200
    metric_start = warmup // 2
    metric_end = int(0.9 * warmup)
    w_n = 0
    w_mean = np.zeros(d)
    w_m2 = np.zeros(d)

    for it in range(total):
        p = momenta[it] / np.sqrt(inv_mass)
        h0 = -lp + _kinetic(p, inv_mass)
        th_new = theta
        lp_new = lp
        g_new = grad
        p_new = p
        diverged = False
        for _ in range(n_steps[it]):
            th_new, p_new, lp_new, g_new = _leapfrog(kernel, args, th_new, p_new, g_new, eps, inv_mass)
            h = -lp_new + _kinetic(p_new, inv_mass)
            if not np.isfinite(h) or abs(h - h0) > 1000.0:
                diverged = True
                break
        if diverged:
            a = 0.0
        else:
            dh = h0 - (-lp_new + _kinetic(p_new, inv_mass))
            a = 1.0 if dh >= 0.0 else math.exp(dh)
        if uniforms[it] < a:
            theta = th_new
            lp = lp_new
            grad = g_new

        if it < warmup:
            t += 1
            eta = 1.0 / (t + t0)
            hbar = (1.0 - eta) * hbar + eta * (target_accept - a)
            log_eps = mu - math.sqrt(t) / gamma * hbar
            wt = t ** (-kappa)
            log_eps_bar = wt * log_eps + (1.0 - wt) * log_eps_bar
            eps = math.exp(log_eps)
            if adapt_metric and metric_start <= it < metric_end:
                w_n += 1
                delta = theta - w_mean
                w_mean += delta / w_n
                w_m2 += delta * (theta - w_mean)
            if adapt_metric and it == metric_end - 1 and w_n > 1:
                var = w_m2 / (w_n - 1)
                # shrink toward unit scale as in common practice
                inv_mass = (w_n / (w_n + 5.0)) * var + 1e-3 * (5.0 / (w_n + 5.0))
                eps = _initial_step_size(kernel, args, theta, lp, grad,
                                         momenta[it] / np.sqrt(inv_mass), inv_mass)
                mu = math.log(10.0 * eps)
                hbar = 0.0
                log_eps_bar = 0.0
                t = 0
            if it == warmup - 1:
                eps = math.exp(log_eps_bar)
        else:
            s = it - warmup
            draws[s] = theta
            accept[s] = a
            divergent[s] = diverged
    return draws, eps, inv_mass, accept, divergent


def chain_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child seed sequences for ``n`` chains of one run."""
    return np.random.SeedSequence(seed).spawn(n)


def run_hmc(target: TargetDensity, config: HMCConfig | None = None) -> ChainDraws:
    """Sample ``target`` with jittered-length HMC.

    Each iteration takes a uniform number of leapfrog steps in
    ``1..config.max_leapfrog``.  During warmup the step size is tuned by dual
    averaging towards ``target_accept``; a diagonal metric is estimated from
    the second half of warmup and the step size re-tuned under it.
    """
    cfg = config or HMCConfig()
    if target.dim < 1:
        raise ValueError("target dimension must be >= 1")
    if cfg.chains < 1 or cfg.samples < 1 or cfg.warmup < 0:
        raise ValueError("need chains >= 1, samples >= 1, warmup >= 0")
    theta0 = np.zeros(target.dim) if cfg.init is None else np.array(cfg.init, dtype=float)
    lp0, g0 = target.evaluate(theta0)
    if not (np.isfinite(lp0) and np.all(np.isfinite(g0))):
        raise SamplerError("non-finite log-density or gradient at initialization")

    total = cfg.warmup + cfg.samples
    plans = []
    for ss in chain_seeds(cfg.seed, cfg.chains):
        rng = np.random.default_rng(ss)
        momenta = rng.standard_normal((total, target.dim))
        uniforms = rng.random(total)
        n_steps = rng.integers(1, cfg.max_leapfrog + 1, size=total).astype(np.int64)
        plans.append((n_steps, momenta, uniforms))

    def one(plan):
        n_steps, momenta, uniforms = plan
        return _run_chain(target.kernel, target.args, theta0, cfg.warmup, cfg.samples,
                          n_steps, momenta, uniforms, cfg.target_accept)

    if cfg.workers > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, plans))
    else:
        results = [one(plan) for plan in plans]

    draws = np.stack([r[0] for r in results])
    out = ChainDraws(
        draws=draws,
        warmup=cfg.warmup,
        step_size=np.array([r[1] for r in results]),
        inv_mass=np.stack([r[2] for r in results]),
        accept_stat=np.stack([r[3] for r in results]),
        divergent=np.stack([r[4] for r in results]),
        names=target.names,
    )
    rate = out.divergent.mean()
    if rate > cfg.max_divergence_rate:
        raise SamplerError(f"sampler failed to adapt ({rate:.0%} divergent transitions)")
    if not np.all(np.isfinite(draws)):
        raise SamplerError("sampler produced non-finite draws")
    return out


def _as_chain_array(c) -> np.ndarray:
    arr = c.draws if isinstance(c, ChainDraws) else np.asarray(c, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def rhat(c) -> np.ndarray:
    """Split-chain potential scale reduction factor for each parameter.

    Accepts a :class:`ChainDraws` or an array shaped ``(chains, samples[, dim])``.
    """
    arr = _as_chain_array(c)
    m, s = arr.shape[:2]
    if m < 2:
        raise ValueError("R-hat requires >=2 chains")
    if s < 2:
        raise ValueError("R-hat requires >=2 samples per chain")
    half = s // 2
    if half >= 2:
        arr = np.concatenate([arr[:, :half], arr[:, s - half:]], axis=0)
    n = arr.shape[1]
    means = arr.mean(axis=1)
    within = arr.var(axis=1, ddof=1).mean(axis=0)
    between = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * within + between / n
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(var_plus / within)
    return np.where(within > 0, out, np.where(between > 0, np.inf, 1.0))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    ac = np.fft.irfft(f * np.conjugate(f), size)[:n]
    return ac / n


def effective_sample_size(c) -> np.ndarray:
    """Autocorrelation-based ESS pooled over chains (Geyer initial monotone sequence).

    Constant parameters report an ESS of 0.
    """
    arr = _as_chain_array(c)
    m, n, d = arr.shape
    if n < 4:
        raise ValueError("ESS requires >=4 samples per chain")
    out = np.empty(d)
    for j in range(d):
        x = arr[:, :, j]
        acov = np.stack([_autocov(x[k]) for k in range(m)])
        chain_var = acov[:, 0] * n / (n - 1)
        w = chain_var.mean()
        var_plus = w * (n - 1) / n
        if m > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if var_plus <= 0 or not np.isfinite(var_plus):
            out[j] = 0.0
            continue
        rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # Geyer: sum consecutive pairs while positive, enforce monotone decrease
        tau = -1.0
        prev = np.inf
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev)
            tau += 2.0 * pair
            prev = pair
            t += 2
        out[j] = m * n / max(tau, 1.0 / np.log10(m * n))
    return out
