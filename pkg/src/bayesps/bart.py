"""BART-probit propensity model.

``P(X = 1 | C) = Phi(sum_r g(C; T_r, M_r))`` with R regularized trees.  A
node at depth ``d`` splits with prior probability ``a (1 + d)^-b``; split
variables are uniform over the columns with at least two distinct values and
cut points uniform over that column's distinct values (largest excluded), with
the rule ``x <= c`` sending a subject left.  Leaf values are ``N(0, s^2)``
with ``s = 3 / (c sqrt(R))``.

Sampling is Bayesian backfitting on the probit latent scale: draw the latent
utilities ``z`` from their truncated normals, then for each tree propose a
grow / prune / change move against the partial residual and redraw its leaf
values from the conjugate normal.  Change moves redraw the rule of a node whose
children are both leaves.  Proposals that would leave a leaf with no training
subjects are rejected.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ndtr, ndtri

from .data import Dataset
from .treatment import PropensityDraws

P_GROW, P_PRUNE = 0.35, 0.35
PI_CLAMP = 1e-6


@dataclass(frozen=True)
class DepthPrior:
    """Split probability ``a (1 + d)^-b`` at depth ``d``; ``a = 0`` forbids splits."""

    a: float = 0.95
    b: float = 2.0

    def __post_init__(self):
        if not 0 <= self.a < 1:
            raise ValueError("a must lie in [0, 1)")
        if self.b < 0:
            raise ValueError("b must be >= 0")

    def split_prob(self, depth) -> float:
        return self.a * (1.0 + depth) ** (-self.b)


@dataclass(frozen=True)
class BartConfig:
    R: int = 200
    a: float = 0.95
    b: float = 2.0
    c: float = 2.0
    burn: int = 500
    draws: int = 1000
    thin: int = 1
    chains: int = 1
    seed: int = 0
    workers: int = 1
    capacity: int = 255

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if not 0 < self.a < 1:
            raise ValueError("a must lie in (0, 1)")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.burn < 0 or self.draws < 1 or self.thin < 1 or self.chains < 1:
            raise ValueError("need burn >= 0, draws >= 1, thin >= 1, chains >= 1")
        if self.capacity < 3:
            raise ValueError("capacity must be >= 3")

    @property
    def sigma_mu(self) -> float:
        return 3.0 / (self.c * math.sqrt(self.R))

    @property
    def depth_prior(self) -> DepthPrior:
        return DepthPrior(self.a, self.b)


@dataclass
class Tree:
    """Array-encoded binary tree; node 0 is the root.

    ``var[k] < 0`` marks a leaf.  Internal nodes send ``x[var] <= cut`` to
    ``left[k]`` and the rest to ``right[k]``.
    """

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mu: np.ndarray

    @classmethod
    def leaf(cls, mu: float = 0.0) -> "Tree":
        return cls(np.array([-1]), np.array([np.nan]), np.array([-1]), np.array([-1]),
                   np.array([mu], dtype=float))

    @classmethod
    def stump(cls, var: int, cut: float, mu_left: float, mu_right: float) -> "Tree":
        return cls(np.array([var, -1, -1]), np.array([cut, np.nan, np.nan]),
                   np.array([1, -1, -1]), np.array([2, -1, -1]),
                   np.array([0.0, mu_left, mu_right]))

    def depths(self) -> np.ndarray:
        d = np.zeros(self.var.size, dtype=int)
        for k in range(self.var.size):
            if self.var[k] >= 0:
                d[self.left[k]] = d[k] + 1
                d[self.right[k]] = d[k] + 1
        return d

    @property
    def depth(self) -> int:
        return int(self.depths().max())

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.var >= 0)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.var < 0)

    def leaf_index(self, C: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(C)
        node = np.zeros(C.shape[0], dtype=int)
        active = self.var[node] >= 0
        while active.any():
            k = node[active]
            go_left = C[active, self.var[k]] <= self.cut[k]
            node[active] = np.where(go_left, self.left[k], self.right[k])
            active = self.var[node] >= 0
        return node

    def predict(self, C: np.ndarray) -> np.ndarray:
        return self.mu[self.leaf_index(C)]


@dataclass
class BartForest:
    trees: list[Tree]

    def predict(self, C: np.ndarray) -> np.ndarray:
        """Sum-of-trees on the probit scale."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        out = np.zeros(C.shape[0])
        for t in self.trees:
            out += t.predict(C)
        return out

    def propensity(self, C: np.ndarray) -> np.ndarray:
        return np.clip(ndtr(self.predict(C)), PI_CLAMP, 1 - PI_CLAMP)


def tree_log_prior(tree: Tree, prior: DepthPrior | BartConfig,
                   n_vars: int | None = None, n_cuts=None) -> float:
    """Log prior probability of a tree structure.

    Internal nodes contribute ``log a(1+d)^-b``, leaves ``log(1 - a(1+d)^-b)``.
    When ``n_vars`` is given each split adds ``-log n_vars``; when ``n_cuts``
    (cut points available per variable) is given it also adds
    ``-log n_cuts[var]``.
    """
    a, b = prior.a, prior.b
    d = tree.depths()
    lp = 0.0
    for k in range(tree.var.size):
        ps = a * (1.0 + d[k]) ** (-b)
        if tree.var[k] >= 0:
            if ps <= 0:
                return -math.inf
            lp += math.log(ps)
            if n_vars is not None:
                lp -= math.log(n_vars)
            if n_cuts is not None:
                lp -= math.log(n_cuts[tree.var[k]])
        else:
            lp += math.log1p(-ps)
    return lp


def sample_tree_prior(prior: DepthPrior | BartConfig, rng: np.random.Generator,
                      max_depth: int = 64) -> Tree:
    """Draw a tree shape from the depth prior (split rules left unset)."""
    var, left, right = [], [], []
    stack = [(0, 0)]
    var.append(-1), left.append(-1), right.append(-1)
    while stack:
        k, d = stack.pop()
        if d < max_depth and rng.random() < prior.a * (1.0 + d) ** (-prior.b):
            var[k] = 0
            for side in (left, right):
                side[k] = len(var)
                var.append(-1), left.append(-1), right.append(-1)
                stack.append((side[k], d + 1))
    m = len(var)
    return Tree(np.array(var), np.zeros(m), np.array(left), np.array(right), np.zeros(m))


def probit_latent_step(z, fit, X, rng: np.random.Generator) -> np.ndarray:
    """Draw ``z_i ~ N(fit_i, 1)`` truncated to ``z > 0`` if ``X_i = 1`` else ``z < 0``.

    Inverse-CDF on the tail that is bounded away from 1; when the truncation
    point sits more than ~37 SDs out the exponential tail approximation is used.
    ``z`` is overwritten in place and returned.
    """
    fit = np.asarray(fit, dtype=float)
    X = np.asarray(X)
    u = rng.random(fit.size)
    # m: distance from the mean to the truncation point, oriented so the draw is x < m
    s = np.where(X == 1, 1.0, -1.0)
    m = s * fit
    p = ndtr(m)
    with np.errstate(divide="ignore"):
        x = ndtri(u * p)
    bad = ~np.isfinite(x)
    if bad.any():
        mb = m[bad]
        x[bad] = mb + np.log(u[bad]) / -mb
    z = np.asarray(z, dtype=float)
    z[:] = fit - s * x
    return z


# ---------------------------------------------------------------- compiled core


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _leaf_marg(n, S, s2):
    return -0.5 * math.log1p(n * s2) + 0.5 * s2 * S * S / (1.0 + n * s2)


@numba.njit(cache=True)
def _psplit(a, b, d):
    return a * (1.0 + d) ** (-b)


@numba.njit(cache=True)
def _pick(mask, count, u):
    # index of the floor(u*count)-th True entry
    target = int(u * count)
    if target >= count:
        target = count - 1
    seen = 0
    for k in range(mask.size):
        if mask[k]:
            if seen == target:
                return k
            seen += 1
    return -1


@numba.njit(cache=True)
def _update_tree(r, resid, xrank, ncut, usable, n_usable, var, cut, left, right, parent, depth,
                 mu, used, leaf_of, a, b, s2):
    n = resid.size
    cap = var.shape[1]
    is_leaf = np.zeros(cap, dtype=np.bool_)
    is_nog = np.zeros(cap, dtype=np.bool_)
    n_leaf = 0
    n_nog = 0
    for k in range(cap):
        if used[r, k] and var[r, k] < 0:
            is_leaf[k] = True
            n_leaf += 1
    for k in range(cap):
        if used[r, k] and var[r, k] >= 0 and is_leaf[left[r, k]] and is_leaf[right[r, k]]:
            is_nog[k] = True
            n_nog += 1

    u = np.random.random()
    if n_leaf == 1 or u < P_GROW:
        move = 0
    elif u < P_GROW + P_PRUNE:
        move = 1
    else:
        move = 2

    if move == 0 and n_usable > 0:
        p_grow = 1.0 if n_leaf == 1 else P_GROW
        k = _pick(is_leaf, n_leaf, np.random.random())
        j = usable[int(np.random.random() * n_usable) % n_usable]
        c = int(np.random.random() * ncut[j]) % ncut[j]
        nl = 0
        nr = 0
        sl = 0.0
        sr = 0.0
        for i in range(n):
            if leaf_of[r, i] == k:
                if xrank[i, j] <= c:
                    nl += 1
                    sl += resid[i]
                else:
                    nr += 1
                    sr += resid[i]
        # need two free slots
        f1 = -1
        f2 = -1
        for q in range(cap):
            if not used[r, q]:
                if f1 < 0:
                    f1 = q
                else:
                    f2 = q
                    break
        if nl > 0 and nr > 0 and f2 >= 0:
            d = depth[r, k]
            ps = _psplit(a, b, d)
            ps1 = _psplit(a, b, d + 1)
            par = parent[r, k]
            nog_new = n_nog + 1
            if par >= 0 and is_nog[par]:
                nog_new -= 1
            lr = (_leaf_marg(nl, sl, s2) + _leaf_marg(nr, sr, s2) - _leaf_marg(nl + nr, sl + sr, s2)
                  + math.log(ps) + 2.0 * math.log1p(-ps1) - math.log1p(-ps)
                  + math.log(P_PRUNE / nog_new) - math.log(p_grow / n_leaf))
            if math.log(np.random.random()) < lr:
                var[r, k] = j
                cut[r, k] = c
                left[r, k] = f1
                right[r, k] = f2
                for q in (f1, f2):
                    used[r, q] = True
                    var[r, q] = -1
                    parent[r, q] = k
                    depth[r, q] = d + 1
                    left[r, q] = -1
                    right[r, q] = -1
                for i in range(n):
                    if leaf_of[r, i] == k:
                        leaf_of[r, i] = f1 if xrank[i, j] <= c else f2
    elif move == 1:
        k = _pick(is_nog, n_nog, np.random.random())
        lk = left[r, k]
        rk = right[r, k]
        nl = 0
        nr = 0
        sl = 0.0
        sr = 0.0
        for i in range(n):
            q = leaf_of[r, i]
            if q == lk:
                nl += 1
                sl += resid[i]
            elif q == rk:
                nr += 1
                sr += resid[i]
        d = depth[r, k]
        ps = _psplit(a, b, d)
        ps1 = _psplit(a, b, d + 1)
        n_leaf_new = n_leaf - 1
        p_grow_new = 1.0 if n_leaf_new == 1 else P_GROW
        lr = (_leaf_marg(nl + nr, sl + sr, s2) - _leaf_marg(nl, sl, s2) - _leaf_marg(nr, sr, s2)
              - math.log(ps) - 2.0 * math.log1p(-ps1) + math.log1p(-ps)
              + math.log(p_grow_new / n_leaf_new) - math.log(P_PRUNE / n_nog))
        if math.log(np.random.random()) < lr:
            for i in range(n):
                q = leaf_of[r, i]
                if q == lk or q == rk:
                    leaf_of[r, i] = k
            used[r, lk] = False
            used[r, rk] = False
            var[r, k] = -1
            left[r, k] = -1
            right[r, k] = -1
    elif move == 2 and n_nog > 0 and n_usable > 0:
        k = _pick(is_nog, n_nog, np.random.random())
        lk = left[r, k]
        rk = right[r, k]
        j = usable[int(np.random.random() * n_usable) % n_usable]
        c = int(np.random.random() * ncut[j]) % ncut[j]
        j0 = var[r, k]
        c0 = cut[r, k]
        nl0 = 0
        nr0 = 0
        sl0 = 0.0
        sr0 = 0.0
        nl = 0
        nr = 0
        sl = 0.0
        sr = 0.0
        for i in range(n):
            q = leaf_of[r, i]
            if q == lk or q == rk:
                if xrank[i, j0] <= c0:
                    nl0 += 1
                    sl0 += resid[i]
                else:
                    nr0 += 1
                    sr0 += resid[i]
                if xrank[i, j] <= c:
                    nl += 1
                    sl += resid[i]
                else:
                    nr += 1
                    sr += resid[i]
        if nl > 0 and nr > 0:
            lr = (_leaf_marg(nl, sl, s2) + _leaf_marg(nr, sr, s2)
                  - _leaf_marg(nl0, sl0, s2) - _leaf_marg(nr0, sr0, s2))
            if math.log(np.random.random()) < lr:
                var[r, k] = j
                cut[r, k] = c
                for i in range(n):
                    q = leaf_of[r, i]
                    if q == lk or q == rk:
                        leaf_of[r, i] = lk if xrank[i, j] <= c else rk

    # conjugate leaf values
    cnt = np.zeros(cap)
    tot = np.zeros(cap)
    for i in range(n):
        q = leaf_of[r, i]
        cnt[q] += 1.0
        tot[q] += resid[i]
    for q in range(cap):
        if used[r, q] and var[r, q] < 0:
            prec = 1.0 + cnt[q] * s2
            mu[r, q] = s2 * tot[q] / prec + math.sqrt(s2 / prec) * np.random.standard_normal()


@numba.njit(cache=True, nogil=True)
def _sweep(z, fit, xrank, ncut, usable, var, cut, left, right, parent, depth, mu, used,
           leaf_of, a, b, s2):
    R = var.shape[0]
    n = z.size
    n_usable = usable.size
    resid = np.empty(n)
    for r in range(R):
        for i in range(n):
            resid[i] = z[i] - fit[i] + mu[r, leaf_of[r, i]]
        _update_tree(r, resid, xrank, ncut, usable, n_usable, var, cut, left, right, parent,
                     depth, mu, used, leaf_of, a, b, s2)
        for i in range(n):
            fit[i] = z[i] - resid[i] + mu[r, leaf_of[r, i]]


@numba.njit(cache=True)
def _var_usage(var, used, p):
    out = np.zeros(p, dtype=np.int64)
    for r in range(var.shape[0]):
        for k in range(var.shape[1]):
            if used[r, k] and var[r, k] >= 0:
                out[var[r, k]] += 1
    return out


# ---------------------------------------------------------------- driver


def cutpoint_grid(C: np.ndarray):
    """Per-column sorted distinct values, the largest dropped, and subject ranks.

    Returns ``(cuts, ncut, xrank)`` where ``x[i, j] <= cuts[j][c]`` iff
    ``xrank[i, j] <= c``.
    """
    n, p = C.shape
    cuts = []
    ncut = np.zeros(p, dtype=np.int64)
    xrank = np.empty((n, p), dtype=np.int64)
    for j in range(p):
        vals, inv = np.unique(C[:, j], return_inverse=True)
        cuts.append(vals[:-1])
        ncut[j] = vals.size - 1
        xrank[:, j] = inv
    return cuts, ncut, xrank


@dataclass
class _ChainResult:
    pi: np.ndarray
    forest: BartForest
    depth_counts: np.ndarray
    var_usage: np.ndarray
    accept: dict = field(default_factory=dict)


def _run_chain(C, X, cfg: BartConfig, seed_seq: np.random.SeedSequence) -> _ChainResult:
    n, p = C.shape
    cuts, ncut, xrank = cutpoint_grid(C)
    usable = np.flatnonzero(ncut > 0).astype(np.int64)
    R, cap = cfg.R, cfg.capacity
    var = np.full((R, cap), -1, dtype=np.int64)
    cut = np.zeros((R, cap), dtype=np.int64)
    left = np.full((R, cap), -1, dtype=np.int64)
    right = np.full((R, cap), -1, dtype=np.int64)
    parent = np.full((R, cap), -1, dtype=np.int64)
    depth = np.zeros((R, cap), dtype=np.int64)
    mu = np.zeros((R, cap))
    used = np.zeros((R, cap), dtype=np.bool_)
    used[:, 0] = True
    leaf_of = np.zeros((R, n), dtype=np.int64)
    fit = np.zeros(n)
    z = np.zeros(n)

    rng_seed, nb_seed = seed_seq.spawn(2)
    rng = np.random.default_rng(rng_seed)
    _seed(int(nb_seed.generate_state(1, dtype=np.uint32)[0]))
    s2 = cfg.sigma_mu ** 2
    total = cfg.burn + cfg.draws * cfg.thin
    pi = np.empty((cfg.draws, n))
    usage = np.zeros(p, dtype=np.int64)
    depth_counts = np.zeros(cap, dtype=np.int64)
    keep = 0
    for it in range(total):
        probit_latent_step(z, fit, X, rng)
        _sweep(z, fit, xrank, ncut, usable, var, cut, left, right, parent, depth, mu, used,
               leaf_of, cfg.a, cfg.b, s2)
        if it >= cfg.burn and (it - cfg.burn) % cfg.thin == 0:
            pi[keep] = ndtr(fit)
            usage += _var_usage(var, used, p)
            tree_depth = np.where(used, depth, 0).max(axis=1)
            depth_counts += np.bincount(tree_depth, minlength=cap)[:cap]
            keep += 1
    forest = _export_forest(cuts, var, cut, left, right, mu, used)
    return _ChainResult(np.clip(pi, PI_CLAMP, 1 - PI_CLAMP), forest, depth_counts, usage)


def _export_forest(cuts, var, cut, left, right, mu, used) -> BartForest:
    trees = []
    for r in range(var.shape[0]):
        nodes = np.flatnonzero(used[r])
        remap = -np.ones(var.shape[1], dtype=int)
        # root first, then breadth-first so node 0 is always the root
        order = [0]
        for k in order:
            if var[r, k] >= 0:
                order.extend((left[r, k], right[r, k]))
        remap[order] = np.arange(len(order))
        assert len(order) == nodes.size
        o = np.array(order)
        v = var[r, o]
        trees.append(Tree(
            var=v.copy(),
            cut=np.array([cuts[vj][cut[r, k]] if vj >= 0 else np.nan for k, vj in zip(o, v)]),
            left=np.where(v >= 0, remap[left[r, o]], -1),
            right=np.where(v >= 0, remap[right[r, o]], -1),
            mu=mu[r, o].copy(),
        ))
    return BartForest(trees)


def fit_bart_probit(d: Dataset, cfg: BartConfig | None = None) -> PropensityDraws:
    """Posterior propensity draws ``Phi(sum of trees)``, clamped to [1e-6, 1 - 1e-6].

    Chains are seeded from ``SeedSequence(cfg.seed).spawn(chains)`` and may run
    on separate threads; draws are concatenated in chain order.
    """
    cfg = cfg or BartConfig()
    if d.n == 0:
        raise ValueError("empty dataset")
    if d.p == 0:
        raise ValueError("BART needs at least one confounder")
    C = np.ascontiguousarray(d.confounders, dtype=float)
    X = d.treatment
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if cfg.workers > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            res = list(pool.map(lambda s: _run_chain(C, X, cfg, s), seeds))
    else:
        res = [_run_chain(C, X, cfg, s) for s in seeds]
    pi = np.vstack([r.pi for r in res])
    summary = forest_summary(res, d.names)
    return PropensityDraws(pi=pi, model="bart", meta={"config": cfg.__dict__.copy(),
                                                      "forest": summary,
                                                      "forests": [r.forest for r in res]})


def forest_summary(results, names) -> dict:
    depth = sum(r.depth_counts for r in results)
    usage = sum(r.var_usage for r in results)
    last = int(np.max(np.flatnonzero(depth))) + 1 if depth.any() else 1
    tot = usage.sum()
    return {
        "tree_depth_counts": {str(k): int(depth[k]) for k in range(last)},
        "split_counts": {nm: int(u) for nm, u in zip(names, usage)},
        "split_share": {nm: (float(u) / tot if tot else 0.0) for nm, u in zip(names, usage)},
    }


def write_forest_summary(pd: PropensityDraws, path) -> None:
    with open(path, "w") as fh:
        json.dump(pd.meta["forest"], fh, indent=2, sort_keys=True)
        fh.write("\n")
