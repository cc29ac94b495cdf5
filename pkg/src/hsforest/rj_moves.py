"""Reversible-jump GROW / PRUNE / CHANGE updates for a single tree.

New leaf parameters are drawn from pseudo-Gibbs kernels seeded by an existing
leaf ``s``::

    nu'    ~ IG(1, 1/alpha^2 + 1/lam2_s)
    lam2'  ~ IG(1, 1/nu' + h_s^2 / (2 tau2 omega))
    h'     ~ N(sum_wr / prec, sigma2 / prec),  prec = sum_w2 + sigma2 / (tau2 lam2' omega)

GROW seeds both children from the split leaf; PRUNE seeds the merged leaf
from the left child; CHANGE seeds each child from its current values. The
densities of the draws actually made enter the acceptance ratio, and
the split-rule selection probability cancels against its prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba as nb
import numpy as np

from .distributions import RngStream, _log_ig_pdf, _log_norm_pdf, _rinvgamma
from .errors import ParameterError
from .horseshoe import GlobalShrinkage, ShrinkageConfig, _leaf_post, _refresh_tree
from .tree import (CUT, DEPTH, H, LAM2, LEFT, NO_DEPTH_LIMIT, NU, PARENT, RIGHT, VAR,
                   LeafParams, SplitData, SplitRule, Tree, _assign, _collapse_nog,
                   _count_leaves, _count_nogs, _draw_rule, _leaves, _log_leaf_prob,
                   _log_split_prob, _nogs, _obs_in, _send_left, _single_rule,
                   _split_leaf, _splittable)

GROW, PRUNE, CHANGE = 0, 1, 2
MOVE_NAMES = ("grow", "prune", "change")


@dataclass(frozen=True)
class MoveConfig:
    p_grow: float = 0.4
    p_prune: float = 0.4
    p_change: float = 0.2

    def __post_init__(self):
        ps = (self.p_grow, self.p_prune, self.p_change)
        if min(ps) < 0 or abs(sum(ps) - 1.0) > 1e-12:
            raise ParameterError("move probabilities must be non-negative and sum to 1")
        if (self.p_grow > 0) != (self.p_prune > 0):
            raise ParameterError("GROW and PRUNE must both be enabled or both disabled")


# ---------------------------------------------------------------------------
# scalar density pieces


@nb.njit(cache=True)
def _loglik(sum_w2, sum_wr, h, sigma2):
    # Gaussian log-likelihood of a leaf region up to terms that do not involve h
    return (h * sum_wr - 0.5 * h * h * sum_w2) / sigma2


@nb.njit(cache=True)
def _log_leaf_prior(h, lam2, nu, tau2, omega, alpha):
    return (_log_norm_pdf(h, 0.0, omega * lam2 * tau2)
            + _log_ig_pdf(lam2, 0.5, 1.0 / nu)
            + _log_ig_pdf(nu, 0.5, 1.0 / (alpha * alpha)))


@nb.njit(cache=True)
def _log_q(h, lam2, nu, h_seed, lam2_seed, sum_w2, sum_wr, sigma2, tau2, omega, alpha):
    lq = _log_ig_pdf(nu, 1.0, 1.0 / (alpha * alpha) + 1.0 / lam2_seed)
    lq += _log_ig_pdf(lam2, 1.0, 1.0 / nu + h_seed * h_seed / (2.0 * tau2 * omega))
    mean, var = _leaf_post(sum_w2, sum_wr, sigma2, omega * lam2 * tau2)
    return lq + _log_norm_pdf(h, mean, var)


@nb.njit(cache=True)
def _draw_q(h_seed, lam2_seed, sum_w2, sum_wr, sigma2, tau2, omega, alpha):
    nu = _rinvgamma(1.0, 1.0 / (alpha * alpha) + 1.0 / lam2_seed)
    lam2 = _rinvgamma(1.0, 1.0 / nu + h_seed * h_seed / (2.0 * tau2 * omega))
    mean, var = _leaf_post(sum_w2, sum_wr, sigma2, omega * lam2 * tau2)
    h = mean + math.sqrt(var) * np.random.standard_normal()
    return h, lam2, nu


# ---------------------------------------------------------------------------
# acceptance ratios; each returns (log-likelihood, log-prior, log-transition)


@nb.njit(cache=True)
def _ratio_grow(depth, split_l, split_r, n_leaves, n_nogs_after,
                hp, lp, nup, hl, ll, nul, hr, lr, nur,
                sl2, slr, sr2, srr, sigma2, tau2, omega, alpha, a, b, max_depth,
                p_grow, p_prune):
    lik = (_loglik(sl2, slr, hl, sigma2) + _loglik(sr2, srr, hr, sigma2)
           - _loglik(sl2 + sr2, slr + srr, hp, sigma2))
    prior = (_log_split_prob(depth, a, b, max_depth)
             + _log_leaf_prob(depth + 1, a, b, max_depth, split_l)
             + _log_leaf_prob(depth + 1, a, b, max_depth, split_r)
             - _log_leaf_prob(depth, a, b, max_depth, True))
    prior += (_log_leaf_prior(hl, ll, nul, tau2, omega, alpha)
              + _log_leaf_prior(hr, lr, nur, tau2, omega, alpha)
              - _log_leaf_prior(hp, lp, nup, tau2, omega, alpha))
    # reverse: PRUNE picks this nog, merged leaf seeded from the left child
    q_rev = _log_q(hp, lp, nup, hl, ll, sl2 + sr2, slr + srr, sigma2, tau2, omega, alpha)
    q_fwd = (_log_q(hl, ll, nul, hp, lp, sl2, slr, sigma2, tau2, omega, alpha)
             + _log_q(hr, lr, nur, hp, lp, sr2, srr, sigma2, tau2, omega, alpha))
    trans = (math.log(p_prune) - math.log(p_grow)
             + math.log(n_leaves) - math.log(n_nogs_after) + q_rev - q_fwd)
    return lik, prior, trans


@nb.njit(cache=True)
def _ratio_prune(depth, split_l, split_r, n_leaves, n_nogs,
                 hp, lp, nup, hl, ll, nul, hr, lr, nur,
                 sl2, slr, sr2, srr, sigma2, tau2, omega, alpha, a, b, max_depth,
                 p_grow, p_prune):
    # exact negation of the reverse GROW, which picks the merged leaf among
    # n_leaves - 1 leaves and ends with n_nogs nogs
    lik, prior, trans = _ratio_grow(depth, split_l, split_r, n_leaves - 1, n_nogs,
                                    hp, lp, nup, hl, ll, nul, hr, lr, nur,
                                    sl2, slr, sr2, srr, sigma2, tau2, omega, alpha, a, b,
                                    max_depth, p_grow, p_prune)
    return -lik, -prior, -trans


@nb.njit(cache=True)
def _ratio_change(depth, old_split_l, old_split_r, new_split_l, new_split_r,
                  hl, ll, nul, hr, lr, nur, hl2, ll2, nul2, hr2, lr2, nur2,
                  ol2, olr, or2, orr, nl2, nlr, nr2, nrr,
                  sigma2, tau2, omega, alpha, a, b, max_depth):
    lik = (_loglik(nl2, nlr, hl2, sigma2) + _loglik(nr2, nrr, hr2, sigma2)
           - _loglik(ol2, olr, hl, sigma2) - _loglik(or2, orr, hr, sigma2))
    prior = (_log_leaf_prob(depth + 1, a, b, max_depth, new_split_l)
             + _log_leaf_prob(depth + 1, a, b, max_depth, new_split_r)
             - _log_leaf_prob(depth + 1, a, b, max_depth, old_split_l)
             - _log_leaf_prob(depth + 1, a, b, max_depth, old_split_r))
    prior += (_log_leaf_prior(hl2, ll2, nul2, tau2, omega, alpha)
              + _log_leaf_prior(hr2, lr2, nur2, tau2, omega, alpha)
              - _log_leaf_prior(hl, ll, nul, tau2, omega, alpha)
              - _log_leaf_prior(hr, lr, nur, tau2, omega, alpha))
    q_rev = (_log_q(hl, ll, nul, hl2, ll2, ol2, olr, sigma2, tau2, omega, alpha)
             + _log_q(hr, lr, nur, hr2, lr2, or2, orr, sigma2, tau2, omega, alpha))
    q_fwd = (_log_q(hl2, ll2, nul2, hl, ll, nl2, nlr, sigma2, tau2, omega, alpha)
             + _log_q(hr2, lr2, nur2, hr, lr, nr2, nrr, sigma2, tau2, omega, alpha))
    return lik, prior, q_rev - q_fwd


# ---------------------------------------------------------------------------
# proposal kernels (draw, but do not modify the tree)


@nb.njit(cache=True)
def _stats(obs, R, w):
    s2 = 0.0
    sr = 0.0
    for t in range(obs.shape[0]):
        i = obs[t]
        s2 += w[i] * w[i]
        sr += w[i] * R[i]
    return s2, sr


@nb.njit(cache=True)
def _propose_grow(ints, floats, leaf_of, X, codes, uniq, R, w, tau2, sigma2, omega, alpha,
                  max_depth):
    leaves = _leaves(ints)
    n_leaves = leaves.shape[0]
    node = leaves[np.random.randint(0, n_leaves)]
    obs = _obs_in(leaf_of, node, node)
    depth = ints[node, DEPTH]
    # (ok, node, var, cut, depth, split_l, split_r, n_leaves, n_nogs_after,
    #  L params, R params, L stats, R stats)
    if not _splittable(codes, obs, depth, max_depth):
        return (False, node, -1, 0.0, depth, False, False, n_leaves, 0,
                0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    var, cut = _draw_rule(codes, uniq, obs)
    lbuf = np.empty(obs.shape[0], dtype=np.int64)
    rbuf = np.empty(obs.shape[0], dtype=np.int64)
    nl, nr = _send_left(X, obs, var, cut, lbuf, rbuf)
    sl2, slr = _stats(lbuf[:nl], R, w)
    sr2, srr = _stats(rbuf[:nr], R, w)
    split_l = _splittable(codes, lbuf[:nl], depth + 1, max_depth)
    split_r = _splittable(codes, rbuf[:nr], depth + 1, max_depth)
    hp = floats[node, H]
    lp = floats[node, LAM2]
    hl, ll, nul = _draw_q(hp, lp, sl2, slr, sigma2, tau2, omega, alpha)
    hr, lr, nur = _draw_q(hp, lp, sr2, srr, sigma2, tau2, omega, alpha)
    n_nogs = _count_nogs(ints) + 1
    parent = ints[node, PARENT]
    if parent >= 0:
        sib = ints[parent, LEFT] if ints[parent, RIGHT] == node else ints[parent, RIGHT]
        if ints[sib, LEFT] < 0:
            n_nogs -= 1
    return (True, node, var, cut, depth, split_l, split_r, n_leaves, n_nogs,
            hl, ll, nul, hr, lr, nur, sl2, slr, sr2, srr)


@nb.njit(cache=True)
def _propose_prune(ints, floats, leaf_of, codes, R, w, tau2, sigma2, omega, alpha, max_depth):
    nogs = _nogs(ints)
    if nogs.shape[0] == 0:
        return (False, -1, 0, False, False, 0, 0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    node = nogs[np.random.randint(0, nogs.shape[0])]
    depth = ints[node, DEPTH]
    left = ints[node, LEFT]
    right = ints[node, RIGHT]
    obs_l = _obs_in(leaf_of, left, left)
    obs_r = _obs_in(leaf_of, right, right)
    sl2, slr = _stats(obs_l, R, w)
    sr2, srr = _stats(obs_r, R, w)
    split_l = _splittable(codes, obs_l, depth + 1, max_depth)
    split_r = _splittable(codes, obs_r, depth + 1, max_depth)
    hp, lp, nup = _draw_q(floats[left, H], floats[left, LAM2], sl2 + sr2, slr + srr,
                          sigma2, tau2, omega, alpha)
    return (True, node, depth, split_l, split_r, _count_leaves(ints), nogs.shape[0],
            hp, lp, nup, sl2, slr, sr2, srr)


@nb.njit(cache=True)
def _propose_change(ints, floats, leaf_of, X, codes, uniq, R, w, tau2, sigma2, omega, alpha,
                    max_depth):
    nogs = _nogs(ints)
    empty = (False, -1, -1, 0.0, 0, False, False, False, False,
             0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    if nogs.shape[0] == 0:
        return empty
    node = nogs[np.random.randint(0, nogs.shape[0])]
    depth = ints[node, DEPTH]
    left = ints[node, LEFT]
    right = ints[node, RIGHT]
    obs = _obs_in(leaf_of, left, right)
    if _single_rule(codes, obs):
        return empty
    obs_l = _obs_in(leaf_of, left, left)
    obs_r = _obs_in(leaf_of, right, right)
    ol2, olr = _stats(obs_l, R, w)
    or2, orr = _stats(obs_r, R, w)
    old_split_l = _splittable(codes, obs_l, depth + 1, max_depth)
    old_split_r = _splittable(codes, obs_r, depth + 1, max_depth)
    var, cut = _draw_rule(codes, uniq, obs)
    lbuf = np.empty(obs.shape[0], dtype=np.int64)
    rbuf = np.empty(obs.shape[0], dtype=np.int64)
    nl, nr = _send_left(X, obs, var, cut, lbuf, rbuf)
    nl2, nlr = _stats(lbuf[:nl], R, w)
    nr2, nrr = _stats(rbuf[:nr], R, w)
    new_split_l = _splittable(codes, lbuf[:nl], depth + 1, max_depth)
    new_split_r = _splittable(codes, rbuf[:nr], depth + 1, max_depth)
    hl2, ll2, nul2 = _draw_q(floats[left, H], floats[left, LAM2], nl2, nlr, sigma2, tau2, omega, alpha)
    hr2, lr2, nur2 = _draw_q(floats[right, H], floats[right, LAM2], nr2, nrr, sigma2, tau2, omega, alpha)
    return (True, node, var, cut, depth, old_split_l, old_split_r, new_split_l, new_split_r,
            hl2, ll2, nul2, hr2, lr2, nur2, ol2, olr, or2, orr, nl2, nlr, nr2, nrr)


# ---------------------------------------------------------------------------
# applying accepted moves


@nb.njit(cache=True)
def _apply_grow(ints, floats, leaf_of, X, node, var, cut, hl, ll, nul, hr, lr, nur):
    left, right = _split_leaf(ints, floats, node, var, cut)
    floats[left, H] = hl
    floats[left, LAM2] = ll
    floats[left, NU] = nul
    floats[right, H] = hr
    floats[right, LAM2] = lr
    floats[right, NU] = nur
    for i in range(leaf_of.shape[0]):
        if leaf_of[i] == node:
            leaf_of[i] = left if X[i, var] < cut else right


@nb.njit(cache=True)
def _apply_prune(ints, floats, leaf_of, node, hp, lp, nup):
    left = ints[node, LEFT]
    right = ints[node, RIGHT]
    for i in range(leaf_of.shape[0]):
        if leaf_of[i] == left or leaf_of[i] == right:
            leaf_of[i] = node
    _collapse_nog(ints, floats, node)
    floats[node, H] = hp
    floats[node, LAM2] = lp
    floats[node, NU] = nup


@nb.njit(cache=True)
def _apply_change(ints, floats, leaf_of, X, node, var, cut, hl, ll, nul, hr, lr, nur):
    left = ints[node, LEFT]
    right = ints[node, RIGHT]
    ints[node, VAR] = var
    floats[node, CUT] = cut
    floats[left, H] = hl
    floats[left, LAM2] = ll
    floats[left, NU] = nul
    floats[right, H] = hr
    floats[right, LAM2] = lr
    floats[right, NU] = nur
    for i in range(leaf_of.shape[0]):
        if leaf_of[i] == left or leaf_of[i] == right:
            leaf_of[i] = left if X[i, var] < cut else right


# ---------------------------------------------------------------------------
# one full tree update


@nb.njit(cache=True)
def _rj_step(ints, floats, leaf_of, X, codes, uniq, R, w, glob, sigma2, omega, alpha,
             a, b, max_depth, p_grow, p_prune, counts):
    """Metropolis-Hastings move followed by the full leaf refresh.

    ``counts`` accumulates (proposed, accepted) per move kind.
    """
    tau2 = glob[0]
    u = np.random.random()
    accepted = False
    if u < p_grow:
        kind = GROW
        pr = _propose_grow(ints, floats, leaf_of, X, codes, uniq, R, w, tau2, sigma2,
                           omega, alpha, max_depth)
        if pr[0]:
            node = pr[1]
            lik, prior, trans = _ratio_grow(
                pr[4], pr[5], pr[6], pr[7], pr[8],
                floats[node, H], floats[node, LAM2], floats[node, NU],
                pr[9], pr[10], pr[11], pr[12], pr[13], pr[14],
                pr[15], pr[16], pr[17], pr[18], sigma2, tau2, omega, alpha, a, b, max_depth,
                p_grow, p_prune)
            if math.log(np.random.random()) < lik + prior + trans:
                _apply_grow(ints, floats, leaf_of, X, node, pr[2], pr[3],
                            pr[9], pr[10], pr[11], pr[12], pr[13], pr[14])
                accepted = True
    elif u < p_grow + p_prune:
        kind = PRUNE
        pr = _propose_prune(ints, floats, leaf_of, codes, R, w, tau2, sigma2, omega, alpha,
                            max_depth)
        if pr[0]:
            node = pr[1]
            left = ints[node, LEFT]
            right = ints[node, RIGHT]
            lik, prior, trans = _ratio_prune(
                pr[2], pr[3], pr[4], pr[5], pr[6], pr[7], pr[8], pr[9],
                floats[left, H], floats[left, LAM2], floats[left, NU],
                floats[right, H], floats[right, LAM2], floats[right, NU],
                pr[10], pr[11], pr[12], pr[13], sigma2, tau2, omega, alpha, a, b, max_depth,
                p_grow, p_prune)
            if math.log(np.random.random()) < lik + prior + trans:
                _apply_prune(ints, floats, leaf_of, node, pr[7], pr[8], pr[9])
                accepted = True
    else:
        kind = CHANGE
        pr = _propose_change(ints, floats, leaf_of, X, codes, uniq, R, w, tau2, sigma2,
                             omega, alpha, max_depth)
        if pr[0]:
            node = pr[1]
            left = ints[node, LEFT]
            right = ints[node, RIGHT]
            lik, prior, trans = _ratio_change(
                pr[4], pr[5], pr[6], pr[7], pr[8],
                floats[left, H], floats[left, LAM2], floats[left, NU],
                floats[right, H], floats[right, LAM2], floats[right, NU],
                pr[9], pr[10], pr[11], pr[12], pr[13], pr[14],
                pr[15], pr[16], pr[17], pr[18], pr[19], pr[20], pr[21], pr[22],
                sigma2, tau2, omega, alpha, a, b, max_depth)
            if math.log(np.random.random()) < lik + prior + trans:
                _apply_change(ints, floats, leaf_of, X, node, pr[2], pr[3],
                              pr[9], pr[10], pr[11], pr[12], pr[13], pr[14])
                accepted = True
    counts[2 * kind] += 1
    if accepted:
        counts[2 * kind + 1] += 1
    _refresh_tree(ints, floats, leaf_of, R, w, glob, sigma2, omega, alpha)
    return accepted


# ---------------------------------------------------------------------------
# Python-facing proposals


@dataclass
class Proposal:
    """Everything needed to evaluate, mirror or apply one RJ proposal.

    For GROW ``old_params`` is the split leaf and ``new_params`` the two
    children; PRUNE is the reverse; CHANGE maps two children to two children.
    ``old_stats`` / ``new_stats`` hold ``(sum w^2, sum w r)`` per leaf in the
    same order. ``n_leaves`` counts leaves of the current tree and ``n_nogs``
    the nog nodes of the tree the PRUNE side acts on.
    """

    kind: str
    node: int
    old_tree: Tree
    new_tree: Tree
    rule: SplitRule | None
    depth: int
    n_leaves: int
    n_nogs: int
    old_params: tuple
    new_params: tuple
    old_stats: np.ndarray
    new_stats: np.ndarray
    old_splittable: tuple = ()
    new_splittable: tuple = ()
    tau2: float = 1.0
    omega: float = 1.0
    alpha: float = 1.0
    sigma2: float = 1.0
    max_depth: int = NO_DEPTH_LIMIT
    log_q_forward: float = field(default=0.0)
    log_q_reverse: float = field(default=0.0)


def _prep(tree: Tree, residuals, data: SplitData, weights):
    R = np.ascontiguousarray(residuals, dtype=np.float64)
    if R.shape != (data.n,):
        raise ValueError("residuals must have one entry per observation")
    w = np.ones(data.n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    leaf_of = np.empty(data.n, dtype=np.int32)
    _assign(tree.ints, tree.floats, data.X, leaf_of)
    return R, w, leaf_of


def _q_pair(prop: Proposal):
    """Forward/reverse proposal log-densities recomputed from the record."""
    s2 = prop.sigma2
    args = (s2, prop.tau2, prop.omega, prop.alpha)
    if prop.kind == "grow":
        (P,), (L, R) = prop.old_params, prop.new_params
        sl, sr = prop.new_stats
        fwd = _log_q(*L, P.h, P.lam2, *sl, *args) + _log_q(*R, P.h, P.lam2, *sr, *args)
        rev = _log_q(*P, L.h, L.lam2, sl[0] + sr[0], sl[1] + sr[1], *args)
    elif prop.kind == "prune":
        (L, R), (P,) = prop.old_params, prop.new_params
        sl, sr = prop.old_stats
        fwd = _log_q(*P, L.h, L.lam2, sl[0] + sr[0], sl[1] + sr[1], *args)
        rev = _log_q(*L, P.h, P.lam2, *sl, *args) + _log_q(*R, P.h, P.lam2, *sr, *args)
    else:
        (L, R), (L2, R2) = prop.old_params, prop.new_params
        (ol, orr), (nl, nr) = prop.old_stats, prop.new_stats
        fwd = _log_q(*L2, L.h, L.lam2, *nl, *args) + _log_q(*R2, R.h, R.lam2, *nr, *args)
        rev = _log_q(*L, L2.h, L2.lam2, *ol, *args) + _log_q(*R, R2.h, R2.lam2, *orr, *args)
    return float(fwd), float(rev)


def _finish(prop: Proposal) -> Proposal:
    prop.log_q_forward, prop.log_q_reverse = _q_pair(prop)
    return prop


def propose_grow(tree: Tree, residuals, shrink: GlobalShrinkage, cfg: ShrinkageConfig,
                 sigma2: float, rng: RngStream, data: SplitData, weights=None,
                 max_depth: int | None = None) -> Proposal | None:
    """Propose splitting a uniformly chosen leaf; ``None`` means auto-reject."""
    R, w, leaf_of = _prep(tree, residuals, data, weights)
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    rng.seed_engine()
    pr = _propose_grow(tree.ints, tree.floats, leaf_of, data.X, data.codes, data.uniq, R, w,
                       shrink.tau2, sigma2, cfg.omega, cfg.alpha, md)
    if not pr[0]:
        return None
    node = int(pr[1])
    new = _grown(tree, node, pr[2], pr[3], pr[9:12], pr[12:15])
    return _finish(Proposal(
        "grow", node, tree.copy(), new, SplitRule(int(pr[2]), float(pr[3])), int(pr[4]),
        int(pr[7]), int(pr[8]), (tree.params(node),),
        (LeafParams(*pr[9:12]), LeafParams(*pr[12:15])),
        np.array([[pr[15] + pr[17], pr[16] + pr[18]]]),
        np.array([[pr[15], pr[16]], [pr[17], pr[18]]]),
        (), (bool(pr[5]), bool(pr[6])), shrink.tau2, cfg.omega, cfg.alpha, sigma2, md))


def _grown(tree: Tree, node, var, cut, lp, rp) -> Tree:
    new = tree.copy()
    left, right = _split_leaf(new.ints, new.floats, node, int(var), float(cut))
    new.set_params(left, LeafParams(*lp))
    new.set_params(right, LeafParams(*rp))
    return new


def propose_prune(tree: Tree, residuals, shrink: GlobalShrinkage, cfg: ShrinkageConfig,
                  sigma2: float, rng: RngStream, data: SplitData, weights=None,
                  max_depth: int | None = None) -> Proposal | None:
    """Propose collapsing a uniformly chosen nog node; ``None`` means auto-reject."""
    R, w, leaf_of = _prep(tree, residuals, data, weights)
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    rng.seed_engine()
    pr = _propose_prune(tree.ints, tree.floats, leaf_of, data.codes, R, w, shrink.tau2, sigma2,
                        cfg.omega, cfg.alpha, md)
    if not pr[0]:
        return None
    node = int(pr[1])
    left, right = tree.children(node)
    new = tree.copy()
    _collapse_nog(new.ints, new.floats, node)
    new.set_params(node, LeafParams(*pr[7:10]))
    return _finish(Proposal(
        "prune", node, tree.copy(), new, None, int(pr[2]), int(pr[5]), int(pr[6]),
        (tree.params(left), tree.params(right)), (LeafParams(*pr[7:10]),),
        np.array([[pr[10], pr[11]], [pr[12], pr[13]]]),
        np.array([[pr[10] + pr[12], pr[11] + pr[13]]]),
        (bool(pr[3]), bool(pr[4])), (), shrink.tau2, cfg.omega, cfg.alpha, sigma2, md))


def propose_change(tree: Tree, residuals, shrink: GlobalShrinkage, cfg: ShrinkageConfig,
                   sigma2: float, rng: RngStream, data: SplitData, weights=None,
                   max_depth: int | None = None) -> Proposal | None:
    """Propose a new split rule at a uniformly chosen nog; ``None`` means auto-reject."""
    R, w, leaf_of = _prep(tree, residuals, data, weights)
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    rng.seed_engine()
    pr = _propose_change(tree.ints, tree.floats, leaf_of, data.X, data.codes, data.uniq, R, w,
                         shrink.tau2, sigma2, cfg.omega, cfg.alpha, md)
    if not pr[0]:
        return None
    node = int(pr[1])
    left, right = tree.children(node)
    new = tree.copy()
    new.ints[node, VAR] = pr[2]
    new.floats[node, CUT] = pr[3]
    new.set_params(left, LeafParams(*pr[9:12]))
    new.set_params(right, LeafParams(*pr[12:15]))
    return _finish(Proposal(
        "change", node, tree.copy(), new, SplitRule(int(pr[2]), float(pr[3])), int(pr[4]),
        tree.n_leaves, len(tree.nogs()),
        (tree.params(left), tree.params(right)),
        (LeafParams(*pr[9:12]), LeafParams(*pr[12:15])),
        np.array([[pr[15], pr[16]], [pr[17], pr[18]]]),
        np.array([[pr[19], pr[20]], [pr[21], pr[22]]]),
        (bool(pr[5]), bool(pr[6])), (bool(pr[7]), bool(pr[8])),
        shrink.tau2, cfg.omega, cfg.alpha, sigma2, md))


def accept_ratio_terms(prop: Proposal, move_cfg: MoveConfig = MoveConfig(), a: float = 0.95,
                       b: float = 2.0, sigma2: float | None = None):
    """``(log-likelihood ratio, log-prior ratio, log-transition ratio)``."""
    s2 = prop.sigma2 if sigma2 is None else float(sigma2)
    common = (s2, prop.tau2, prop.omega, prop.alpha, a, b, prop.max_depth)
    if prop.kind == "grow":
        (P,), (L, R) = prop.old_params, prop.new_params
        (sl, sr) = prop.new_stats
        out = _ratio_grow(prop.depth, *prop.new_splittable, prop.n_leaves, prop.n_nogs,
                          *P, *L, *R, *sl, *sr, *common, move_cfg.p_grow, move_cfg.p_prune)
    elif prop.kind == "prune":
        (L, R), (P,) = prop.old_params, prop.new_params
        (sl, sr) = prop.old_stats
        out = _ratio_prune(prop.depth, *prop.old_splittable, prop.n_leaves, prop.n_nogs,
                           *P, *L, *R, *sl, *sr, *common, move_cfg.p_grow, move_cfg.p_prune)
    else:
        (L, R), (L2, R2) = prop.old_params, prop.new_params
        (ol, orr), (nl, nr) = prop.old_stats, prop.new_stats
        out = _ratio_change(prop.depth, *prop.old_splittable, *prop.new_splittable,
                            *L, *R, *L2, *R2, *ol, *orr, *nl, *nr, *common)
    return tuple(float(x) for x in out)


def log_accept_ratio(prop: Proposal, move_cfg: MoveConfig = MoveConfig(), a: float = 0.95,
                     b: float = 2.0, sigma2: float | None = None) -> float:
    """Log Metropolis-Hastings-Green ratio of a proposal (unit Jacobian)."""
    return float(sum(accept_ratio_terms(prop, move_cfg, a, b, sigma2)))


def mirror_proposal(prop: Proposal) -> Proposal:
    """The reverse move of a GROW or PRUNE proposal, rebuilt from its record."""
    if prop.kind == "grow":
        kind, n_leaves = "prune", prop.n_leaves + 1
        old_split, new_split = prop.new_splittable, ()
    elif prop.kind == "prune":
        kind, n_leaves = "grow", prop.n_leaves - 1
        old_split, new_split = (), prop.old_splittable
    else:
        raise ValueError("only GROW and PRUNE proposals have a dimension-changing mirror")
    rev = Proposal(kind, prop.node, prop.new_tree.copy(), prop.old_tree.copy(), prop.rule,
                   prop.depth, n_leaves, prop.n_nogs, prop.new_params, prop.old_params,
                   prop.new_stats.copy(), prop.old_stats.copy(), old_split, new_split,
                   prop.tau2, prop.omega, prop.alpha, prop.sigma2, prop.max_depth)
    return _finish(rev)


def rj_update_tree(tree: Tree, shrink: GlobalShrinkage, residuals, sigma2: float,
                   cfg: ShrinkageConfig, move_cfg: MoveConfig, rng: RngStream,
                   data: SplitData, weights=None, a: float = 0.95, b: float = 2.0,
                   max_depth: int | None = None, counts=None):
    """One reversible-jump move plus the full leaf refresh.

    Returns ``(tree, shrink, accepted)``; inputs are not modified. ``counts``
    (length 6: proposed/accepted for grow, prune, change) is updated in place
    when given.
    """
    R, w, leaf_of = _prep(tree, residuals, data, weights)
    need = 2 * data.n + 1
    if tree.capacity < need:
        out = Tree.stump(need)
        out.ints[: tree.capacity] = tree.ints
        out.floats[: tree.capacity] = tree.floats
    else:
        out = tree.copy()
    glob = np.array([shrink.tau2, shrink.xi])
    cnt = np.zeros(6, dtype=np.int64) if counts is None else counts
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    rng.seed_engine()
    accepted = _rj_step(out.ints, out.floats, leaf_of, data.X, data.codes, data.uniq, R, w,
                        glob, float(sigma2), float(cfg.omega), float(cfg.alpha), float(a),
                        float(b), md, move_cfg.p_grow, move_cfg.p_prune, cnt)
    return out, GlobalShrinkage(float(glob[0]), float(glob[1])), bool(accepted)


class TreeChainTrace(NamedTuple):
    leaves: np.ndarray
    h: np.ndarray
    lam2: np.ndarray
    tau2: np.ndarray
    counts: np.ndarray


@nb.njit(cache=True)
def _tree_chain(ints, floats, leaf_of, X, codes, uniq, y, glob, sigma2, omega, alpha, a, b,
                max_depth, p_grow, p_prune, counts, leaves_out, h_out, lam2_out, tau2_out):
    w = np.ones(y.shape[0])
    for t in range(leaves_out.shape[0]):
        _rj_step(ints, floats, leaf_of, X, codes, uniq, y, w, glob, sigma2, omega, alpha,
                 a, b, max_depth, p_grow, p_prune, counts)
        leaves_out[t] = _count_leaves(ints)
        h_out[t] = floats[0, H]
        lam2_out[t] = floats[0, LAM2]
        tau2_out[t] = glob[0]


def tree_chain(X, y, sigma2: float, cfg: ShrinkageConfig, iterations: int, rng: RngStream,
               move_cfg: MoveConfig = MoveConfig(), a: float = 0.95, b: float = 2.0,
               max_depth: int | None = None):
    """Single-tree sampler with the error variance held fixed.

    Returns traces of the leaf count, the root's step height and local scale
    (meaningful while the root is a leaf) and tau^2, plus the move counters.
    """
    data = X if isinstance(X, SplitData) else SplitData(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    tree = Tree.stump(2 * data.n + 1)
    leaf_of = np.zeros(data.n, dtype=np.int32)
    g0 = cfg.initial_global()
    glob = np.array([g0.tau2, g0.xi])
    counts = np.zeros(6, dtype=np.int64)
    leaves = np.empty(iterations, dtype=np.int64)
    h = np.empty(iterations)
    lam2 = np.empty(iterations)
    tau2 = np.empty(iterations)
    md = NO_DEPTH_LIMIT if max_depth is None else int(max_depth)
    rng.seed_engine()
    _tree_chain(tree.ints, tree.floats, leaf_of, data.X, data.codes, data.uniq, y, glob,
                float(sigma2), float(cfg.omega), float(cfg.alpha), float(a), float(b), md,
                move_cfg.p_grow, move_cfg.p_prune, counts, leaves, h, lam2, tau2)
    return TreeChainTrace(leaves, h, lam2, tau2, counts)
