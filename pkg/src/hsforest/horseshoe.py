"""Full-conditional updates for step heights and the horseshoe hierarchy.

Prior per tree, with L leaves::

    h_l | lam2_l, tau2   ~ N(0, omega * lam2_l * tau2)
    lam2_l | nu_l        ~ IG(1/2, 1/nu_l),     nu_l ~ IG(1/2, 1/alpha^2)
    tau2 | xi            ~ IG(1/2, 1/xi),       xi   ~ IG(1/2, 1/alpha^2)

which makes every scale half-Cauchy(0, alpha). The step-height prior does not
involve the error variance, so the leaf precision is
``n_l + sigma2 / (tau2 * lam2_l * omega)``; at ``sigma2 = 1`` this is the
textbook ``n_l + 1 / (tau2 * lam2_l * omega)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .distributions import RngStream, _rinvgamma
from .errors import ParameterError
from .tree import DEPTH, H, LAM2, LEFT, NU, PartitionStats, Tree


@dataclass
class GlobalShrinkage:
    tau2: float
    xi: float = 1.0


@dataclass(frozen=True)
class ShrinkageConfig:
    omega: float
    k: float
    m: int

    @property
    def alpha(self) -> float:
        return self.k / math.sqrt(self.m)

    def initial_global(self) -> GlobalShrinkage:
        # tau = alpha is the half-Cauchy median
        return GlobalShrinkage(tau2=self.alpha**2, xi=1.0)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _leaf_post(sum_w2, sum_wr, sigma2, prior_var):
    prec = sum_w2 + sigma2 / prior_var
    return sum_wr / prec, sigma2 / prec


@nb.njit(cache=True)
def _draw_local(h, tau2, omega, nu, alpha):
    lam2 = _rinvgamma(1.0, 1.0 / nu + h * h / (2.0 * tau2 * omega))
    nu = _rinvgamma(1.0, 1.0 / (alpha * alpha) + 1.0 / lam2)
    return lam2, nu


@nb.njit(cache=True)
def _draw_global(L, sum_h2_over_lam2, xi, omega, alpha):
    tau2 = _rinvgamma(0.5 * (L + 1), 1.0 / xi + sum_h2_over_lam2 / (2.0 * omega))
    xi = _rinvgamma(1.0, 1.0 / (alpha * alpha) + 1.0 / tau2)
    return tau2, xi


@nb.njit(cache=True)
def _refresh_from_stats(floats, leaves, sw2, swr, glob, sigma2, omega, alpha):
    """Heights, then local scales, then the tree's global scale."""
    tau2 = glob[0]
    for t in range(leaves.shape[0]):
        node = leaves[t]
        mean, var = _leaf_post(sw2[t], swr[t], sigma2, omega * floats[node, LAM2] * tau2)
        floats[node, H] = mean + math.sqrt(var) * np.random.standard_normal()
    s = 0.0
    for t in range(leaves.shape[0]):
        node = leaves[t]
        lam2, nu = _draw_local(floats[node, H], tau2, omega, floats[node, NU], alpha)
        floats[node, LAM2] = lam2
        floats[node, NU] = nu
        s += floats[node, H] ** 2 / lam2
    glob[0], glob[1] = _draw_global(leaves.shape[0], s, glob[1], omega, alpha)


@nb.njit(cache=True)
def _refresh_tree(ints, floats, leaf_of, R, w, glob, sigma2, omega, alpha):
    """Gather per-leaf statistics from the residuals and refresh the tree."""
    cap = ints.shape[0]
    sw2 = np.zeros(cap)
    swr = np.zeros(cap)
    for i in range(leaf_of.shape[0]):
        node = leaf_of[i]
        sw2[node] += w[i] * w[i]
        swr[node] += w[i] * R[i]
    k = 0
    leaves = np.empty(cap, dtype=np.int32)
    for node in range(cap):
        if ints[node, DEPTH] >= 0 and ints[node, LEFT] < 0:
            leaves[k] = node
            sw2[k] = sw2[node]
            swr[k] = swr[node]
            k += 1
    _refresh_from_stats(floats, leaves[:k], sw2[:k], swr[:k], glob, sigma2, omega, alpha)


# ---------------------------------------------------------------------------
# public API


def leaf_height_conditional(n_leaf, rbar, sigma2, tau2, lambda2, omega):
    """Mean and variance of the Gaussian full conditional of one step height.

    ``rbar`` is the SUM of the residuals in the leaf.
    """
    if not n_leaf >= 1:
        raise ParameterError("leaf must contain at least one observation")
    for name, val in (("sigma2", sigma2), ("tau2", tau2), ("lambda2", lambda2), ("omega", omega)):
        if not val > 0:
            raise ParameterError(f"{name} must be positive")
    mean, var = _leaf_post(float(n_leaf), float(rbar), float(sigma2), float(tau2 * lambda2 * omega))
    return float(mean), float(var)


def local_shrinkage_params(h, tau2, omega, nu):
    """(shape, scale) of the inverse-gamma conditional of lambda^2."""
    return 1.0, 1.0 / nu + h * h / (2.0 * tau2 * omega)


def local_auxiliary_params(lambda2, alpha):
    """(shape, scale) of the inverse-gamma conditional of nu."""
    return 1.0, 1.0 / alpha**2 + 1.0 / lambda2


def global_shrinkage_params(heights, lambdas, xi, omega):
    """(shape, scale) of the inverse-gamma conditional of tau^2."""
    h = np.asarray(heights, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if h.shape != lam.shape or h.ndim != 1 or h.size < 1:
        raise ValueError("heights and lambdas must be equal-length non-empty vectors")
    return 0.5 * (h.size + 1), 1.0 / xi + float(np.sum(h * h / lam)) / (2.0 * omega)


def global_auxiliary_params(tau2, alpha):
    """(shape, scale) of the inverse-gamma conditional of xi."""
    return 1.0, 1.0 / alpha**2 + 1.0 / tau2


def update_local_shrinkage(h, tau2, omega, nu, alpha, rng: RngStream):
    """Draw lambda^2 then nu from their conditionals; returns ``(lambda2, nu)``."""
    for name, val in (("tau2", tau2), ("omega", omega), ("nu", nu), ("alpha", alpha)):
        if not val > 0:
            raise ParameterError(f"{name} must be positive")
    rng.seed_engine()
    lam2, nu = _draw_local(float(h), float(tau2), float(omega), float(nu), float(alpha))
    return float(lam2), float(nu)


def update_global_shrinkage(heights, lambdas, xi, omega, alpha, rng: RngStream):
    """Draw tau^2 then xi from their conditionals; returns ``(tau2, xi)``."""
    h = np.asarray(heights, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if h.shape != lam.shape or h.ndim != 1 or h.size < 1:
        raise ValueError("heights and lambdas must be equal-length non-empty vectors")
    rng.seed_engine()
    tau2, xi = _draw_global(h.size, float(np.sum(h * h / lam)), float(xi), float(omega), float(alpha))
    return float(tau2), float(xi)


def refresh_leaf_block(tree: Tree, stats: PartitionStats, shrink: GlobalShrinkage,
                       cfg: ShrinkageConfig, sigma2: float, rng: RngStream) -> Tree:
    """Redraw every step height, then every (lambda^2, nu), then (tau^2, xi).

    Returns an updated copy of ``tree``; ``shrink`` is updated in place.
    """
    leaves = tree.leaves()
    if not np.array_equal(np.asarray(stats.leaves), leaves):
        raise ValueError("partition statistics are not aligned with the tree's leaves")
    out = tree.copy()
    glob = np.array([shrink.tau2, shrink.xi])
    rng.seed_engine()
    _refresh_from_stats(out.floats, leaves, np.asarray(stats.n, dtype=float),
                        np.asarray(stats.rsum, dtype=float), glob, float(sigma2),
                        float(cfg.omega), float(cfg.alpha))
    shrink.tau2, shrink.xi = float(glob[0]), float(glob[1])
    return out
