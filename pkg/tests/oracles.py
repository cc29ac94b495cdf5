"""Independent reference computations: deterministic quadrature for the
horseshoe normal-means posterior and brute-force enumeration of small trees.

Everything here uses plain numpy/scipy and none of the package's samplers.
"""

import itertools
import math

import numpy as np
from scipy import special


def _gl(npts):
    # Gauss-Legendre nodes/weights mapped to theta in (0, pi/2)
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1) * math.pi / 4, w * math.pi / 4


def _split_grid(npts, pieces=8):
    # composite rule on (0, pi/2); the integrands steepen near pi/2
    edges = np.linspace(0.0, math.pi / 2, pieces + 1)
    x, w = np.polynomial.legendre.leggauss(npts)
    th, wt = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        th.append(lo + (x + 1) * (hi - lo) / 2)
        wt.append(w * (hi - lo) / 2)
    return np.concatenate(th), np.concatenate(wt)


def normal_means_moments(n, sum_y, sigma2, omega, alpha, npts=200):
    """Posterior mean and variance of h for y_i ~ N(h, sigma2), i = 1..n,
    h ~ N(0, omega lam^2 tau^2), lam, tau ~ half-Cauchy(0, alpha).

    With lam = alpha tan(theta) the half-Cauchy becomes uniform on
    (0, pi/2), h is integrated analytically, and the remaining 2-D integral
    over (theta_lam, theta_tau) uses a composite Gauss-Legendre rule.
    """
    th, wt = _split_grid(npts)
    t1, t2 = np.meshgrid(th, th, indexing="ij")
    W = np.outer(wt, wt)
    v = omega * (alpha * np.tan(t1)) ** 2 * (alpha * np.tan(t2)) ** 2
    ybar = sum_y / n
    # marginal of ybar given v
    s2 = sigma2 / n + v
    logw = -0.5 * np.log(s2) - 0.5 * ybar**2 / s2
    wts = W * np.exp(logw - logw.max())
    prec = n / sigma2 + 1.0 / v
    m = (sum_y / sigma2) / prec
    var = 1.0 / prec
    Z = wts.sum()
    mean = (wts * m).sum() / Z
    second = (wts * (var + m * m)).sum() / Z
    return mean, second - mean**2


def normal_means_log_lambda2(n, sum_y, sigma2, omega, alpha, npts=200):
    """Posterior mean of log lambda^2 in the model of :func:`normal_means_moments`
    (E[lambda^2] itself is infinite)."""
    th, wt = _split_grid(npts)
    t1, t2 = np.meshgrid(th, th, indexing="ij")
    W = np.outer(wt, wt)
    lam2 = (alpha * np.tan(t1)) ** 2
    v = omega * lam2 * (alpha * np.tan(t2)) ** 2
    s2 = sigma2 / n + v
    logw = -0.5 * np.log(s2) - 0.5 * (sum_y / n) ** 2 / s2
    wts = W * np.exp(logw - logw.max())
    return float((wts * np.log(lam2)).sum() / wts.sum())


def _leaf_log_marginal(y_leaf, v, sigma2):
    """log N(y_leaf; 0, sigma2 I + v 11^T) for a vector of v values."""
    k = len(y_leaf)
    s = float(np.sum(y_leaf))
    ss = float(np.sum(np.square(y_leaf)))
    # determinant and inverse via the rank-one update
    logdet = k * math.log(sigma2) + np.log1p(k * v / sigma2)
    quad = ss / sigma2 - (v / sigma2**2) * s * s / (1 + k * v / sigma2)
    return -0.5 * (k * math.log(2 * math.pi) + logdet + quad)


def enumerate_trees(x, max_depth):
    """All trees over the 1-D points ``x`` splitting at observed values with
    strict ``x < cut`` routing. Each tree is a list of leaves, every leaf a
    (rows, depth) pair, with the log structural prior pieces attached."""
    x = np.asarray(x, dtype=float)

    def build(rows, depth):
        vals = np.unique(x[rows])
        out = []
        splittable = len(rows) >= 2 and len(vals) >= 2 and depth < max_depth
        out.append(([(tuple(rows), depth, splittable)], []))
        if not splittable:
            return out
        cuts = vals[1:]
        for c in cuts:
            left = [r for r in rows if x[r] < c]
            right = [r for r in rows if x[r] >= c]
            for (ll, li), (rl, ri) in itertools.product(build(left, depth + 1),
                                                        build(right, depth + 1)):
                out.append((ll + rl, [(depth, len(cuts))] + li + ri))
        return out

    return build(list(range(len(x))), 0)


def enumerated_leaf_distribution(x, y, sigma2, omega, alpha, a, b, max_depth, npts=120):
    """Posterior probability of each leaf count for a single tree with the
    horseshoe step-height prior (tau shared by the leaves), sigma2 fixed."""
    th, wt = _split_grid(npts)
    y = np.asarray(y, dtype=float)
    lam2 = (alpha * np.tan(th)) ** 2
    tau2 = (alpha * np.tan(th)) ** 2
    post = {}
    for leaves, internals in enumerate_trees(x, max_depth):
        lp = 0.0
        for depth, ncuts in internals:
            lp += math.log(a) - b * math.log1p(depth) - math.log(ncuts)  # one variable
        for rows, depth, splittable in leaves:
            if splittable:
                lp += math.log1p(-a / (1 + depth) ** b)
        # marginal likelihood: integrate lam per leaf, then tau
        log_per_tau = np.zeros_like(tau2)
        for rows, _, _ in leaves:
            v = omega * np.outer(tau2, lam2)
            lm = _leaf_log_marginal(y[list(rows)], v, sigma2)
            mx = lm.max(axis=1, keepdims=True)
            log_per_tau += (mx[:, 0] + np.log((np.exp(lm - mx) * wt[None, :]).sum(axis=1)
                                              * 2 / math.pi))
        mx = log_per_tau.max()
        lml = mx + math.log(float((np.exp(log_per_tau - mx) * wt).sum() * 2 / math.pi))
        k = len(leaves)
        post[k] = np.logaddexp(post.get(k, -np.inf), lp + lml)
    keys = sorted(post)
    vals = np.array([post[k] for k in keys])
    p = np.exp(vals - special.logsumexp(vals))
    return dict(zip(keys, p))
