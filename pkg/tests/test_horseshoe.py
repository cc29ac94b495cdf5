import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from oracles import normal_means_log_lambda2
from hsforest.distributions import RngStream
from hsforest.errors import ParameterError
from hsforest.horseshoe import (GlobalShrinkage, ShrinkageConfig, global_auxiliary_params,
                                global_shrinkage_params, leaf_height_conditional,
                                local_auxiliary_params, local_shrinkage_params,
                                refresh_leaf_block, update_global_shrinkage,
                                update_local_shrinkage)
from hsforest.rj_moves import tree_chain
from hsforest.tree import PartitionStats, Tree


def test_leaf_conditional_example_and_quadrature():
    mean, var = leaf_height_conditional(2, 2.0, 1.0, 1.0, 1.0, 1.0)
    assert math.isclose(mean, 2 / 3) and math.isclose(var, 1 / 3)
    # cross-check: unnormalized posterior of h given two residuals summing to 2
    r = np.array([0.5, 1.5])
    dens = lambda h: np.prod(stats.norm.pdf(r, h, 1.0)) * stats.norm.pdf(h, 0, 1.0)
    Z = integrate.quad(dens, -20, 20)[0]
    m = integrate.quad(lambda h: h * dens(h), -20, 20)[0] / Z
    v = integrate.quad(lambda h: (h - m) ** 2 * dens(h), -20, 20)[0] / Z
    assert math.isclose(m, mean, rel_tol=1e-8) and math.isclose(v, var, rel_tol=1e-8)


def test_leaf_conditional_limits():
    assert leaf_height_conditional(3, 0.0, 2.0, 0.3, 0.7, 0.5)[0] == 0.0
    mean, _ = leaf_height_conditional(4, 2.0, 1.0, 1e12, 1e12, 1.0)
    assert abs(mean - 0.5) < 1e-12
    with pytest.raises(ParameterError):
        leaf_height_conditional(0, 1.0, 1.0, 1.0, 1.0, 1.0)


@given(st.floats(0.01, 100), st.floats(-10, 10), st.integers(1, 50), st.floats(0.1, 5))
def test_shrinkage_monotone(v, rsum, n, sigma2):
    m1, s1 = leaf_height_conditional(n, rsum, sigma2, v, 1.0, 1.0)
    m2, s2 = leaf_height_conditional(n, rsum, sigma2, v / 2, 1.0, 1.0)
    if rsum != 0:
        assert abs(m2) < abs(m1)
    assert s2 < s1


def test_conditional_parameter_examples():
    assert local_shrinkage_params(2.0, 1.0, 1.0, 1.0) == (1.0, 3.0)
    assert local_shrinkage_params(0.0, 1.0, 1.0, 2.0) == (1.0, 0.5)
    assert local_auxiliary_params(4.0, 0.1)[1] == pytest.approx(100.25)
    assert global_shrinkage_params([1, 2], [1, 4], 0.5, 1.0) == (1.5, 3.0)
    assert global_shrinkage_params([0, 0, 0], [1, 2, 3], 0.25, 1.0) == (2.0, 4.0)
    assert global_auxiliary_params(4.0, 0.1)[1] == pytest.approx(100.25)
    with pytest.raises(ValueError):
        global_shrinkage_params([1, 2], [1], 1.0, 1.0)


def test_local_update_distribution():
    lam, nu = zip(*(update_local_shrinkage(2.0, 1.0, 1.0, 1.0, 1.0, RngStream(s))
                    for s in range(4000)))
    # lambda^2 | nu=1, h=2 ~ IG(1, 3)
    assert stats.kstest(lam, stats.invgamma(1, scale=3).cdf).pvalue > 1e-3
    assert all(x > 0 for x in lam + nu)


def test_global_update_distribution():
    tau = [update_global_shrinkage([1, 2], [1, 4], 0.5, 1.0, 0.1, RngStream(s))[0]
           for s in range(4000)]
    assert stats.kstest(tau, stats.invgamma(1.5, scale=3).cdf).pvalue > 1e-3
    with pytest.raises(ValueError):
        update_global_shrinkage([1, 2], [1], 1.0, 1.0, 0.1, RngStream(0))


def test_refresh_single_leaf_height_conditional():
    t = Tree.stump()
    stats_ = PartitionStats(np.array([0]), np.array([1.0]), np.array([0.0]))
    cfg = ShrinkageConfig(1.0, 1.0, 1)
    hs = []
    for s in range(4000):
        sh = GlobalShrinkage(1.0, 1.0)
        hs.append(refresh_leaf_block(t, stats_, sh, cfg, 1.0, RngStream(s)).params(0).h)
        assert sh.tau2 > 0 and sh.xi > 0
    assert stats.kstest(hs, stats.norm(0, math.sqrt(0.5)).cdf).pvalue > 1e-3


def test_refresh_exchangeable_leaves():
    t = Tree.from_nested((0, 0.5, (0.0, 2.0, 1.0), (0.0, 2.0, 1.0)))
    st_ = PartitionStats(t.leaves(), np.array([3.0, 3.0]), np.array([1.5, 1.5]))
    cfg = ShrinkageConfig(1.0, 1.0, 1)
    a, b = [], []
    for s in range(4000):
        out = refresh_leaf_block(t, st_, GlobalShrinkage(1.0, 1.0), cfg, 1.0, RngStream(s))
        a.append(out.params(int(t.leaves()[0])).h)
        b.append(out.params(int(t.leaves()[1])).h)
    assert stats.ks_2samp(a, b).pvalue > 1e-3
    assert abs(np.mean(a) - 1.5 / (3 + 0.5)) < 0.03


def test_refresh_checks_alignment():
    t = Tree.from_nested((0, 0.5, 0.0, 0.0))
    bad = PartitionStats(np.array([0]), np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        refresh_leaf_block(t, bad, GlobalShrinkage(1.0), ShrinkageConfig(1, 1, 1), 1.0, RngStream(0))


def test_refresh_order_matches_closed_form():
    """Heights are drawn first, from the closed form with the *incoming* scales."""
    t = Tree.stump(lam2=0.7)
    st_ = PartitionStats(np.array([0]), np.array([5.0]), np.array([4.0]))
    cfg = ShrinkageConfig(0.5, 1.0, 4)
    hs = [refresh_leaf_block(t, st_, GlobalShrinkage(0.3, 1.0), cfg, 2.0, RngStream(s)).params(0).h
          for s in range(4000)]
    mean, var = leaf_height_conditional(5, 4.0, 2.0, 0.3, 0.7, 0.5)
    assert stats.kstest(hs, stats.norm(mean, math.sqrt(var)).cdf).pvalue > 1e-3


def test_alpha_definition():
    cfg = ShrinkageConfig(1.0, 0.1, 200)
    assert cfg.alpha == 0.1 / math.sqrt(200)
    g = cfg.initial_global()
    assert g.tau2 == cfg.alpha**2 and g.xi == 1.0


def test_root_only_chain_matches_quadrature_log_lambda():
    n = 10
    y = 3.0 + np.linspace(-1, 1, n)
    cfg = ShrinkageConfig(1.0, 1.0, 1)
    ref = normal_means_log_lambda2(n, y.sum(), 1.0, 1.0, cfg.alpha)
    tr = tree_chain(np.zeros((n, 1)), y, 1.0, cfg, 50_000, RngStream(11), max_depth=0)
    assert abs(np.mean(np.log(tr.lam2)) / ref - 1) < 0.02
