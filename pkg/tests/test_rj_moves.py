import math

import numpy as np
import pytest
from scipy import stats

from hsforest.distributions import RngStream
from hsforest.errors import ParameterError
from hsforest.horseshoe import GlobalShrinkage, ShrinkageConfig, leaf_height_conditional
from hsforest.rj_moves import (MoveConfig, Proposal, _draw_q, accept_ratio_terms,
                               log_accept_ratio, mirror_proposal, propose_change, propose_grow,
                               propose_prune, rj_update_tree)
from hsforest.tree import LeafParams, SplitData, Tree, assign_leaves


def ig_logpdf(x, shape, scale):
    return stats.invgamma.logpdf(x, shape, scale=scale)


def q_density(child: LeafParams, seed: LeafParams, sw2, swr, sigma2, tau2, omega, alpha):
    """Pseudo-Gibbs proposal log-density written out with scipy."""
    out = ig_logpdf(child.nu, 1, 1 / alpha**2 + 1 / seed.lam2)
    out += ig_logpdf(child.lam2, 1, 1 / child.nu + seed.h**2 / (2 * tau2 * omega))
    prec = sw2 + sigma2 / (tau2 * child.lam2 * omega)
    return out + stats.norm.logpdf(child.h, swr / prec, math.sqrt(sigma2 / prec))


def leaf_prior(p: LeafParams, tau2, omega, alpha):
    return (stats.norm.logpdf(p.h, 0, math.sqrt(omega * p.lam2 * tau2))
            + ig_logpdf(p.lam2, 0.5, 1 / p.nu) + ig_logpdf(p.nu, 0.5, 1 / alpha**2))


def rho(d, a=0.95, b=2.0):
    return a / (1 + d) ** b


@pytest.fixture
def small():
    X = np.array([[0.1, 1.0], [0.4, 2.0], [0.7, 2.0]])
    y = np.array([0.3, -0.2, 1.4])
    return X, y, SplitData(X)


CFG = ShrinkageConfig(omega=0.5, k=1.0, m=4)
SH = GlobalShrinkage(0.7, 1.3)


def test_move_config_validation():
    MoveConfig()
    with pytest.raises(ParameterError):
        MoveConfig(0.5, 0.4, 0.2)
    with pytest.raises(ParameterError):
        MoveConfig(0.5, 0.0, 0.5)
    with pytest.raises(ParameterError):
        MoveConfig(-0.1, 0.6, 0.5)


def test_grow_child_height_kernel_example():
    assert leaf_height_conditional(1, 0.5, 1.0, 1.0, 1.0, 1.0) == pytest.approx((0.25, 0.5))
    assert leaf_height_conditional(3, 1.5, 1.0, 1.0, 1.0, 1.0) == pytest.approx((0.375, 0.25))


def test_grow_auxiliary_kernel_example():
    # parent lam2 = 1, alpha = 0.1, h = 0, tau2 = omega = 1
    RngStream(1).seed_engine()
    draws = np.array([_draw_q(0.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 0.1) for _ in range(20_000)])
    nu = draws[:, 2]
    assert stats.kstest(nu, stats.invgamma(1, scale=101).cdf).pvalue > 1e-3
    # lam2 | nu ~ IG(1, 1/nu): 1 / (lam2 * nu) ~ Exp(1)
    assert stats.kstest(1 / (draws[:, 1] * nu), "expon").pvalue > 1e-3


def test_grow_proposal_record(small):
    X, y, data = small
    tree = Tree.stump(7, h=0.2, lam2=1.5, nu=0.8)
    prop = propose_grow(tree, y, SH, CFG, 1.3, RngStream(2), data)
    assert prop.kind == "grow" and prop.new_tree.n_leaves == 2
    assert prop.n_leaves == 1 and prop.n_nogs == 1 and prop.depth == 0
    L, R = prop.new_params
    (sl, sr) = prop.new_stats
    P = prop.old_params[0]
    fwd = (q_density(L, P, *sl, 1.3, SH.tau2, CFG.omega, CFG.alpha)
           + q_density(R, P, *sr, 1.3, SH.tau2, CFG.omega, CFG.alpha))
    rev = q_density(P, L, sl[0] + sr[0], sl[1] + sr[1], 1.3, SH.tau2, CFG.omega, CFG.alpha)
    assert prop.log_q_forward == pytest.approx(fwd, abs=1e-10)
    assert prop.log_q_reverse == pytest.approx(rev, abs=1e-10)
    # children's residual stats match the rows actually routed to them
    asg = assign_leaves(prop.new_tree, X)
    for leaf, st in zip(prop.new_tree.children(0), prop.new_stats):
        rows = asg.node == leaf
        assert st[0] == rows.sum() and st[1] == pytest.approx(y[rows].sum())


def test_grow_ratio_factors_by_hand(small):
    X, y, data = small
    s2 = 1.3
    tree = Tree.stump(7, h=0.2, lam2=1.5, nu=0.8)
    prop = propose_grow(tree, y, SH, CFG, s2, RngStream(3), data)
    lik, prior, trans = accept_ratio_terms(prop)
    L, R = prop.new_params
    P = prop.old_params[0]
    asg = assign_leaves(prop.new_tree, X)
    left = asg.node == prop.new_tree.children(0)[0]
    h_new = np.where(left, L.h, R.h)
    lik_hand = (stats.norm.logpdf(y, h_new, math.sqrt(s2)).sum()
                - stats.norm.logpdf(y, P.h, math.sqrt(s2)).sum())
    assert lik == pytest.approx(lik_hand, abs=1e-10)
    # both children of a 3-row root may or may not be splittable
    sl, sr = prop.new_splittable
    struct = math.log(rho(0)) - math.log(1 - rho(0))
    struct += sl * math.log(1 - rho(1)) + sr * math.log(1 - rho(1))
    prior_hand = struct + (leaf_prior(L, SH.tau2, CFG.omega, CFG.alpha)
                           + leaf_prior(R, SH.tau2, CFG.omega, CFG.alpha)
                           - leaf_prior(P, SH.tau2, CFG.omega, CFG.alpha))
    assert prior == pytest.approx(prior_hand, abs=1e-10)
    trans_hand = (math.log(0.4 / 0.4) + math.log(1) - math.log(1)
                  + prop.log_q_reverse - prop.log_q_forward)
    assert trans == pytest.approx(trans_hand, abs=1e-10)


def test_root_structural_factor():
    # with both children splittable, the structural part is rho0 (1 - rho1)^2 / (1 - rho0)
    assert rho(0) * (1 - rho(1)) ** 2 / (1 - rho(0)) == pytest.approx(11.0467, abs=1e-4)
    X = np.arange(6.0)[:, None]
    data = SplitData(X)
    y = np.zeros(6)
    cfg = ShrinkageConfig(1.0, 1.0, 1)
    sh = GlobalShrinkage(1.0, 1.0)
    for s in range(30):
        prop = propose_grow(Tree.stump(13), y, sh, cfg, 1.0, RngStream(s), data)
        if prop.new_splittable == (True, True):
            break
    else:
        pytest.fail("no proposal with two splittable children")
    _, prior, _ = accept_ratio_terms(prop)
    L, R = prop.new_params
    P = prop.old_params[0]
    leafpart = (leaf_prior(L, 1, 1, 1) + leaf_prior(R, 1, 1, 1) - leaf_prior(P, 1, 1, 1))
    assert prior - leafpart == pytest.approx(math.log(11.0467), abs=1e-4)


def test_grow_then_mirror_prune_cancels(small):
    X, y, data = small
    for s in range(50):
        prop = propose_grow(Tree.stump(7, 0.1, 2.0, 0.5), y, SH, CFG, 0.9, RngStream(s), data)
        back = mirror_proposal(prop)
        assert back.kind == "prune"
        assert back.log_q_forward == pytest.approx(prop.log_q_reverse, abs=1e-10)
        assert back.log_q_reverse == pytest.approx(prop.log_q_forward, abs=1e-10)
        assert abs(log_accept_ratio(prop) + log_accept_ratio(back)) < 1e-10


def test_prune_proposal_and_mirror(small):
    X, y, data = small
    tree = Tree.from_nested((0, 0.4, (0.5, 1.2, 0.9), (-0.3, 0.6, 2.0)), capacity=7)
    prop = propose_prune(tree, y, SH, CFG, 1.1, RngStream(4), data)
    assert prop.kind == "prune" and prop.new_tree.n_leaves == 1
    assert prop.n_leaves == 2 and prop.n_nogs == 1
    L, R = prop.old_params
    P = prop.new_params[0]
    sl, sr = prop.old_stats
    assert sl.tolist() == [1.0, 0.3] and sr[0] == 2.0
    fwd = q_density(P, L, sl[0] + sr[0], sl[1] + sr[1], 1.1, SH.tau2, CFG.omega, CFG.alpha)
    assert prop.log_q_forward == pytest.approx(fwd, abs=1e-10)
    assert abs(log_accept_ratio(prop) + log_accept_ratio(mirror_proposal(prop))) < 1e-10


def test_prune_and_change_auto_reject_on_root(small):
    X, y, data = small
    assert propose_prune(Tree.stump(7), y, SH, CFG, 1.0, RngStream(0), data) is None
    assert propose_change(Tree.stump(7), y, SH, CFG, 1.0, RngStream(0), data) is None


def test_grow_auto_reject_without_valid_split():
    data = SplitData(np.array([[0.2], [0.2]]))
    assert propose_grow(Tree.stump(5), np.zeros(2), SH, CFG, 1.0, RngStream(0), data) is None


def test_change_single_cut_auto_reject():
    data = SplitData(np.array([[0.1], [0.9]]))
    tree = Tree.from_nested((0, 0.9, 0.0, 0.0), capacity=5)
    assert propose_change(tree, np.zeros(2), SH, CFG, 1.0, RngStream(0), data) is None


def _identity_change(tree, stats_):
    l, r = tree.children(0)
    params = (tree.params(l), tree.params(r))
    return Proposal("change", 0, tree, tree.copy(), tree.rule(0), 0, 2, 1, params, params,
                    stats_, stats_.copy(), (False, True), (False, True), SH.tau2, CFG.omega,
                    CFG.alpha, 1.0)


def test_change_identity_ratio_zero():
    tree = Tree.from_nested((0, 0.5, (0.3, 1.0, 1.0), (-1.0, 2.0, 0.5)))
    prop = _identity_change(tree, np.array([[2.0, 0.7], [3.0, -1.1]]))
    assert all(abs(t) < 1e-12 for t in accept_ratio_terms(prop))


def test_change_likelihood_four_points():
    # four rows, residuals shifted by +c under the new assignment
    X = np.array([[0.1], [0.3], [0.6], [0.8]])
    data = SplitData(X)
    c = 0.7
    r = np.array([0.0, 0.5, 1.0, 1.5]) + c
    tree = Tree.from_nested((0, 0.6, (0.2, 1.0, 1.0), (1.1, 1.0, 1.0)), capacity=9)
    for s in range(200):
        prop = propose_change(tree, r, SH, CFG, 1.0, RngStream(s), data)
        if prop.rule.cut != 0.6:
            break
    L2, R2 = prop.new_params
    left_new = X[:, 0] < prop.rule.cut
    h_new = np.where(left_new, L2.h, R2.h)
    h_old = np.where(X[:, 0] < 0.6, 0.2, 1.1)
    hand = stats.norm.logpdf(r, h_new, 1).sum() - stats.norm.logpdf(r, h_old, 1).sum()
    assert accept_ratio_terms(prop)[0] == pytest.approx(hand, abs=1e-10)


def test_grow_only_proposal_gives_two_leaves(small):
    X, y, data = small
    # a grow-only kernel is not reversible, so the config itself is refused
    with pytest.raises(ParameterError):
        MoveConfig(1.0, 0.0, 0.0)
    for s in range(20):
        prop = propose_grow(Tree.stump(7), y, SH, CFG, 1.0, RngStream(s), data)
        assert prop.new_tree.n_leaves == 2
        assert np.all(assign_leaves(prop.new_tree, X).counts >= 1)


def test_auto_reject_still_refreshes(small):
    X, y, data = small
    start = Tree.stump(7, h=5.0, lam2=1.0, nu=1.0)
    tree, sh, acc = rj_update_tree(start, SH, y, 1.0, CFG, MoveConfig(), RngStream(1), data,
                                   max_depth=0)
    assert not acc and tree.n_leaves == 1
    assert tree.params(0) != start.params(0) and sh != SH


def test_accepted_trees_are_valid_partitions_and_counted():
    g = np.random.default_rng(5)
    X = np.round(g.uniform(size=(25, 3)), 1)  # ties on purpose
    y = X[:, 0] * 3 + g.normal(size=25)
    data = SplitData(X)
    tree, sh = Tree.stump(51), GlobalShrinkage(1.0, 1.0)
    counts = np.zeros(6, dtype=np.int64)
    rng = RngStream(6)
    cfg = ShrinkageConfig(1.0, 2.0, 1)
    for _ in range(500):
        tree, sh, _ = rj_update_tree(tree, sh, y, 1.0, cfg, MoveConfig(), rng, data, counts=counts)
        assert np.all(assign_leaves(tree, X).counts >= 1)
        leaves = tree.leaves()
        assert np.all(tree.floats[leaves, 2] > 0) and np.all(tree.floats[leaves, 3] > 0)
        assert sh.tau2 > 0 and sh.xi > 0
    assert counts[::2].sum() == 500
    assert np.all(counts[1::2] <= counts[::2]) and counts[1::2].sum() > 0


def test_rj_update_deterministic(small):
    X, y, data = small
    out = [rj_update_tree(Tree.stump(7), SH, y, 1.0, CFG, MoveConfig(), RngStream(9), data)
           for _ in range(2)]
    assert out[0][0].floats.tobytes() == out[1][0].floats.tobytes()
