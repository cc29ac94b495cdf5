"""Outer Gibbs sampler: backfitting over one or two forests, censored-time and
probit augmentation, error-variance updates, propensity estimation, and the
full causal chain.

All randomness inside a chain comes from the compiled generator, seeded once
from the chain's :class:`RngStream`, so a seed fully determines the draws.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass

import numba as nb
import numpy as np
from scipy import special

from .distributions import RngStream, _rinvgamma, _rtruncnorm
from .errors import EstimationError, NumericalError, ParameterError, TailOverflowError
from .estimands import PosteriorDraws
from .horseshoe import GlobalShrinkage, ShrinkageConfig
from .rj_moves import MOVE_NAMES, MoveConfig, _rj_step
from .tree import (DEPTH, H, LAM2, LEFT, NO_DEPTH_LIMIT, NU, SplitData, Tree,
                   _empty_nodes, _grow_prior, _route)

log = logging.getLogger("hsforest")

OUTCOME_KINDS = ("survival", "continuous", "binary")


# ---------------------------------------------------------------------------
# data and configuration


@dataclass
class Dataset:
    X: np.ndarray
    A: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    kind: str = "survival"

    def __post_init__(self):
        self.X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        if self.X.ndim != 2:
            raise ValueError("X must be a 2-D matrix")
        n = self.X.shape[0]
        self.y = np.asarray(self.y, dtype=np.float64)
        self.A = np.zeros(n) if self.A is None else np.asarray(self.A, dtype=np.float64)
        self.delta = np.ones(n) if self.delta is None else np.asarray(self.delta, dtype=np.float64)
        for name in ("y", "A", "delta"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per row of X")
        if self.kind not in OUTCOME_KINDS:
            raise ValueError(f"outcome kind must be one of {OUTCOME_KINDS}")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise ValueError("missing or non-finite values are not supported")
        if not np.all(np.isin(self.A, (0.0, 1.0))):
            raise ValueError("treatment indicators must be 0 or 1")
        if not np.all(np.isin(self.delta, (0.0, 1.0))):
            raise ValueError("event indicators must be 0 or 1")
        if self.kind == "survival" and not np.all(self.y > 0):
            raise ValueError("survival times must be positive")
        if self.kind == "binary" and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("binary outcomes must be 0 or 1")
        if self.kind != "survival" and not np.all(self.delta == 1):
            raise ValueError("censoring is only supported for survival outcomes")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Standardizer:
    center: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError("scale must be positive")

    def standardize(self, v):
        return (np.asarray(v, dtype=float) - self.center) / self.scale

    def destandardize(self, z):
        return self.center + self.scale * np.asarray(z, dtype=float)


@dataclass
class ChainConfig:
    m_f: int = 200
    m_tau: int = 200
    k: float = 0.1
    a: float = 0.95
    b: float = 2.0
    p_grow: float = 0.4
    p_prune: float = 0.4
    p_change: float = 0.2
    omega_f: float = 0.5
    omega_tau: float = 0.5
    iterations: int = 7500
    burnin: int = 2500
    thin: int = 1
    nu_prior: float = 3.0
    psi_prior: float = 1.0
    seed: int = 0
    invariant_codes: bool = False
    propensity: bool = True
    prop_m: int = 200
    prop_iterations: int = 1500
    prop_burnin: int = 500
    max_depth: int | None = None
    progress_every: int = 0

    def __post_init__(self):
        # iterations == burnin is allowed and yields an empty draw set
        if not self.iterations >= self.burnin >= 0 or self.iterations < 1:
            raise ParameterError("need iterations >= burnin >= 0 and iterations >= 1")
        if self.m_f < 1 or self.m_tau < 1 or self.prop_m < 1:
            raise ParameterError("tree counts must be at least 1")
        if self.thin < 1:
            raise ParameterError("thin must be at least 1")
        if not (self.k > 0 and self.omega_f > 0 and self.omega_tau > 0):
            raise ParameterError("k and omega must be positive")
        if not (self.nu_prior > 0 and self.psi_prior > 0):
            raise ParameterError("error-variance prior parameters must be positive")
        if not (0 < self.a < 1 and self.b >= 0):
            raise ParameterError("tree prior needs 0 < a < 1 and b >= 0")
        if not self.prop_iterations > self.prop_burnin >= 0:
            raise ParameterError("need prop_iterations > prop_burnin >= 0")
        self.moves  # validates move probabilities

    @property
    def moves(self) -> MoveConfig:
        return MoveConfig(self.p_grow, self.p_prune, self.p_change)

    @property
    def depth_limit(self) -> int:
        return NO_DEPTH_LIMIT if self.max_depth is None else int(self.max_depth)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# standardization


def _censored_normal_loglik(mu, theta, x, ev):
    s = math.exp(theta)
    z = (x - mu) / s
    ll = np.where(ev, -theta - 0.5 * z * z - 0.5 * math.log(2 * math.pi), special.log_ndtr(-z))
    return float(ll.sum())


def standardize_outcome(y, delta, max_iter: int = 100, tol: float = 1e-10) -> Standardizer:
    """Maximum-likelihood intercept-only log-normal AFT fit by Newton's method.

    Maximizes sum over events of log(phi(z)/s) plus sum over censored rows
    of log(1 - Phi(z)), z = (log y - mu)/s, over (mu, log s).
    """
    y = np.asarray(y, dtype=float)
    ev = np.asarray(delta, dtype=float) == 1
    if y.ndim != 1 or y.shape != ev.shape:
        raise ValueError("y and delta must be vectors of equal length")
    if not np.all(y > 0):
        raise ValueError("follow-up times must be positive")
    if not ev.any():
        raise EstimationError("at least one event is required to standardize survival times")
    x = np.log(y)
    mu = float(x.mean())
    sd = float(x.std())
    theta = math.log(sd) if sd > 0 else 0.0
    ll = _censored_normal_loglik(mu, theta, x, ev)
    for _ in range(max_iter):
        s = math.exp(theta)
        z = (x - mu) / s
        # censored rows: hazard of the standard normal at z
        hz = np.exp(-0.5 * z * z - 0.5 * math.log(2 * math.pi) - special.log_ndtr(-z))
        dh = hz * (hz - z)
        g = np.array([
            np.sum(np.where(ev, z / s, hz / s)),
            np.sum(np.where(ev, z * z - 1.0, hz * z)),
        ])
        H_ = np.array([
            [np.sum(np.where(ev, -1.0 / s**2, -dh / s**2)),
             np.sum(np.where(ev, -2.0 * z / s, -(dh * z + hz) / s))],
            [0.0, np.sum(np.where(ev, -2.0 * z * z, -z * (dh * z + hz)))],
        ])
        H_[1, 0] = H_[0, 1]
        if np.max(np.abs(g)) < tol * max(1.0, y.size):
            return Standardizer(mu, math.exp(theta))
        try:
            step = -np.linalg.solve(H_, g)
        except np.linalg.LinAlgError:
            step = g
        if step @ g <= 0:
            # not an ascent direction (Hessian not negative definite): use gradient
            step = g / max(1.0, np.max(np.abs(g)))
        if np.max(np.abs(step)) < 1e-12:
            return Standardizer(mu, math.exp(theta))
        t = 1.0
        for _ in range(60):
            cand = _censored_normal_loglik(mu + t * step[0], theta + t * step[1], x, ev)
            # allow rounding-level decreases so full Newton steps go through near the optimum
            if np.isfinite(cand) and cand >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            # no ascent left at rounding level: accept if stationary
            if np.max(np.abs(g)) < 1e-6 * max(1.0, y.size):
                return Standardizer(mu, math.exp(theta))
            break
        mu += t * step[0]
        theta += t * step[1]
        if abs(theta) > 700:
            break
        ll = cand
    raise EstimationError("intercept-only AFT fit did not converge")


# ---------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _sweep_forest(ints, floats, leaf_of, globs, X, codes, uniq, z, w, fit, sigma2, omega,
                  alpha, a, b, max_depth, p_grow, p_prune, counts, R, gold):
    """Backfit every tree of one forest against ``z = w * sum_j g_j + noise``."""
    m = ints.shape[0]
    n = z.shape[0]
    for j in range(m):
        lj = leaf_of[j]
        fj = floats[j]
        for i in range(n):
            g = fj[lj[i], H]
            gold[i] = g
            R[i] = z[i] - w[i] * (fit[i] - g)
        _rj_step(ints[j], fj, lj, X, codes, uniq, R, w, globs[j], sigma2, omega, alpha,
                 a, b, max_depth, p_grow, p_prune, counts)
        for i in range(n):
            fit[i] += fj[lj[i], H] - gold[i]


@nb.njit(cache=True)
def _augment(logT, mean, sd, lower, cens_idx):
    """Redraw censored log-times above their bounds; returns the failing row or -1."""
    for t in range(cens_idx.shape[0]):
        i = cens_idx[t]
        v = _rtruncnorm(mean[i], sd, lower[i], np.inf)
        if np.isnan(v):
            return i
        logT[i] = v
    return -1


@nb.njit(cache=True)
def _probit(latent, labels, mean):
    for i in range(latent.shape[0]):
        if labels[i] > 0.5:
            latent[i] = _rtruncnorm(mean[i], 1.0, 0.0, np.inf)
        else:
            latent[i] = _rtruncnorm(mean[i], 1.0, -np.inf, 0.0)


@nb.njit(cache=True)
def _draw_sigma2(resid, nu, psi):
    ss = 0.0
    for i in range(resid.shape[0]):
        ss += resid[i] * resid[i]
    return _rinvgamma(0.5 * (nu + resid.shape[0]), 0.5 * (nu * psi + ss))


@nb.njit(cache=True)
def _draw_codes(resp, A, ft, sigma2, prior_var):
    """Conjugate updates of (b0, b1) in resp = b_A * ft + noise."""
    out = np.empty(2)
    for arm in range(2):
        sxx = 0.0
        sxy = 0.0
        for i in range(resp.shape[0]):
            if (A[i] > 0.5) == (arm == 1):
                sxx += ft[i] * ft[i]
                sxy += ft[i] * resp[i]
        prec = sxx / sigma2 + 1.0 / prior_var
        out[arm] = sxy / sigma2 / prec + math.sqrt(1.0 / prec) * np.random.standard_normal()
    return out[0], out[1]


@nb.njit(cache=True)
def _predict_forest(ints, floats, X, out):
    out[:] = 0.0
    for j in range(ints.shape[0]):
        for i in range(X.shape[0]):
            out[i] += floats[j, _route(ints[j], floats[j], X[i]), H]


@nb.njit(cache=True)
def _mean_leaves(ints):
    k = 0
    for j in range(ints.shape[0]):
        for node in range(ints.shape[1]):
            if ints[j, node, DEPTH] >= 0 and ints[j, node, LEFT] < 0:
                k += 1
    return k / ints.shape[0]


# ---------------------------------------------------------------------------
# forest state


class ForestState:
    """An ensemble of ``m`` trees stored as stacked node arrays plus a fit cache."""

    def __init__(self, X, m: int, cfg: ShrinkageConfig):
        self.data = X if isinstance(X, SplitData) else SplitData(X)
        self.cfg = cfg
        n = self.data.n
        cap = 2 * n + 1
        ints, floats = _empty_nodes(cap)
        self.ints = np.broadcast_to(ints, (m, cap, 5)).copy()
        self.floats = np.broadcast_to(floats, (m, cap, 4)).copy()
        self.leaf_of = np.zeros((m, n), dtype=np.int32)
        g0 = cfg.initial_global()
        self.globs = np.tile([g0.tau2, g0.xi], (m, 1))
        self.fit = np.zeros(n)
        self.counts = np.zeros(6, dtype=np.int64)
        self._R = np.empty(n)
        self._gold = np.empty(n)

    @property
    def m(self) -> int:
        return self.ints.shape[0]

    @property
    def trees(self) -> list[Tree]:
        return [Tree(self.ints[j], self.floats[j]) for j in range(self.m)]

    @property
    def globals(self) -> list[GlobalShrinkage]:
        return [GlobalShrinkage(float(t), float(x)) for t, x in self.globs]

    def tree_fit(self, j: int) -> np.ndarray:
        return self.floats[j, self.leaf_of[j], H]

    def recomputed_fit(self, X=None) -> np.ndarray:
        Xp = self.data.X if X is None else np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(Xp.shape[0])
        _predict_forest(self.ints, self.floats, Xp, out)
        return out

    def sweep(self, z, w, sigma2, ccfg: ChainConfig, omega: float) -> None:
        mv = ccfg.moves
        _sweep_forest(self.ints, self.floats, self.leaf_of, self.globs, self.data.X,
                      self.data.codes, self.data.uniq, z, w, self.fit, float(sigma2),
                      float(omega), float(self.cfg.alpha), float(ccfg.a), float(ccfg.b),
                      ccfg.depth_limit, mv.p_grow, mv.p_prune, self.counts, self._R, self._gold)

    def acceptance(self) -> dict:
        c = self.counts
        return {name: (float(c[2 * i + 1] / c[2 * i]) if c[2 * i] else 0.0)
                for i, name in enumerate(MOVE_NAMES)}


@dataclass
class CausalState:
    prognostic: ForestState
    treatment: ForestState
    sigma2: float
    logT: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    cens_idx: np.ndarray
    rng: RngStream
    b0: float | None = None
    b1: float | None = None

    @property
    def basis(self) -> np.ndarray:
        """Per-row multiplier of the treatment forest."""
        if self.b0 is None:
            return self.A
        return np.where(self.A > 0.5, self.b1, self.b0)

    def mean(self) -> np.ndarray:
        return self.prognostic.fit + self.basis * self.treatment.fit


def compute_residuals(state: CausalState, forest: str, j: int) -> np.ndarray:
    """Partial residuals targeted by tree ``j`` of the named forest."""
    w = state.basis
    if forest == "prognostic":
        if not 0 <= j < state.prognostic.m:
            raise IndexError("tree index out of range")
        g = state.prognostic.tree_fit(j)
        return state.logT - (state.prognostic.fit - g) - w * state.treatment.fit
    if forest == "treatment":
        if not 0 <= j < state.treatment.m:
            raise IndexError("tree index out of range")
        g = state.treatment.tree_fit(j)
        return state.logT - state.prognostic.fit - w * (state.treatment.fit - g)
    raise ValueError("forest must be 'prognostic' or 'treatment'")


def augment_censored(state: CausalState, rng: RngStream | None = None) -> np.ndarray:
    """Impute censored standardized log-times from truncated normals above
    their censoring bounds. Events are left untouched."""
    if rng is not None:
        rng.seed_engine()
    bad = _augment(state.logT, state.mean(), math.sqrt(state.sigma2), state.lower, state.cens_idx)
    if bad >= 0:
        raise TailOverflowError("censoring bound too far in the tail of the predictive", row=int(bad))
    return state.logT


def update_sigma2(residuals, nu_prior: float, psi_prior: float, rng: RngStream) -> float:
    """Draw sigma^2 ~ IG((nu + n)/2, (nu psi + sum r^2)/2)."""
    if not (nu_prior > 0 and psi_prior > 0):
        raise ParameterError("nu_prior and psi_prior must be positive")
    rng.seed_engine()
    return float(_draw_sigma2(np.ascontiguousarray(residuals, dtype=float), float(nu_prior),
                              float(psi_prior)))


def sigma2_posterior_params(residuals, nu_prior: float, psi_prior: float):
    r = np.asarray(residuals, dtype=float)
    return 0.5 * (nu_prior + r.size), 0.5 * (nu_prior * psi_prior + float(r @ r))


def probit_augment(latent, labels, fit, rng: RngStream) -> np.ndarray:
    """Albert-Chib latent update: N(fit, 1) truncated to the side given by the label."""
    latent = np.array(latent, dtype=float)
    rng.seed_engine()
    _probit(latent, np.asarray(labels, dtype=float), np.asarray(fit, dtype=float))
    return latent


def update_treatment_codes(state: CausalState, rng: RngStream | None = None,
                           prior_var: float = 0.5):
    """Conjugate normal update of the invariant treatment codes (b0, b1)."""
    if state.b0 is None:
        raise ValueError("invariant treatment codes are not enabled")
    if rng is not None:
        rng.seed_engine()
    b0, b1 = _draw_codes(state.logT - state.prognostic.fit, state.A, state.treatment.fit,
                         float(state.sigma2), float(prior_var))
    state.b0, state.b1 = float(b0), float(b1)
    return state.b0, state.b1


# ---------------------------------------------------------------------------
# single forest chains


def _check_finite(iteration, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError("non-finite value in the sampler state", iteration=iteration)


def _retained(ccfg: ChainConfig) -> range:
    return range(ccfg.burnin, ccfg.iterations, ccfg.thin)


@dataclass
class _Running:
    """Running mean and variance of a vector over retained draws."""

    n: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None

    def add(self, v):
        if self.mean is None:
            self.mean = np.zeros_like(v)
            self.m2 = np.zeros_like(v)
        self.n += 1
        d = v - self.mean
        self.mean = self.mean + d / self.n
        self.m2 = self.m2 + d * (v - self.mean)

    def result(self, size):
        if self.n == 0:
            return np.full(size, np.nan), np.full(size, np.nan)
        sd = np.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else np.zeros(size)
        return self.mean, sd


def _single_forest(X, y, delta, kind, ccfg: ChainConfig, m: int, omega: float, iterations: int,
                   burnin: int, rng: RngStream, X_test=None, keep_draws: bool = True):
    """Shared single-forest chain. Returns a dict of standardized-scale summaries."""
    data = SplitData(X)
    n = data.n
    cfg = ShrinkageConfig(omega=omega, k=ccfg.k, m=m)
    forest = ForestState(data, m, cfg)
    w = np.ones(n)
    if kind == "binary":
        pbar = float(np.mean(y))
        offset = float(special.ndtri(pbar))
        target = np.where(y > 0.5, 0.5, -0.5)
        lower = np.zeros(n)
        cens = np.zeros(0, dtype=np.int64)
    else:
        offset = 0.0
        target = np.array(y, dtype=float)
        lower = target.copy()
        cens = np.flatnonzero(delta == 0).astype(np.int64)
    sigma2 = 1.0
    Xt = None if X_test is None else np.ascontiguousarray(X_test, dtype=np.float64)
    test_buf = None if Xt is None else np.empty(Xt.shape[0])
    keep = range(burnin, iterations, ccfg.thin)
    fits = np.empty((n, len(keep))) if keep_draws else None
    sig_trace = np.empty(len(keep))
    leaves = np.empty((len(keep), 1))
    train_stats = _Running()
    test_stats = _Running()
    rng.seed_engine()
    d = 0
    for it in range(iterations):
        if kind == "binary":
            _probit(target, y, forest.fit + offset)
        elif cens.size:
            bad = _augment(target, forest.fit, math.sqrt(sigma2), lower, cens)
            if bad >= 0:
                raise TailOverflowError("censoring bound too far in the tail", row=int(bad))
        z = target - offset
        forest.sweep(z, w, sigma2, ccfg, omega)
        if kind != "binary":
            sigma2 = float(_draw_sigma2(z - forest.fit, ccfg.nu_prior, ccfg.psi_prior))
        _check_finite(it, forest.fit, np.array([sigma2]))
        if it >= burnin and (it - burnin) % ccfg.thin == 0:
            pred = forest.fit + offset
            if kind == "binary":
                pred = special.ndtr(pred)
            train_stats.add(pred)
            if keep_draws:
                fits[:, d] = forest.fit + offset
            sig_trace[d] = sigma2
            leaves[d, 0] = _mean_leaves(forest.ints)
            if Xt is not None:
                _predict_forest(forest.ints, forest.floats, Xt, test_buf)
                tp = test_buf + offset
                test_stats.add(special.ndtr(tp) if kind == "binary" else tp.copy())
            d += 1
        if ccfg.progress_every and (it + 1) % ccfg.progress_every == 0:
            log.info("iter %d sigma2=%.4g accept=%s", it + 1, sigma2, forest.acceptance())
    return dict(forest=forest, fits=fits, sigma2=sig_trace, leaves=leaves,
                train=train_stats.result(n),
                test=None if Xt is None else test_stats.result(Xt.shape[0]),
                acceptance=forest.acceptance())


def fit_propensity(X, A, ccfg: ChainConfig, rng: RngStream, X_test=None):
    """Posterior-mean propensity from a probit Horseshoe Forest, clipped to [0.01, 0.99].

    Returns the training-row estimates, or ``(train, test)`` when ``X_test``
    is given.
    """
    A = np.asarray(A, dtype=float)
    if A.min() == A.max():
        raise EstimationError("both treatment arms must be present to estimate propensities")
    out = _single_forest(X, A, np.ones_like(A), "binary", ccfg, ccfg.prop_m, 1.0,
                         ccfg.prop_iterations, ccfg.prop_burnin, rng, X_test, keep_draws=False)
    e = np.clip(out["train"][0], 0.01, 0.99)
    if X_test is None:
        return e
    return e, np.clip(out["test"][0], 0.01, 0.99)


def _outcome_scale(data: Dataset):
    if data.kind == "survival":
        st = standardize_outcome(data.y, data.delta)
        return st, st.standardize(np.log(data.y))
    if data.kind == "continuous":
        sd = float(np.std(data.y))
        st = Standardizer(float(np.mean(data.y)), sd if sd > 0 else 1.0)
        return st, st.standardize(data.y)
    return Standardizer(0.0, 1.0), data.y.copy()


def run_horseshoe_forest(data: Dataset, ccfg: ChainConfig, X_test=None) -> PosteriorDraws:
    """A single Horseshoe Forest (omega = 1) for survival, continuous or binary outcomes."""
    t0 = time.perf_counter()
    st, target = _outcome_scale(data)
    rng = RngStream(ccfg.seed)
    out = _single_forest(data.X, target, data.delta, data.kind, ccfg, ccfg.m_f, 1.0,
                         ccfg.iterations, ccfg.burnin, rng.child(1), X_test)
    D = out["sigma2"].shape[0]
    if data.kind == "binary":
        fits = out["fits"]
        mean, sd = out["train"]
        test = out["test"]
    else:
        fits = st.destandardize(out["fits"]) if D else out["fits"]
        mean, sd = st.destandardize(out["train"][0]), st.scale * out["train"][1]
        test = None if out["test"] is None else (st.destandardize(out["test"][0]),
                                                 st.scale * out["test"][1])
    return PosteriorDraws(
        cate=np.zeros((data.n, 0)), ate=np.zeros(0),
        sigma2=out["sigma2"] * (st.scale**2 if data.kind != "binary" else 1.0),
        acceptance={"forest": out["acceptance"]}, tree_stats=out["leaves"],
        fit=fits, pred_mean=mean, pred_sd=sd,
        test_mean=None if test is None else test[0], test_sd=None if test is None else test[1],
        center=st.center, scale=st.scale, wall_time=time.perf_counter() - t0,
        config=ccfg.to_dict())


# ---------------------------------------------------------------------------
# causal chain


def init_causal_state(data: Dataset, ccfg: ChainConfig, ehat, rng: RngStream):
    """Standardized chain state for the two-forest model."""
    Xf = np.column_stack([data.X, ehat]) if ehat is not None else data.X
    st, target = _outcome_scale(data)
    prog = ForestState(Xf, ccfg.m_f, ShrinkageConfig(ccfg.omega_f, ccfg.k, ccfg.m_f))
    trt = ForestState(data.X, ccfg.m_tau, ShrinkageConfig(ccfg.omega_tau, ccfg.k, ccfg.m_tau))
    cens = np.flatnonzero(data.delta == 0).astype(np.int64)
    state = CausalState(prog, trt, 1.0, target.copy(), data.A.copy(), target.copy(), cens, rng)
    if ccfg.invariant_codes:
        state.b0, state.b1 = -0.5, 0.5
    return st, state


def run_causal_chain(data: Dataset, ccfg: ChainConfig, X_test=None, A_test=None) -> PosteriorDraws:
    """Causal Horseshoe Forest: log T = f(x, e(x)) + A tau(x) + eps.

    CATE draws are reported on the log-time scale. With ``X_test`` the
    posterior mean and sd of test-row predictions (and CATEs) are returned.
    """
    t0 = time.perf_counter()
    if data.kind == "binary":
        raise ValueError("the causal chain supports survival and continuous outcomes")
    if data.A.min() == data.A.max():
        raise EstimationError("both treatment arms must be present")
    root = RngStream(ccfg.seed)
    Xt = None if X_test is None else np.ascontiguousarray(X_test, dtype=np.float64)
    if Xt is not None:
        At = np.zeros(Xt.shape[0]) if A_test is None else np.asarray(A_test, dtype=float)
    if ccfg.propensity:
        e = fit_propensity(data.X, data.A, ccfg, root.child(0), X_test=Xt)
        ehat, ehat_test = (e, None) if Xt is None else e
    else:
        ehat = ehat_test = None
    if Xt is not None and ehat_test is not None:
        Xt_f = np.ascontiguousarray(np.column_stack([Xt, ehat_test]))
    else:
        Xt_f = Xt
    rng = root.child(1)
    st, state = init_causal_state(data, ccfg, ehat, rng)
    prog, trt = state.prognostic, state.treatment
    n = data.n
    ones = np.ones(n)
    keep = _retained(ccfg)
    D = len(keep)
    cate = np.empty((n, D))
    ate = np.empty(D)
    sig = np.empty(D)
    leaves = np.empty((D, 2))
    pred_s, test_pred_s, test_cate_s = _Running(), _Running(), _Running()
    bf = np.empty(0 if Xt is None else Xt.shape[0])
    bt = np.empty_like(bf)
    rng.seed_engine()
    d = 0
    for it in range(ccfg.iterations):
        if state.cens_idx.size:
            augment_censored(state)
        w = state.basis
        prog.sweep(state.logT - w * trt.fit, ones, state.sigma2, ccfg, ccfg.omega_f)
        trt.sweep(state.logT - prog.fit, w, state.sigma2, ccfg, ccfg.omega_tau)
        if state.b0 is not None:
            update_treatment_codes(state)
        state.sigma2 = float(_draw_sigma2(state.logT - state.mean(), ccfg.nu_prior,
                                          ccfg.psi_prior))
        _check_finite(it, prog.fit, trt.fit, np.array([state.sigma2]))
        if it >= ccfg.burnin and (it - ccfg.burnin) % ccfg.thin == 0:
            mult = 1.0 if state.b0 is None else state.b1 - state.b0
            cate[:, d] = st.scale * mult * trt.fit
            ate[d] = cate[:, d].mean()
            sig[d] = state.sigma2 * st.scale**2
            leaves[d] = (_mean_leaves(prog.ints), _mean_leaves(trt.ints))
            pred_s.add(st.destandardize(state.mean()))
            if Xt is not None:
                _predict_forest(prog.ints, prog.floats, Xt_f, bf)
                _predict_forest(trt.ints, trt.floats, Xt, bt)
                wt = At if state.b0 is None else np.where(At > 0.5, state.b1, state.b0)
                test_pred_s.add(st.destandardize(bf + wt * bt))
                test_cate_s.add(st.scale * mult * bt)
            d += 1
        if ccfg.progress_every and (it + 1) % ccfg.progress_every == 0:
            log.info("iter %d sigma2=%.4g accept f=%s tau=%s", it + 1, state.sigma2,
                     prog.acceptance(), trt.acceptance())
    test = test_pred_s.result(bf.shape[0]) if Xt is not None else None
    return PosteriorDraws(
        cate=cate, ate=ate, sigma2=sig,
        acceptance={"prognostic": prog.acceptance(), "treatment": trt.acceptance()},
        tree_stats=leaves, pred_mean=pred_s.result(n)[0], pred_sd=pred_s.result(n)[1],
        test_mean=None if test is None else test[0], test_sd=None if test is None else test[1],
        test_cate_mean=None if Xt is None else test_cate_s.result(bf.shape[0])[0],
        propensity=ehat, center=st.center, scale=st.scale,
        wall_time=time.perf_counter() - t0, config=ccfg.to_dict())


# ---------------------------------------------------------------------------
# joint-distribution ("getting it right") simulators


@dataclass
class GewekeConfig:
    n: int = 10
    p: int = 2
    m: int = 3
    k: float = 1.0
    omega: float = 1.0
    nu_prior: float = 10.0
    psi_prior: float = 1.0
    a: float = 0.95
    b: float = 2.0
    max_depth: int = NO_DEPTH_LIMIT
    seed: int = 0


GEWEKE_STATS = ("sigma2", "log_tau2", "leaves", "depth")


@nb.njit(cache=True)
def _draw_leaf_prior(ints, floats, tau2, omega, alpha):
    for node in range(ints.shape[0]):
        if ints[node, DEPTH] >= 0 and ints[node, LEFT] < 0:
            nu = _rinvgamma(0.5, 1.0 / (alpha * alpha))
            lam2 = _rinvgamma(0.5, 1.0 / nu)
            floats[node, NU] = nu
            floats[node, LAM2] = lam2
            floats[node, H] = math.sqrt(omega * lam2 * tau2) * np.random.standard_normal()


@nb.njit(cache=True)
def _prior_state(ints, floats, leaf_of, globs, X, codes, uniq, omega, alpha, a, b, max_depth):
    for j in range(ints.shape[0]):
        _grow_prior(ints[j], floats[j], X, codes, uniq, leaf_of[j], a, b, max_depth)
        xi = _rinvgamma(0.5, 1.0 / (alpha * alpha))
        tau2 = _rinvgamma(0.5, 1.0 / xi)
        globs[j, 0] = tau2
        globs[j, 1] = xi
        _draw_leaf_prior(ints[j], floats[j], tau2, omega, alpha)


@nb.njit(cache=True)
def _state_stats(ints, globs, sigma2, out):
    m = ints.shape[0]
    lt = 0.0
    leaves = 0.0
    depth = 0.0
    for j in range(m):
        lt += math.log(globs[j, 0])
        md = 0
        for node in range(ints.shape[1]):
            if ints[j, node, DEPTH] >= 0 and ints[j, node, LEFT] < 0:
                leaves += 1.0
            if ints[j, node, DEPTH] > md:
                md = ints[j, node, DEPTH]
        depth += md
    out[0] = sigma2
    out[1] = lt / m
    out[2] = leaves / m
    out[3] = depth / m


@nb.njit(cache=True)
def _geweke_marginal(iters, ints, floats, leaf_of, globs, X, codes, uniq, omega, alpha,
                     a, b, max_depth, nu_prior, psi_prior, out):
    for t in range(iters):
        _prior_state(ints, floats, leaf_of, globs, X, codes, uniq, omega, alpha, a, b, max_depth)
        sigma2 = _rinvgamma(0.5 * nu_prior, 0.5 * nu_prior * psi_prior)
        _state_stats(ints, globs, sigma2, out[t])


@nb.njit(cache=True)
def _geweke_successive(iters, ints, floats, leaf_of, globs, X, codes, uniq, omega, alpha,
                       a, b, max_depth, nu_prior, psi_prior, p_grow, p_prune, counts, out):
    n = X.shape[0]
    m = ints.shape[0]
    _prior_state(ints, floats, leaf_of, globs, X, codes, uniq, omega, alpha, a, b, max_depth)
    sigma2 = _rinvgamma(0.5 * nu_prior, 0.5 * nu_prior * psi_prior)
    fit = np.zeros(n)
    for j in range(m):
        for i in range(n):
            fit[i] += floats[j, leaf_of[j, i], H]
    y = np.empty(n)
    w = np.ones(n)
    R = np.empty(n)
    gold = np.empty(n)
    for t in range(iters):
        sd = math.sqrt(sigma2)
        for i in range(n):
            y[i] = fit[i] + sd * np.random.standard_normal()
        for j in range(m):
            for i in range(n):
                g = floats[j, leaf_of[j, i], H]
                gold[i] = g
                R[i] = y[i] - (fit[i] - g)
            _rj_step(ints[j], floats[j], leaf_of[j], X, codes, uniq, R, w, globs[j], sigma2,
                     omega, alpha, a, b, max_depth, p_grow, p_prune, counts)
            for i in range(n):
                fit[i] += floats[j, leaf_of[j, i], H] - gold[i]
        for i in range(n):
            R[i] = y[i] - fit[i]
        sigma2 = _draw_sigma2(R, nu_prior, psi_prior)
        _state_stats(ints, globs, sigma2, out[t])


def _geweke_arrays(gcfg: GewekeConfig, X):
    data = SplitData(X)
    cap = 2 * gcfg.n + 1
    ints, floats = _empty_nodes(cap)
    ints = np.broadcast_to(ints, (gcfg.m, cap, 5)).copy()
    floats = np.broadcast_to(floats, (gcfg.m, cap, 4)).copy()
    leaf_of = np.zeros((gcfg.m, gcfg.n), dtype=np.int32)
    globs = np.ones((gcfg.m, 2))
    return data, ints, floats, leaf_of, globs


def geweke_marginal(gcfg: GewekeConfig, X, iterations: int, rng: RngStream) -> np.ndarray:
    """Independent draws of (sigma2, mean log tau2, mean leaves, mean depth) from the prior."""
    data, ints, floats, leaf_of, globs = _geweke_arrays(gcfg, X)
    out = np.empty((iterations, len(GEWEKE_STATS)))
    alpha = gcfg.k / math.sqrt(gcfg.m)
    rng.seed_engine()
    _geweke_marginal(iterations, ints, floats, leaf_of, globs, data.X, data.codes, data.uniq,
                     gcfg.omega, alpha, gcfg.a, gcfg.b, gcfg.max_depth, gcfg.nu_prior,
                     gcfg.psi_prior, out)
    return out


def geweke_successive(gcfg: GewekeConfig, X, iterations: int, rng: RngStream,
                      moves: MoveConfig = MoveConfig()) -> np.ndarray:
    """Successive-conditional simulator: regenerate y from the model, then one sweep."""
    data, ints, floats, leaf_of, globs = _geweke_arrays(gcfg, X)
    out = np.empty((iterations, len(GEWEKE_STATS)))
    counts = np.zeros(6, dtype=np.int64)
    alpha = gcfg.k / math.sqrt(gcfg.m)
    rng.seed_engine()
    _geweke_successive(iterations, ints, floats, leaf_of, globs, data.X, data.codes, data.uniq,
                       gcfg.omega, alpha, gcfg.a, gcfg.b, gcfg.max_depth, gcfg.nu_prior,
                       gcfg.psi_prior, moves.p_grow, moves.p_prune, counts, out)
    return out


def batch_means_se(x, n_batches: int = 50) -> float:
    """Standard error of the mean of an autocorrelated series by batch means."""
    x = np.asarray(x, dtype=float)
    b = x.size // n_batches
    if b < 1:
        raise ValueError("series too short for the requested number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
