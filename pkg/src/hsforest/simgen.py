"""Seedable data-generating processes with ground-truth treatment effects.

Covariates are U[0,1] (optionally through a block Gaussian copula), treatment
is Bernoulli with a probit propensity, log T = f(x) + A tau(x) + eps, and
censoring times are exponential with a rate calibrated to a target
censoring fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

from .distributions import RngStream
from .errors import CalibrationError, SpecError
from .sampler import Dataset

FAMILIES = ("linear", "friedman", "homogeneous", "null", "dense-homogeneous",
            "dense-heterogeneous")
ERROR_KINDS = ("normal", "gumbel", "logistic")

ETA_BRACKET = (1e-6, 1e6)
CALIBRATION_SAMPLES = 100_000
# number of leading covariates the propensity and the effect functions can use
_N_ACTIVE = 5


@dataclass(frozen=True)
class ScenarioSpec:
    family: str
    n: int
    p: int
    noise_var: float = 3.0
    censor_target: float = 0.35
    error_kind: str = "normal"
    copula_rho: float | None = None
    sparsity_f: float = 0.1
    sparsity_tau: float = 0.05
    seed: int = 0
    block: int = 50

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.n < 1 or self.p < 1:
            raise SpecError("n and p must be positive")
        if self.family in ("friedman", "linear", "dense-heterogeneous") and self.p < _N_ACTIVE:
            raise SpecError(f"{self.family} requires p ≥ 5")
        if self.error_kind not in ERROR_KINDS:
            raise SpecError(f"unknown error kind {self.error_kind!r}")
        if not self.noise_var > 0:
            raise SpecError("noise variance must be positive")
        if not 0 <= self.censor_target <= 0.95:
            raise SpecError("censoring target must lie in [0, 0.95]")
        if self.copula_rho is not None and not 0 < self.copula_rho < 1:
            raise SpecError("copula correlation must lie in (0, 1)")
        if not (0 <= self.sparsity_f <= 1 and 0 <= self.sparsity_tau <= 1):
            raise SpecError("sparsity levels must lie in [0, 1]")
        if self.block < 1:
            raise SpecError("block size must be positive")

    @property
    def dense(self) -> bool:
        return self.family.startswith("dense")


@dataclass
class GeneratedData:
    data: Dataset
    truth_cate: np.ndarray
    truth_ate: float
    censoring: float
    eta: float
    propensity: np.ndarray
    beta_f: np.ndarray = field(repr=False)
    beta_tau: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# building blocks


def copula_block_cov(size: int, rho: float) -> np.ndarray:
    """Sigma_jk = rho^(|j-k|/2)."""
    idx = np.arange(size)
    return rho ** (np.abs(idx[:, None] - idx[None, :]) / 2.0)


def copula_covariates(n: int, p: int, rho: float, rng, block: int = 50, columns=None) -> np.ndarray:
    """U[0,1] marginals coupled by a block-diagonal Gaussian copula.

    Blocks of ``block`` consecutive columns (the last one possibly shorter)
    are independent. With ``columns`` only the blocks containing those
    columns are simulated and the other columns are left at 0.5.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    gen = rng.generator if isinstance(rng, RngStream) else rng
    U = np.full((n, p), 0.5)
    wanted = None if columns is None else {int(c) // block for c in columns}
    for bi, start in enumerate(range(0, p, block)):
        stop = min(start + block, p)
        if wanted is not None and bi not in wanted:
            continue
        Z = gen.standard_normal((n, stop - start))
        L = linalg.cholesky(copula_block_cov(stop - start, rho), lower=True)
        U[:, start:stop] = special.ndtr(Z @ L.T)
    return U


def spike_slab(p: int, s: float, gen) -> np.ndarray:
    """(1 - s) point mass at zero plus s N(0, 1)."""
    slab = gen.standard_normal(p)
    return np.where(gen.uniform(size=p) < s, slab, 0.0)


def dense_coefficients(p: int) -> np.ndarray:
    return 1.0 / np.arange(1, p + 1) ** 2


def _lead(X, j):
    # covariate j (1-based) or zero when the design is narrower
    return X[:, j - 1] if X.shape[1] >= j else np.zeros(X.shape[0])


def propensity(X, spec: ScenarioSpec) -> np.ndarray:
    if spec.dense:
        return special.ndtr(X @ dense_coefficients(X.shape[1]))
    return special.ndtr(-0.5 + 0.4 * _lead(X, 1) - 0.1 * _lead(X, 3) + 0.3 * _lead(X, 5))


def prognostic(X, spec: ScenarioSpec, beta_f) -> np.ndarray:
    if spec.dense:
        return X @ dense_coefficients(X.shape[1])
    return X @ beta_f


def friedman(X) -> np.ndarray:
    return (10 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20 * (X[:, 2] - 0.5) ** 2
            + 10 * X[:, 3] + 5 * X[:, 4])


def treatment_effect(X, spec: ScenarioSpec, beta_tau) -> np.ndarray:
    n = X.shape[0]
    fam = spec.family
    if fam == "linear":
        return (1 + X[:, 0] - 2 * X[:, 1] + 3 * X[:, 2] - 4 * X[:, 3] + 5 * X[:, 4]
                + X @ beta_tau)
    if fam == "friedman":
        return friedman(X)
    if fam == "homogeneous":
        return np.full(n, 5.0)
    if fam == "null":
        return np.zeros(n)
    if fam == "dense-homogeneous":
        return np.ones(n)
    return 1 + X[:, 0] - X[:, 1] / 2 + X[:, 2] / 3 - X[:, 3] / 4 + X[:, 4] / 5


def error_params(kind: str, var: float):
    """(location, scale) of a zero-mean error family with variance ``var``."""
    if kind == "normal":
        return 0.0, math.sqrt(var)
    if kind == "gumbel":
        beta = math.sqrt(6.0 * var) / math.pi
        return -beta * np.euler_gamma, beta
    if kind == "logistic":
        return 0.0, math.sqrt(3.0 * var) / math.pi
    raise SpecError(f"unknown error kind {kind!r}")


def draw_errors(kind: str, var: float, size: int, gen) -> np.ndarray:
    loc, scale = error_params(kind, var)
    if kind == "normal":
        return loc + scale * gen.standard_normal(size)
    if kind == "gumbel":
        return gen.gumbel(loc, scale, size)
    return gen.logistic(loc, scale, size)


# ---------------------------------------------------------------------------
# generation


def _coefficients(spec: ScenarioSpec):
    gen = RngStream(spec.seed).child(0).generator
    beta_f = spike_slab(spec.p, spec.sparsity_f, gen)
    beta_tau = spike_slab(spec.p, spec.sparsity_tau, gen)
    return beta_f, beta_tau


def _covariates(spec: ScenarioSpec, n: int, stream: RngStream, columns=None):
    if spec.copula_rho is not None:
        return copula_covariates(n, spec.p, spec.copula_rho, stream, spec.block, columns)
    gen = stream.generator
    if columns is None:
        return gen.uniform(size=(n, spec.p))
    X = np.full((n, spec.p), 0.5)
    X[:, columns] = gen.uniform(size=(n, len(columns)))
    return X


def _log_times(spec, X, beta_f, beta_tau, gen_a, gen_e):
    e = propensity(X, spec)
    A = (gen_a.uniform(size=X.shape[0]) < e).astype(float)
    tau = treatment_effect(X, spec, beta_tau)
    eps = draw_errors(spec.error_kind if not spec.dense else "normal", spec.noise_var,
                      X.shape[0], gen_e)
    return prognostic(X, spec, beta_f) + A * tau + eps, A, tau, e


def _relevant_columns(spec: ScenarioSpec, beta_f, beta_tau):
    if spec.dense:
        return list(range(spec.p))
    cols = set(range(min(_N_ACTIVE, spec.p)))
    cols |= set(np.flatnonzero(beta_f).tolist()) | set(np.flatnonzero(beta_tau).tolist())
    return sorted(cols)


def censoring_rate(eta: float, log_t, unit_exp) -> float:
    """Share of C = E / eta falling below T for common draws E ~ Exp(1)."""
    return float(np.mean(np.log(unit_exp) - math.log(eta) < log_t))


def _calibration_sample(spec: ScenarioSpec, size: int, stream: RngStream):
    """Monte Carlo log-times and unit exponentials; rows are simulated in
    chunks so wide designs stay within memory."""
    beta_f, beta_tau = _coefficients(spec)
    cols = _relevant_columns(spec, beta_f, beta_tau)
    chunk = max(1000, 5_000_000 // spec.p)
    sx, ga, ge = stream.child(0), stream.child(1).generator, stream.child(2).generator
    parts = []
    for start in range(0, size, chunk):
        X = _covariates(spec, min(chunk, size - start), sx, cols)
        parts.append(_log_times(spec, X, beta_f, beta_tau, ga, ge)[0])
    unit = stream.child(3).generator.exponential(1.0, size)
    return np.concatenate(parts), unit


def calibrate_censoring(spec: ScenarioSpec, samples: int = CALIBRATION_SAMPLES,
                        tol: float = 0.01, max_iter: int = 200) -> float:
    """Exponential censoring rate eta reaching ``spec.censor_target``.

    Bisection in log(eta) over [1e-6, 1e6] on a fixed Monte Carlo sample of
    (T, C) pairs, stopped once the rate is within ``tol / 5`` of the target.
    """
    spec.validate()
    target = spec.censor_target
    if not 0 < target <= 0.95:
        raise CalibrationError("censoring target must lie in (0, 0.95]")
    log_t, unit = _calibration_sample(spec, samples, RngStream(spec.seed).child(9))
    lo, hi = math.log(ETA_BRACKET[0]), math.log(ETA_BRACKET[1])
    r_lo = censoring_rate(math.exp(lo), log_t, unit)
    r_hi = censoring_rate(math.exp(hi), log_t, unit)
    if not r_lo - tol <= target <= r_hi + tol:
        raise CalibrationError(f"target {target} outside the reachable range "
                               f"[{r_lo:.4f}, {r_hi:.4f}]")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = censoring_rate(math.exp(mid), log_t, unit)
        if abs(r - target) <= tol / 5:
            return math.exp(mid)
        if r < target:
            lo = mid
        else:
            hi = mid
    r = censoring_rate(math.exp(mid), log_t, unit)
    if abs(r - target) > tol:
        raise CalibrationError(f"calibration stalled at rate {r:.4f}")
    return math.exp(mid)


def generate(spec: ScenarioSpec, eta: float | None = None) -> GeneratedData:
    """Draw one dataset. ``eta`` overrides the calibrated censoring rate."""
    spec.validate()
    root = RngStream(spec.seed)
    beta_f, beta_tau = _coefficients(spec)
    X = _covariates(spec, spec.n, root.child(1))
    log_t, A, tau, e = _log_times(spec, X, beta_f, beta_tau, root.child(2).generator,
                                  root.child(3).generator)
    if eta is None:
        eta = calibrate_censoring(spec) if spec.censor_target > 0 else 0.0
    T = np.exp(log_t)
    if eta > 0:
        C = root.child(4).generator.exponential(1.0, spec.n) / eta
        y = np.minimum(T, C)
        delta = (T <= C).astype(float)
    else:
        y, delta = T, np.ones(spec.n)
    data = Dataset(X, A, y, delta, "survival")
    return GeneratedData(data, tau, float(np.mean(tau)), float(1 - delta.mean()), float(eta),
                         e, beta_f, beta_tau)


def with_seed(spec: ScenarioSpec, seed: int) -> ScenarioSpec:
    return replace(spec, seed=int(seed))
