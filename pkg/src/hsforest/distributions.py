"""Seedable samplers and special functions used by the conditional updates.

Every sampler has a compiled scalar kernel (prefixed with an underscore) that
draws from numba's internal generator, and a public wrapper that seeds that
generator from an :class:`RngStream` before drawing. The MCMC engine calls the
kernels directly after seeding once per chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import special

from .errors import ParameterError, TailOverflowError

# Bounds further than this many standard deviations from the mean are refused.
TAIL_LIMIT = 38.0
# Truncation points beyond this use exponential rejection instead of inverse-CDF.
_ROBERT_THRESHOLD = 2.0

_SQRT2 = math.sqrt(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams with the same seed and different ids are statistically
    independent (numpy ``SeedSequence`` spawn keys).
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream for sub-task ``index``."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), int(index)))
        return RngStream(int(ss.generate_state(1, dtype=np.uint64)[0]), 0)

    def seed_engine(self) -> None:
        """Seed the compiled kernels' generator from this stream."""
        _seed_numba(int(self.generator.integers(0, 2**32 - 1)))


@nb.njit(cache=True)
def _seed_numba(s):
    np.random.seed(s)


# ---------------------------------------------------------------------------
# special functions


@nb.njit(cache=True)
def _ncdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


def normal_cdf(z):
    """Standard normal CDF, accurate in both tails."""
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


@nb.njit(cache=True)
def _ndtri(p):
    # Acklam's rational approximation followed by one Halley step.
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
               - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
              + 3.754408661907416e+00) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02) * r
               + 1.383577518672690e+02) * r - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r - 1.556989798598866e+02) * r
               + 6.680131188771972e+01) * r - 1.328068155288572e+01) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
                - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
              + 3.754408661907416e+00) * q + 1.0)
    if x < 0.0:
        e = 0.5 * math.erfc(-x / _SQRT2) - p
    else:
        # work with the upper tail to keep precision for p close to 1
        e = (1.0 - p) - 0.5 * math.erfc(x / _SQRT2)
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True)
def _log_norm_pdf(x, mean, var):
    d = x - mean
    return -0.5 * (_LOG_2PI + math.log(var) + d * d / var)


@nb.njit(cache=True)
def _log_ig_pdf(x, shape, scale):
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _rinvgamma(shape, scale):
    return scale / np.random.gamma(shape, 1.0)


@nb.njit(cache=True)
def _tail_exp_rejection(a, b):
    # Robert (1995) translated-exponential proposal for a standard normal on (a, b), a > 0.
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + np.random.exponential(1.0) / alpha
        if z >= b:
            continue
        d = z - alpha
        if np.random.random() <= math.exp(-0.5 * d * d):
            return z


@nb.njit(cache=True)
def _std_upper(a, b):
    # standard normal restricted to (a, b) with a >= 0
    if a > _ROBERT_THRESHOLD:
        return _tail_exp_rejection(a, b)
    qa = 0.5 * math.erfc(a / _SQRT2)
    qb = 0.5 * math.erfc(b / _SQRT2) if b < np.inf else 0.0
    while True:
        u = 1.0 - np.random.random()
        z = -_ndtri(qb + u * (qa - qb))
        if a < z < b:
            return z


@nb.njit(cache=True)
def _rtruncnorm(mean, sd, lower, upper):
    """Draw N(mean, sd^2) restricted to (lower, upper); NaN signals tail overflow."""
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    if a > TAIL_LIMIT or b < -TAIL_LIMIT:
        return np.nan
    if a == -np.inf and b == np.inf:
        return mean + sd * np.random.standard_normal()
    if a >= 0.0:
        z = _std_upper(a, b)
    elif b <= 0.0:
        z = -_std_upper(-b, -a)
    elif a < -_ROBERT_THRESHOLD and b > _ROBERT_THRESHOLD:
        # mass concentrated in the middle: plain rejection is cheap
        while True:
            z = np.random.standard_normal()
            if a < z < b:
                break
    else:
        pa = _ncdf(a)
        pb = _ncdf(b)
        while True:
            z = _ndtri(pa + np.random.random() * (pb - pa))
            if a < z < b:
                break
    x = mean + sd * z
    # guard against rounding onto the bound
    if x <= lower or x >= upper:
        if x <= lower:
            x = np.nextafter(lower, np.inf)
        else:
            x = np.nextafter(upper, -np.inf)
    return x


@nb.njit(cache=True)
def _rinvgamma_many(shape, scale, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _rinvgamma(shape, scale)
    return out


@nb.njit(cache=True)
def _rtruncnorm_many(mean, sd, lower, upper, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _rtruncnorm(mean, sd, lower, upper)
    return out


# ---------------------------------------------------------------------------
# public wrappers


def sample_inverse_gamma(shape: float, scale: float, rng: RngStream, size: int | None = None):
    """Draw from IG(shape, scale), density proportional to x^-(shape+1) exp(-scale/x)."""
    if not (shape > 0 and scale > 0):
        raise ParameterError(f"inverse gamma needs shape > 0 and scale > 0, got ({shape}, {scale})")
    rng.seed_engine()
    if size is None:
        return float(_rinvgamma(float(shape), float(scale)))
    return _rinvgamma_many(float(shape), float(scale), int(size))


def sample_truncated_normal(mean: float, sd: float, lower: float, upper: float,
                            rng: RngStream, size: int | None = None):
    """Draw from N(mean, sd^2) restricted to the open interval (lower, upper).

    Inverse-CDF sampling is used when the truncation point lies within two
    standard deviations of the mean, exponential rejection beyond that.
    """
    if not sd > 0:
        raise ParameterError(f"sd must be positive, got {sd}")
    if not lower < upper:
        raise ParameterError(f"need lower < upper, got ({lower}, {upper})")
    if (lower - mean) / sd > TAIL_LIMIT or (upper - mean) / sd < -TAIL_LIMIT:
        raise TailOverflowError(f"truncation region lies beyond {TAIL_LIMIT} sd of the mean")
    rng.seed_engine()
    if size is None:
        return float(_rtruncnorm(float(mean), float(sd), float(lower), float(upper)))
    return _rtruncnorm_many(float(mean), float(sd), float(lower), float(upper), int(size))


def truncated_normal_cdf(x, mean, sd, lower, upper):
    """Analytic CDF of the truncated normal, used by goodness-of-fit checks."""
    a, b = (lower - mean) / sd, (upper - mean) / sd
    z = (np.asarray(x, dtype=float) - mean) / sd
    fa, fb = special.ndtr(a), special.ndtr(b)
    return np.clip((special.ndtr(z) - fa) / (fb - fa), 0.0, 1.0)
