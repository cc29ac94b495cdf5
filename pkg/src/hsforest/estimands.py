"""Posterior summaries of treatment effects and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

# Quantiles use numpy's default "linear" rule: the q-quantile of D sorted
# draws is the linear interpolation at position q * (D - 1) (0-based).
QUANTILE_METHOD = "linear"


@dataclass
class PosteriorDraws:
    """Retained draws of one chain.

    ``cate`` is n x D on the log-time scale and ``ate[d]`` is the row mean of
    ``cate[:, d]``. Single-forest fits leave ``cate``/``ate`` empty and store
    the per-draw fit in ``fit`` instead.
    """

    cate: np.ndarray
    ate: np.ndarray
    sigma2: np.ndarray
    acceptance: dict = field(default_factory=dict)
    tree_stats: np.ndarray | None = None
    fit: np.ndarray | None = None
    pred_mean: np.ndarray | None = None
    pred_sd: np.ndarray | None = None
    test_mean: np.ndarray | None = None
    test_sd: np.ndarray | None = None
    test_cate_mean: np.ndarray | None = None
    propensity: np.ndarray | None = None
    center: float = 0.0
    scale: float = 1.0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return int(self.sigma2.shape[0])


@dataclass
class IntervalSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


class Metrics(NamedTuple):
    rmse_cate: float
    cover_cate: float
    len_cate: float
    rmse_ate: float
    cover_ate: float
    len_ate: float


def _interval(draws: np.ndarray, level: float) -> IntervalSummary:
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2], axis=-1,
                         method=QUANTILE_METHOD)
    return IntervalSummary(draws.mean(axis=-1), lo, hi, level)


def summarize(draws, level: float = 0.95):
    """Equal-tailed credible intervals for every CATE and for the ATE.

    ``draws`` is a :class:`PosteriorDraws` or a raw array whose last axis
    indexes draws. Returns ``(cate_summary, ate_summary)`` for the former and
    a single :class:`IntervalSummary` for the latter.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if isinstance(draws, PosteriorDraws):
        if draws.ate.shape[0] < 2:
            raise ValueError("at least two draws are needed for an interval")
        return _interval(draws.cate, level), _interval(draws.ate, level)
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] < 2:
        raise ValueError("at least two draws are needed for an interval")
    return _interval(arr, level)


def evaluate(cate: IntervalSummary, ate: IntervalSummary, truth_cate, truth_ate: float) -> Metrics:
    """RMSE, coverage and mean interval length against the true effects."""
    truth = np.asarray(truth_cate, dtype=float)
    if truth.shape != np.shape(cate.mean):
        raise ValueError("truth must be aligned with the summarized observations")
    t_ate = float(truth_ate)
    a_mean, a_lo, a_hi = float(ate.mean), float(ate.lower), float(ate.upper)
    return Metrics(
        rmse_cate=float(np.sqrt(np.mean((cate.mean - truth) ** 2))),
        cover_cate=float(np.mean((cate.lower <= truth) & (truth <= cate.upper))),
        len_cate=float(np.mean(cate.upper - cate.lower)),
        rmse_ate=abs(a_mean - t_ate),
        cover_ate=float(a_lo <= t_ate <= a_hi),
        len_ate=a_hi - a_lo,
    )


def c_index(scores, y, delta) -> float:
    """Harrell's concordance: among pairs with y_i < y_j and delta_i = 1, the
    share with score_i < score_j, ties in score counting one half. Pairs with
    tied times are not comparable."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.asarray(delta, dtype=float)
    if not (s.shape == y.shape == d.shape) or s.ndim != 1:
        raise ValueError("scores, y and delta must be vectors of equal length")
    if s.size < 2:
        raise ValueError("need at least two observations")
    comparable = (y[:, None] < y[None, :]) & (d[:, None] == 1)
    total = int(comparable.sum())
    if total == 0:
        raise ValueError("no comparable pairs: concordance is undefined")
    conc = np.sum(comparable & (s[:, None] < s[None, :]))
    ties = np.sum(comparable & (s[:, None] == s[None, :]))
    return float((conc + 0.5 * ties) / total)
