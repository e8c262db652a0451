"""Log-domain helpers with the conventions log 0 = -inf and no NaN ever."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


class NaNProducedError(FloatingPointError):
    """A log-domain computation produced NaN."""


def safe_log(x) -> np.ndarray:
    """Elementwise log mapping 0 to -inf without a warning."""
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def safe_log1m(x) -> np.ndarray:
    """Elementwise log(1 - x) mapping x = 1 to -inf."""
    with np.errstate(divide="ignore"):
        return np.log1p(-np.asarray(x, dtype=float))


def log_sum_exp(x, axis=-1) -> np.ndarray:
    """``log sum exp`` along ``axis``; an all -inf slice gives -inf."""
    with np.errstate(divide="ignore"):
        return logsumexp(x, axis=axis)


def log_mean_exp(x, axis=-1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return log_sum_exp(x, axis=axis) - np.log(x.shape[axis])


def log_expectation(log_p, values) -> np.ndarray:
    """``log sum_j exp(log_p[..., j] + values[j])`` for a log transition tensor."""
    return log_sum_exp(log_p + values, axis=-1)


def check_finite_or_neg_inf(x, what: str) -> np.ndarray:
    """Raise if ``x`` holds NaN or +inf."""
    x = np.asarray(x)
    if np.isnan(x).any():
        raise NaNProducedError(f"NaN in {what}")
    if np.isposinf(x).any():
        raise NaNProducedError(f"+inf in {what}")
    return x
