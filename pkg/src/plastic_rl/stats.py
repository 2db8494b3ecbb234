"""Evaluation statistics over completed runs.

Scores enter as one summary number per (task, run): the mean of the success
rates recorded while that task was active. Performance profiles show the
fraction of those scores strictly above each threshold (one minus the
empirical CDF) with a simultaneous Dvoretzky-Kiefer-Wolfowitz band;
learning curves aggregate aligned series with the interquartile mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TaskScore:
    sequence_id: str
    seed: int
    task_index: int
    mean_success: float


@dataclass
class ProfileCurve:
    thresholds: np.ndarray
    values: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    band_epsilon: float


def dkw_epsilon(n: int, alpha: float) -> float:
    """Half-width of the simultaneous confidence band around an empirical CDF
    from n samples, holding with probability at least 1 - alpha."""
    if n < 1:
        raise ValueError("need at least one sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be inside (0, 1)")
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * n)))


def _score_values(scores) -> np.ndarray:
    vals = np.array(
        [s.mean_success if isinstance(s, TaskScore) else float(s) for s in scores]
    )
    if vals.size == 0:
        raise ValueError("cannot build a profile from an empty score list")
    return vals


def performance_profile(scores, alpha: float = 0.1) -> ProfileCurve:
    """profile(tau) = fraction of scores strictly above tau, on a 0.01 grid."""
    vals = _score_values(scores)
    eps = dkw_epsilon(vals.size, alpha)
    thresholds = np.array([i / 100.0 for i in range(101)])
    values = np.array([np.mean(vals > t) for t in thresholds])
    lo = np.clip(values - eps, 0.0, 1.0)
    hi = np.clip(values + eps, 0.0, 1.0)
    return ProfileCurve(thresholds, values, lo, hi, eps)


def profile_area(curve: ProfileCurve) -> float:
    """Trapezoidal integral of the profile over tau in [0, 1]."""
    return float(np.trapezoid(curve.values, curve.thresholds))


def iqm(values) -> float:
    """Mean of the middle half: drop floor(n/4) values from each end."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    k = vals.size // 4
    trimmed = vals[k: vals.size - k] if k > 0 else vals
    return float(trimmed.mean())


def trailing_mean(series: np.ndarray, window: int) -> np.ndarray:
    """Causal moving average; prefix windows average the points available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    series = np.asarray(series, dtype=np.float64)
    out = np.empty_like(series)
    csum = np.cumsum(series)
    for i in range(series.size):
        start = max(0, i - window + 1)
        total = csum[i] - (csum[start - 1] if start > 0 else 0.0)
        out[i] = total / (i - start + 1)
    return out


def iqm_curve(runs, window: int = 1) -> np.ndarray:
    """Per-timestep interquartile mean over aligned series, then smoothed."""
    mat = np.asarray(runs, dtype=np.float64)
    if mat.ndim != 2:
        lengths = {len(r) for r in runs}
        raise ValueError(f"series lengths differ: {sorted(lengths)}")
    raw = np.array([iqm(mat[:, t]) for t in range(mat.shape[1])])
    return trailing_mean(raw, window)


def bootstrap_iqm_band(runs, window: int = 1, resamples: int = 1000,
                       alpha: float = 0.1,
                       rng: np.random.Generator | None = None):
    """Pointwise percentile-bootstrap band around the smoothed IQM curve,
    resampling whole runs with replacement."""
    rng = rng or np.random.default_rng(0)
    mat = np.asarray(runs, dtype=np.float64)
    n = mat.shape[0]
    curves = np.empty((resamples, mat.shape[1]))
    for b in range(resamples):
        pick = rng.integers(0, n, size=n)
        curves[b] = iqm_curve(mat[pick], window)
    lo = np.percentile(curves, 100.0 * (alpha / 2.0), axis=0)
    hi = np.percentile(curves, 100.0 * (1.0 - alpha / 2.0), axis=0)
    return lo, hi
