"""Run diagnostics: key-token probability lift, credit concentration, EMA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RangeError


@dataclass(frozen=True)
class LiftSample:
    """One (position, token) log-prob pair around a parameter update.

    ``teacher_supported`` must be evaluated strictly at the pre-update
    policy; samples failing that filter do not enter the lift average.
    """

    position: int
    token: int
    logprob_before: float
    logprob_after: float
    teacher_supported: bool


def delta_lift(samples: list[LiftSample]) -> float | None:
    """Mean post-update log-prob change over teacher-supported samples.

    Returns None (absent, not zero) when no sample passes the filter.
    """
    qualifying = [s for s in samples if s.teacher_supported]
    if not qualifying:
        return None
    return float(
        np.mean([s.logprob_after - s.logprob_before for s in qualifying])
    )


def credit_concentration(
    per_token_credit: np.ndarray, mask: np.ndarray
) -> float | None:
    """Mean credit inside the mask divided by mean credit outside.

    Credit is the per-position update magnitude (L2 norm of the logit
    gradient times step size, computed by the caller). Returns None when
    either region is empty or the outside mean is zero.
    """
    credit = np.asarray(per_token_credit, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if credit.shape != mask.shape:
        raise DimensionError("credit and mask lengths differ")
    if np.any(credit < 0):
        raise RangeError("credit must be nonnegative")
    inside = credit[mask]
    outside = credit[~mask]
    if inside.size == 0 or outside.size == 0:
        return None
    outside_mean = float(outside.mean())
    if outside_mean == 0.0:
        return None
    return float(inside.mean()) / outside_mean


@dataclass
class EmaSeries:
    """Raw series with its exponentially smoothed companion.

    alpha is the retention weight: smoothed_k = alpha * smoothed_{k-1}
    + (1 - alpha) * raw_k, seeded at the first raw value, so alpha -> 0
    recovers the raw series.
    """

    alpha: float
    raw: list
    smoothed: list


def ema(series, alpha: float) -> list[float]:
    """Exponential moving average with retention weight alpha in (0, 1]."""
    if not (0.0 < alpha <= 1.0):
        raise RangeError(f"alpha={alpha} outside (0, 1]")
    values = [float(x) for x in series]
    if not values:
        return []
    out = [values[0]]
    for x in values[1:]:
        out.append(alpha * out[-1] + (1.0 - alpha) * x)
    return out


def ema_series(series, alpha: float) -> EmaSeries:
    values = [float(x) for x in series]
    return EmaSeries(alpha=alpha, raw=values, smoothed=ema(values, alpha))
