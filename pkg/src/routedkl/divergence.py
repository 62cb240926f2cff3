"""KL divergences, their analytic logit gradients, and per-entry clipping.

Conventions: for a fixed token position, the teacher distribution q and
student distribution p live on the same floored support. Forward KL is
KL(q || p) (teacher first), reverse KL is KL(p || q). Gradients are taken
with respect to the student logits of p = softmax(l):

    d KL_F / d l_v = p_v - q_v
    d KL_R / d l_v = p_v * (r_v - rbar),   r_v = log(p_v / q_v)

Both are zero-sum because softmax is shift invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, RangeError, UndefinedDivergenceError
from .policy import validate_distribution


def _check_pair(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = validate_distribution(p, "p")
    q = validate_distribution(q, "q")
    if p.shape != q.shape:
        raise DimensionError(f"vocabulary sizes differ: {p.size} vs {q.size}")
    return p, q


def kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats. Requires q > 0 wherever p > 0."""
    p, q = _check_pair(p, q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise UndefinedDivergenceError("q vanishes on the support of p")
    return float((p[mask] * (np.log(p[mask]) - np.log(q[mask]))).sum())


@dataclass(frozen=True)
class LogRatioStats:
    """Per-token log ratios r_v = log(p_v / q_v) and their p-mean."""

    r: np.ndarray
    r_bar: float


def log_ratio_stats(student: np.ndarray, teacher: np.ndarray) -> LogRatioStats:
    p, q = _check_pair(student, teacher)
    if np.any(q <= 0) or np.any(p <= 0):
        raise UndefinedDivergenceError(
            "log ratios need strictly positive entries; floor both "
            "distributions first"
        )
    r = np.log(p) - np.log(q)
    return LogRatioStats(r=r, r_bar=float((p * r).sum()))


def fkl_logit_grad(student: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """Gradient of KL(teacher || student) w.r.t. student logits: p - q."""
    p, q = _check_pair(student, teacher)
    return p - q


def rkl_logit_grad(student: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """Gradient of KL(student || teacher) w.r.t. student logits."""
    stats = log_ratio_stats(student, teacher)
    p = np.asarray(student, dtype=float)
    return p * (stats.r - stats.r_bar)


def mixed_beta_grad(
    student: np.ndarray, teacher: np.ndarray, beta: float
) -> np.ndarray:
    """Gradient of beta*FKL + (1-beta)*RKL; affine in beta."""
    if not (0.0 <= beta <= 1.0):
        raise RangeError(f"beta={beta} outside [0, 1]")
    return beta * fkl_logit_grad(student, teacher) + (1.0 - beta) * rkl_logit_grad(
        student, teacher
    )


def clip_per_vocab_kl(
    kl_terms: np.ndarray, tau: float, two_sided: bool = True
) -> np.ndarray:
    """Clamp per-vocabulary KL contributions before the position sum.

    Two-sided by default; one-sided clips only the positive tail.
    """
    if tau <= 0:
        raise RangeError(f"tau={tau} must be positive")
    terms = np.asarray(kl_terms, dtype=float)
    if two_sided:
        return np.clip(terms, -tau, tau)
    return np.minimum(terms, tau)


def fkl_per_vocab_terms(student: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """Entries q_v * log(q_v / p_v); they sum to KL(teacher || student)."""
    p, q = _check_pair(student, teacher)
    if np.any(p[q > 0] <= 0):
        raise UndefinedDivergenceError("student vanishes on teacher support")
    terms = np.zeros_like(q)
    nz = q > 0
    terms[nz] = q[nz] * (np.log(q[nz]) - np.log(p[nz]))
    return terms


def rkl_per_vocab_terms(student: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """Entries p_v * log(p_v / q_v); they sum to KL(student || teacher)."""
    p, q = _check_pair(student, teacher)
    if np.any(q[p > 0] <= 0):
        raise UndefinedDivergenceError("teacher vanishes on student support")
    terms = np.zeros_like(p)
    nz = p > 0
    terms[nz] = p[nz] * (np.log(p[nz]) - np.log(q[nz]))
    return terms


def fkl_clipped_value_and_grad(
    student: np.ndarray, teacher: np.ndarray, tau: float, two_sided: bool = True
) -> tuple[float, np.ndarray]:
    """Clipped forward-KL value and its exact student-logit gradient.

    Per-vocabulary terms are clamped at tau; gradient flows only through
    entries in the unclipped region. With every entry unclipped this
    reduces to p - q.
    """
    p, q = _check_pair(student, teacher)
    terms = fkl_per_vocab_terms(p, q)
    clipped = clip_per_vocab_kl(terms, tau, two_sided)
    live = clipped == terms
    q_live = float(q[live].sum())
    grad = p * q_live
    grad[live] -= q[live]
    return float(clipped.sum()), grad


def rkl_clipped_value_and_grad(
    student: np.ndarray, teacher: np.ndarray, tau: float, two_sided: bool = True
) -> tuple[float, np.ndarray]:
    """Clipped reverse-KL value and its exact student-logit gradient."""
    p, q = _check_pair(student, teacher)
    stats = log_ratio_stats(p, q)
    terms = p * stats.r
    clipped = clip_per_vocab_kl(terms, tau, two_sided)
    live = clipped == terms
    # d(p_v r_v)/d l_u = p_v (1[u=v] - p_u)(r_v + 1); summed over live v.
    weighted = float((p[live] * (stats.r[live] + 1.0)).sum())
    grad = -p * weighted
    grad[live] += p[live] * (stats.r[live] + 1.0)
    return float(clipped.sum()), grad
