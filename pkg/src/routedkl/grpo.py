"""Group-relative advantages and the clipped policy-gradient surrogate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInputError, RangeError


@dataclass(frozen=True)
class ClipConfig:
    """Asymmetric ratio clip; the high side is wider than the low side."""

    eps_low: float = 0.2
    eps_high: float = 0.28

    def __post_init__(self) -> None:
        if not (0 < self.eps_low <= self.eps_high):
            raise RangeError(
                f"need 0 < eps_low <= eps_high, got ({self.eps_low}, {self.eps_high})"
            )


@dataclass
class RolloutGroup:
    """G rollouts for one prompt with their binary verifier rewards."""

    rollouts: list
    rewards: np.ndarray

    def __post_init__(self) -> None:
        self.rewards = np.asarray(self.rewards, dtype=float)
        if len(self.rollouts) < 2 or self.rewards.size != len(self.rollouts):
            raise RangeError("a rollout group needs G >= 2 matching rewards")
        if not np.all(np.isin(self.rewards, (0.0, 1.0))):
            raise RangeError("rewards must be binary")


def group_advantages(rewards: np.ndarray) -> np.ndarray:
    """Standardized advantages (R - mean) / std with the 0/0 = 0 dead zone.

    Population standard deviation, so a (1, 0) group maps to (1, -1).
    Every token of a rollout shares its rollout's advantage.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise RangeError("need at least two rollouts per group")
    mu = r.mean()
    sigma = r.std()
    if sigma == 0.0:
        return np.zeros_like(r)
    return (r - mu) / sigma


def grpo_token_loss(
    log_ratio: float, advantage: float, clip: ClipConfig = ClipConfig()
) -> tuple[float, float]:
    """Clipped surrogate for one token.

    Returns (loss, grad_factor) where loss = -min(rho*A, clamp(rho)*A),
    rho = exp(log_ratio), and grad_factor = d loss / d log pi(y_t). The
    factor is zero exactly when the clip binds against the improvement
    direction; multiply it by the score vector (e_y - pi) to get the
    logit gradient.
    """
    if not np.isfinite(log_ratio):
        raise NonFiniteInputError("log ratio must be finite")
    rho = float(np.exp(log_ratio))
    clamped = min(max(rho, 1.0 - clip.eps_low), 1.0 + clip.eps_high)
    s_free = rho * advantage
    s_clip = clamped * advantage
    loss = -min(s_free, s_clip)
    grad_factor = -s_free if s_free <= s_clip else 0.0
    return loss, grad_factor
