"""Group-relative policy optimization math as pure functions.

Callers supply per-token probability ratios and scalar rewards for a
group of G rollouts; this module standardizes rewards into advantages
and evaluates the clipped surrogate objective

    (1/G) sum_i (1/|o_i|) sum_j min(r_ij * A_i, clip(r_ij, 1-eps, 1+eps) * A_i)

with no KL penalty term.  Because every sample's token sum is divided
by its own length, a short rollout concentrates its advantage into
fewer tokens: each of its tokens moves the objective A_i / (G * |o_i|)
per unit of ratio change around r = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence


class GroupTooSmall(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


class NonPositiveRatio(ValueError):
    pass


# Groups whose rewards all match within this spread get zero advantages.
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GroupSample:
    """One rollout: its per-token policy ratios and scalar reward."""

    token_ratios: tuple[float, ...]
    reward: float

    def __post_init__(self):
        object.__setattr__(self, "token_ratios", tuple(float(r) for r in self.token_ratios))
        if not self.token_ratios:
            raise ValueError("sample needs at least one token ratio")
        for r in self.token_ratios:
            if not math.isfinite(r) or r <= 0:
                raise NonPositiveRatio(f"token ratio must be finite and positive, got {r!r}")
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")

    @property
    def length(self) -> int:
        return len(self.token_ratios)


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    group_size: int = 2

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.group_size < 2:
            raise GroupTooSmall("group size must be at least 2")


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Standardize rewards within the group: (R_i - mean) / population std.

    A degenerate group (std below 1e-12) yields all-zero advantages
    rather than dividing by zero.
    """
    if len(rewards) < 2:
        raise GroupTooSmall("need at least 2 rewards to standardize")
    mean = sum(rewards) / len(rewards)
    variance = sum((r - mean) ** 2 for r in rewards) / len(rewards)
    std = math.sqrt(variance)
    if std < DEGENERATE_STD:
        return [0.0] * len(rewards)
    return [(r - mean) / std for r in rewards]


def clipped_token_term(ratio: float, advantage: float, epsilon: float) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A) for one token."""
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def grpo_objective(
    samples: Sequence[GroupSample],
    config: GrpoConfig,
    kl_hook: Callable[[Sequence[GroupSample]], float] | None = None,
) -> float:
    """Evaluate the clipped group objective over one group of rollouts.

    Advantages come from group_advantages over the sample rewards.  The
    kl_hook slot exists for a subtractive regularizer but nothing in
    this package supplies one; left as None the term is absent.
    """
    if not samples:
        raise EmptyGroup("no samples in group")
    if len(samples) != config.group_size:
        raise ValueError(
            f"got {len(samples)} samples for configured group size {config.group_size}"
        )
    advantages = group_advantages([s.reward for s in samples])
    total = 0.0
    for sample, advantage in zip(samples, advantages):
        token_sum = 0.0
        for ratio in sample.token_ratios:
            token_sum += clipped_token_term(ratio, advantage, config.epsilon)
        total += token_sum / sample.length
    objective = total / len(samples)
    if kl_hook is not None:
        objective -= kl_hook(samples)
    return objective
