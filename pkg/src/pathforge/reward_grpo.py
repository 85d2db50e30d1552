"""Composite format/answer reward and the group-relative policy
optimization numerics: probability ratios, group-normalized advantages,
the clipped surrogate with KL penalty, and a finite-difference gradient
check on a toy softmax policy.

Rewards are exact integers: 1 for a valid <think>/<answer> response
template, 5 for a correct answer, summed. Format and answer are scored
independently, so a parseable answer block earns its 5 points even when
the think block is missing.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .entity_linker import normalize
from .errors import GroupInputError

DEFAULT_PROB_FLOOR = 1e-12

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    answer: int

    @property
    def total(self) -> int:
        return self.format + self.answer


class Matching(str, enum.Enum):
    OPTION = "option"
    NAME = "name"


def check_format(text: str) -> int:
    """1 iff the text contains exactly one well-nested <think> block
    followed by exactly one <answer> block, in that order."""
    counts = [text.count(tag) for tag in
              ("<think>", "</think>", "<answer>", "</answer>")]
    if counts != [1, 1, 1, 1]:
        return 0
    positions = [text.index(tag) for tag in
                 ("<think>", "</think>", "<answer>", "</answer>")]
    return 1 if positions == sorted(positions) and len(set(positions)) == 4 else 0


def extract_answer(text: str) -> str | None:
    """Content of the single <answer> block; None when the block is
    missing or ambiguous."""
    matches = _ANSWER_RE.findall(text)
    if len(matches) != 1:
        return None
    return matches[0]


def score_answer(text: str, gold: str, matching: Matching = Matching.OPTION) -> int:
    if not gold:
        raise ValueError("gold answer must be non-empty")
    content = extract_answer(text)
    if content is None:
        return 0
    if matching is Matching.OPTION:
        return 5 if content.strip().upper() == gold.strip().upper() else 0
    return 5 if normalize(content) == normalize(gold) else 0


def total_reward(text: str, gold: str, matching: Matching = Matching.OPTION) -> RewardBreakdown:
    return RewardBreakdown(format=check_format(text),
                           answer=score_answer(text, gold, matching))


def score_lines(
    pairs: Sequence[tuple[str, str]], matching: Matching = Matching.OPTION
) -> tuple[list[RewardBreakdown], float]:
    """Breakdown per (response, gold) line plus aggregate accuracy, the
    fraction of lines whose answer reward is 5."""
    breakdowns = [total_reward(text, gold, matching) for text, gold in pairs]
    if not breakdowns:
        return [], 0.0
    accuracy = sum(1 for b in breakdowns if b.answer == 5) / len(breakdowns)
    return breakdowns, accuracy


# ---------------------------------------------------------------------------
# GRPO numerics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyDist:
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(p < 0 for p in self.probabilities):
            raise ValueError("probabilities must be non-negative")
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-12:
            raise ValueError(
                f"probabilities must sum to 1, got {math.fsum(self.probabilities)!r}"
            )

    def __len__(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class GRPOConfig:
    epsilon: float = 0.2
    beta: float = 0.0
    group_size: int = 2
    std_floor: float = 1e-6

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be > 0")


@dataclass(frozen=True)
class ResponseGroup:
    responses: tuple[int, ...]
    rewards: tuple[float, ...]
    p_new: tuple[float, ...]
    p_old: tuple[float, ...]
    p_ref: tuple[float, ...]
    advantages: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        g = len(self.responses)
        if g < 2:
            raise GroupInputError(f"group size must be >= 2, got {g}")
        for name in ("rewards", "p_new", "p_old", "p_ref"):
            if len(getattr(self, name)) != g:
                raise GroupInputError(f"{name} length does not match group size {g}")
        if self.advantages is not None and len(self.advantages) != g:
            raise GroupInputError("advantages length does not match group size")

    @property
    def size(self) -> int:
        return len(self.responses)

    @classmethod
    def from_policies(
        cls,
        responses: Sequence[int],
        rewards: Sequence[float],
        new: PolicyDist,
        old: PolicyDist,
        ref: PolicyDist,
    ) -> "ResponseGroup":
        if not (len(new) == len(old) == len(ref)):
            raise GroupInputError("policy distributions must share a support")
        for y in responses:
            if not 0 <= y < len(new):
                raise GroupInputError(f"response index {y} outside policy support")
        return cls(
            responses=tuple(responses),
            rewards=tuple(float(r) for r in rewards),
            p_new=tuple(new.probabilities[y] for y in responses),
            p_old=tuple(old.probabilities[y] for y in responses),
            p_ref=tuple(ref.probabilities[y] for y in responses),
        )

    def with_advantages(self, std_floor: float) -> "ResponseGroup":
        return replace(self, advantages=tuple(compute_advantages(self.rewards, std_floor)))


def compute_advantages(rewards: Sequence[float], std_floor: float) -> list[float]:
    """Group-normalized advantages (r_i - mean) / max(population std,
    std_floor). A degenerate all-equal group carries no signal and maps
    to exact zeros."""
    g = len(rewards)
    if g < 2:
        raise ValueError("need at least 2 rewards")
    if std_floor <= 0:
        raise ValueError("std_floor must be > 0")
    if all(r == rewards[0] for r in rewards):
        return [0.0] * g
    mean = math.fsum(rewards) / g
    var = math.fsum((r - mean) ** 2 for r in rewards) / g
    denom = max(math.sqrt(var), std_floor)
    return [(r - mean) / denom for r in rewards]


def probability_ratio(p_new: float, p_old: float, floor: float = DEFAULT_PROB_FLOOR) -> float:
    if p_old < floor:
        raise ValueError(f"denominator probability {p_old!r} below floor {floor!r}")
    return p_new / p_old


def clipped_term(ratio: float, advantage: float, epsilon: float) -> float:
    """min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_divergence(p: PolicyDist, q: PolicyDist, floor: float = DEFAULT_PROB_FLOOR) -> float:
    """Exact KL over explicit finite distributions, with 0 log(0/q) = 0."""
    if len(p) != len(q):
        raise ValueError(f"support size mismatch: {len(p)} vs {len(q)}")
    acc = 0.0
    for pi, qi in zip(p.probabilities, q.probabilities):
        if pi == 0.0:
            continue
        if qi < floor:
            raise ValueError(f"reference probability {qi!r} below floor {floor!r}")
        acc += pi * math.log(pi / qi)
    return acc


def grpo_objective(
    group: ResponseGroup,
    config: GRPOConfig,
    new: PolicyDist,
    old: PolicyDist,
    ref: PolicyDist,
) -> float:
    """(1/G) sum_i clipped_term(p_i, A_i, eps) - beta * KL(new || ref)."""
    if group.size != config.group_size:
        raise GroupInputError(
            f"group size {group.size} does not match config group_size {config.group_size}"
        )
    if group.advantages is None:
        raise GroupInputError("advantages must be computed before evaluating the objective")
    for i, y in enumerate(group.responses):
        if not 0 <= y < len(new):
            raise GroupInputError(f"response index {y} outside policy support")
        if (group.p_new[i] != new.probabilities[y]
                or group.p_old[i] != old.probabilities[y]
                or group.p_ref[i] != ref.probabilities[y]):
            raise GroupInputError("group probabilities are inconsistent with the policies")
    total = 0.0
    for i in range(group.size):
        ratio = probability_ratio(group.p_new[i], group.p_old[i])
        total += clipped_term(ratio, group.advantages[i], config.epsilon)
    surrogate = total / group.size
    penalty = config.beta * kl_divergence(new, ref) if config.beta else 0.0
    return surrogate - penalty


# ---------------------------------------------------------------------------
# Toy softmax policy and gradient check
# ---------------------------------------------------------------------------


def softmax(theta: Sequence[float]) -> np.ndarray:
    z = np.asarray(theta, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class ToyGroup:
    """A fixed sampled group for the toy policy: response indices, their
    rewards, the old policy, and the reference policy."""

    responses: tuple[int, ...]
    rewards: tuple[float, ...]
    old: PolicyDist
    ref: PolicyDist

    def __post_init__(self) -> None:
        if len(self.responses) != len(self.rewards):
            raise GroupInputError("responses and rewards must have equal length")
        if len(self.responses) < 2:
            raise GroupInputError("group size must be >= 2")


def toy_objective(theta: Sequence[float], group: ToyGroup, config: GRPOConfig) -> float:
    """GRPO objective as a deterministic function of the toy policy
    logits, with the sampled group held fixed."""
    new = PolicyDist(tuple(float(p) for p in softmax(theta)))
    rg = ResponseGroup.from_policies(group.responses, group.rewards,
                                     new, group.old, group.ref)
    rg = rg.with_advantages(config.std_floor)
    cfg = replace(config, group_size=rg.size)
    return grpo_objective(rg, cfg, new, group.old, group.ref)


def toy_gradient(theta: Sequence[float], group: ToyGroup, config: GRPOConfig) -> np.ndarray:
    """Analytic gradient of toy_objective with respect to the logits."""
    pi = softmax(theta)
    n = len(pi)
    g = len(group.responses)
    advantages = compute_advantages(group.rewards, config.std_floor)
    grad = np.zeros(n)
    for y, adv in zip(group.responses, advantages):
        p_old = group.old.probabilities[y]
        ratio = pi[y] / p_old
        clipped = min(max(ratio, 1.0 - config.epsilon), 1.0 + config.epsilon)
        unclipped_term = ratio * adv
        clipped_term_val = clipped * adv
        if unclipped_term <= clipped_term_val:
            dterm_dratio = adv
        elif 1.0 - config.epsilon < ratio < 1.0 + config.epsilon:
            dterm_dratio = adv
        else:
            dterm_dratio = 0.0
        if dterm_dratio != 0.0:
            # d pi[y] / d theta_k = pi[y] * (delta_{yk} - pi[k])
            dpi = -pi[y] * pi
            dpi[y] += pi[y]
            grad += (dterm_dratio / p_old) * dpi
    grad /= g
    if config.beta:
        ref = np.asarray(group.ref.probabilities)
        log_ratio = np.log(pi / ref)
        kl = float(np.sum(pi * log_ratio))
        grad -= config.beta * pi * (log_ratio - kl)
    return grad


def grpo_gradient_check(
    theta: Sequence[float],
    group: ToyGroup,
    config: GRPOConfig,
    step: float = 1e-5,
) -> float:
    """Max relative error between the analytic gradient and central finite
    differences of the toy objective."""
    theta = np.asarray(theta, dtype=float)
    analytic = toy_gradient(theta, group, config)
    fd = np.zeros_like(analytic)
    for k in range(len(theta)):
        bumped = theta.copy()
        bumped[k] += step
        plus = toy_objective(bumped, group, config)
        bumped[k] -= 2 * step
        minus = toy_objective(bumped, group, config)
        fd[k] = (plus - minus) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))
