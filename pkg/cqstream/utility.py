"""Per-segment utilities: alpha-fairness, switching discount, max-min."""

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from cqstream.errors import ObjectiveError, QualityDomainError
from cqstream.ladder import QualityConvention


class SwitchingDiscount(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_same: float = 1.0
    delta_diff: float = Field(0.9, gt=0.0, le=1.0)

    @field_validator("delta_same")
    @classmethod
    def _same_is_one(cls, v):
        if v != 1.0:
            raise ValueError("delta_same is fixed at 1")
        return v


class Objective(BaseModel):
    """What the planner maximizes.

    ``alpha-fair`` sums U_alpha(q) (optionally discounted on level switches);
    ``max-min`` maximizes the smallest quality along the path.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["alpha-fair", "max-min"] = "alpha-fair"
    alpha: float = Field(0.0, ge=0.0)
    switching_discount: Optional[SwitchingDiscount] = None

    @classmethod
    def alpha_fair(cls, alpha=0.0, delta_diff=None):
        discount = SwitchingDiscount(delta_diff=delta_diff) if delta_diff is not None else None
        return cls(kind="alpha-fair", alpha=alpha, switching_discount=discount)

    @classmethod
    def max_min(cls):
        return cls(kind="max-min")

    @classmethod
    def parse(cls, text, delta_diff=None):
        """``max-min`` | ``alpha-fair:<alpha>`` | ``alpha=<alpha>``."""
        text = text.strip()
        if text == "max-min":
            return cls.max_min()
        for prefix in ("alpha-fair:", "alpha-fair=", "alpha=", "alpha:"):
            if text.startswith(prefix):
                try:
                    alpha = float(text[len(prefix):])
                except ValueError:
                    raise ObjectiveError(f"bad alpha in objective {text!r}")
                return cls.alpha_fair(alpha, delta_diff=delta_diff)
        if text == "alpha-fair":
            return cls.alpha_fair(0.0, delta_diff=delta_diff)
        raise ObjectiveError(f"unknown objective {text!r}")

    @property
    def label(self):
        if self.kind == "max-min":
            return "max-min"
        return f"alpha-fair:{self.alpha:g}"


def check_objective(objective, convention):
    """Reject objective/convention pairs with no meaningful utility."""
    convention = QualityConvention(convention)
    if convention is QualityConvention.NEGATED_MSE:
        if objective.kind == "alpha-fair" and objective.alpha != 0:
            raise ObjectiveError(
                f"negated-mse qualities only support max-min or alpha=0, got alpha={objective.alpha}")


def u_alpha(q, alpha):
    if alpha < 0:
        raise QualityDomainError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return float(q)
    if q <= 0:
        raise QualityDomainError(f"U_alpha needs q > 0 for alpha={alpha}, got q={q}")
    if alpha == 1:
        return math.log(q)
    return q ** (1.0 - alpha) / (1.0 - alpha)


def step_utility(q, prev_level, cur_level, objective):
    if objective.kind == "max-min":
        return float(q)
    delta = 1.0
    discount = objective.switching_discount
    if discount is not None and prev_level is not None and prev_level != cur_level:
        delta = discount.delta_diff
    return delta * u_alpha(q, objective.alpha)


@dataclass(frozen=True)
class Accumulator:
    name: str
    identity: float
    combine: Callable[[float, float], float]


SUM = Accumulator("sum", 0.0, lambda acc, u: acc + u)
MIN = Accumulator("min", math.inf, min)


def accumulator_for(objective):
    return MIN if objective.kind == "max-min" else SUM


def path_utility(qualities, levels, objective, prev_level=None):
    """Accumulated utility of a whole level path."""
    acc = accumulator_for(objective)
    total = acc.identity
    prev = prev_level
    for q, level in zip(qualities, levels):
        total = acc.combine(total, step_utility(q, prev, level, objective))
        prev = level
    return total
