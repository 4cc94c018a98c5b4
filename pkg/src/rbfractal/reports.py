"""Result and certificate types shared by the operator modules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

from rbfractal.geometry import PartitionReport

if TYPE_CHECKING:
    from rbfractal.grid import GridFunction

__all__ = [
    "ConditionKind",
    "ConditionReport",
    "FixedPointResult",
    "PartitionReport",
    "Witness",
]


class ConditionKind(StrEnum):
    CONTINUOUS = "continuous"
    LP = "lp"
    COMPATIBILITY = "compatibility"
    INTERPOLATION = "interpolation"
    SUMMABILITY = "summability"
    JOIN_UP = "join_up"


@dataclass(frozen=True)
class Witness:
    """One checked equation ``lhs = rhs`` at ``location``."""

    location: str
    lhs: float | tuple[float, ...]
    rhs: float | tuple[float, ...]
    gap: float
    point: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ConditionReport:
    kind: ConditionKind
    witnesses: tuple[Witness, ...]
    tolerance: float
    measure: float | None = None

    @property
    def verdict(self) -> bool:
        return all(w.gap <= self.tolerance for w in self.witnesses)

    @property
    def max_gap(self) -> float:
        return max((w.gap for w in self.witnesses), default=0.0)

    @property
    def worst(self) -> Witness | None:
        return max(self.witnesses, key=lambda w: w.gap, default=None)

    def summary(self) -> str:
        status = "ok" if self.verdict else "FAILED"
        parts = [f"{self.kind}: {status}"]
        if self.measure is not None:
            parts.append(f"measure={self.measure:.12g}")
        if self.witnesses:
            parts.append(f"witnesses={len(self.witnesses)}")
            parts.append(f"max_gap={self.max_gap:.3e}")
        worst = self.worst
        if worst is not None and not self.verdict:
            parts.append(f"at {worst.location}")
        return " ".join(parts)


@dataclass(frozen=True)
class FixedPointResult:
    """Outcome of a Banach iteration ``ψ_k = T ψ_{k-1}``."""

    psi: GridFunction
    iterations: int
    contraction_s: float
    apriori_bound: float
    residual: float

    def converged(self, eps: float) -> bool:
        return self.apriori_bound <= eps and not math.isnan(self.residual)
