"""Solver result records shared by the Nehari and Newton solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONVERGED = "converged"
BUDGET = "budget"
STALLED = "stalled"


@dataclass(eq=False)
class SolutionRecord:
    u: np.ndarray  # full nodal vector
    energy: float
    residual: float
    constraint: float
    iterations: int
    status: str
    alpha: float = 0.0
    trace: list = field(default_factory=list)  # residual after each iteration
    field_ref: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.u)))

    def to_dict(self, include_field: bool = False) -> dict:
        d = {"energy": self.energy, "residual": self.residual, "constraint": self.constraint,
             "iterations": self.iterations, "field_ref": self.field_ref, "status": self.status,
             "alpha": self.alpha}
        if self.meta:
            d["meta"] = self.meta
        if include_field:
            d["values"] = self.u.tolist()
        return d
