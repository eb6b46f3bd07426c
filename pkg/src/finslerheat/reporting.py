"""Uniform pass/fail reports for inequality checks.

Every checker returns an InequalityReport: the two compared sides, the worst
signed residual (positive means violated), where it happened, and the
tolerance that was applied together with how it was derived. Reports
serialize to JSON with sorted keys so repeated runs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def discretization_tolerance(h: float, dt: float, scale: float = 1.0) -> float:
    """Default acceptance margin max(10 h^2, 10 dt) times the data scale."""
    return max(10.0 * h * h, 10.0 * dt) * max(1.0, scale)


@dataclass(frozen=True)
class InequalityReport:
    """Outcome of one quantitative check of lhs <= rhs + tolerance."""

    name: str
    passed: bool
    worst_residual: float
    worst_location: dict
    tolerance: float
    tolerance_rule: str
    n_checked: int
    n_violations: int
    lhs_range: tuple[float, float]
    rhs_range: tuple[float, float]
    grid_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "passed": bool(self.passed),
            "worst_residual": float(self.worst_residual),
            "worst_location": self.worst_location,
            "tolerance": float(self.tolerance),
            "tolerance_rule": self.tolerance_rule,
            "n_checked": int(self.n_checked),
            "n_violations": int(self.n_violations),
            "lhs_range": [float(v) for v in self.lhs_range],
            "rhs_range": [float(v) for v in self.rhs_range],
            "grid_meta": self.grid_meta,
        }
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def compare(
    name: str,
    lhs: np.ndarray,
    rhs: np.ndarray,
    tolerance: float,
    tolerance_rule: str,
    locations=None,
    grid_meta: dict | None = None,
) -> InequalityReport:
    """Build a report for the pointwise inequality lhs <= rhs + tolerance.

    ``locations`` maps flat indices to a location description (index is
    used when omitted); scalar comparisons pass size-1 arrays.
    """
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    residual = lhs - rhs
    worst = int(np.argmax(residual))
    violations = int(np.count_nonzero(residual > tolerance))
    if locations is None:
        where = {"index": worst}
    else:
        where = dict(locations(worst))
    return InequalityReport(
        name=name,
        passed=violations == 0,
        worst_residual=float(residual[worst]),
        worst_location=where,
        tolerance=float(tolerance),
        tolerance_rule=tolerance_rule,
        n_checked=int(residual.size),
        n_violations=violations,
        lhs_range=(float(np.min(lhs)), float(np.max(lhs))),
        rhs_range=(float(np.min(rhs)), float(np.max(rhs))),
        grid_meta=grid_meta or {},
    )
