"""Estimate reports and the estimates.csv schema.

Every audited inequality produces one `EstimateReport`. The bound direction
is stored explicitly:

- ``upper``: lhs <= rhs, margin = rhs - lhs,
- ``lower``: lhs >= rhs, margin = lhs - rhs,
- ``equal``: lhs == rhs, margin = -|lhs - rhs|.

A report passes iff its margin is non-negative. Reports whose hypotheses
could not be verified are skipped: in estimates.csv their ``passed`` cell is
``false``, ``params_json`` carries ``"status": "skipped"`` with the reason,
and they never count as failures. ``paper_eq`` holds the audited inequality
written out as text.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Literal, Optional

import numpy as np

Direction = Literal["upper", "lower", "equal"]
Status = Literal["pass", "fail", "skipped"]

CSV_COLUMNS: tuple[str, ...] = (
    "name",
    "paper_eq",
    "direction",
    "lhs",
    "rhs",
    "margin",
    "passed",
    "time",
    "center_s",
    "center_alpha",
    "radius",
    "params_json",
)


def margin_of(direction: Direction, lhs: float, rhs: float) -> float:
    if direction == "upper":
        return rhs - lhs
    if direction == "lower":
        return lhs - rhs
    return -abs(lhs - rhs)


def _plain(value: Any) -> Any:
    """Make numpy scalars, arrays and non-finite floats JSON friendly."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


@dataclass
class EstimateReport:
    name: str
    paper_eq: str
    direction: Direction
    lhs: float
    rhs: float
    margin: float
    status: Status
    params: Dict[str, Any] = field(default_factory=dict)
    time: Optional[float] = None
    center_s: Optional[float] = None
    center_alpha: Optional[float] = None
    radius: Optional[float] = None

    @classmethod
    def build(
        cls,
        name: str,
        paper_eq: str,
        direction: Direction,
        lhs: float,
        rhs: float,
        params: Optional[Dict[str, Any]] = None,
        *,
        tolerance: float = 0.0,
        time: Optional[float] = None,
        center: Any = None,
        radius: Optional[float] = None,
    ) -> "EstimateReport":
        """Evaluate the margin; `tolerance` is added to it before deciding."""
        margin = margin_of(direction, float(lhs), float(rhs))
        status: Status = "pass" if margin + tolerance >= 0.0 else "fail"
        return cls(
            name=name,
            paper_eq=paper_eq,
            direction=direction,
            lhs=float(lhs),
            rhs=float(rhs),
            margin=margin,
            status=status,
            params=dict(params or {}),
            time=time,
            center_s=None if center is None else float(center.s),
            center_alpha=None if center is None else float(center.alpha),
            radius=radius,
        )

    @classmethod
    def skipped(
        cls,
        name: str,
        paper_eq: str,
        direction: Direction,
        reason: str,
        params: Optional[Dict[str, Any]] = None,
        *,
        lhs: float = math.nan,
        rhs: float = math.nan,
        time: Optional[float] = None,
        center: Any = None,
        radius: Optional[float] = None,
    ) -> "EstimateReport":
        data = dict(params or {})
        data["status"] = "skipped"
        data["skip_reason"] = reason
        return cls(
            name=name,
            paper_eq=paper_eq,
            direction=direction,
            lhs=float(lhs),
            rhs=float(rhs),
            margin=math.nan,
            status="skipped",
            params=data,
            time=time,
            center_s=None if center is None else float(center.s),
            center_alpha=None if center is None else float(center.alpha),
            radius=radius,
        )

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    def params_json(self) -> str:
        return json.dumps(_plain(self.params), sort_keys=True, separators=(",", ":"))

    def row(self) -> list[str]:
        """One estimates.csv row in `CSV_COLUMNS` order."""

        def num(v: Optional[float]) -> str:
            return "" if v is None else format(v, ".17g")

        return [
            self.name,
            self.paper_eq,
            self.direction,
            num(self.lhs),
            num(self.rhs),
            num(self.margin),
            "true" if self.passed else "false",
            num(self.time),
            num(self.center_s),
            num(self.center_alpha),
            num(self.radius),
            self.params_json(),
        ]


def overall_status(reports: list[EstimateReport]) -> Status:
    """fail if any report failed, else pass (skipped reports are neutral)."""
    if any(r.failed for r in reports):
        return "fail"
    return "pass"
