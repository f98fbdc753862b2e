"""
監査レポート - 検査ごとの左辺・右辺・余裕・判定と JSON 出力
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

PASS = "pass"
FAIL = "fail"
NOT_APPLICABLE = "not-applicable"
INFO = "info"
VERDICTS = (PASS, FAIL, NOT_APPLICABLE, INFO)

DEFAULT_RTOL = 1e-8


@dataclass
class Premise:
    name: str
    ok: bool
    detail: str = ""

    def __post_init__(self):
        self.ok = bool(self.ok)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "ok": self.ok, "detail": self.detail}


@dataclass
class CheckResult:
    id: str
    lhs: float
    rhs: float
    verdict: str
    premises: List[Premise] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    values: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"未知の判定です: {self.verdict}")

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def premises_verified(self) -> bool:
        return all(p.ok for p in self.premises)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "lhs": _finite_or_none(self.lhs),
            "rhs": _finite_or_none(self.rhs),
            "margin": _finite_or_none(self.margin),
            "verdict": self.verdict,
            "premises": [p.to_dict() for p in self.premises],
            "premises_verified": self.premises_verified,
            "notes": list(self.notes),
            "values": {k: _jsonable(v) for k, v in self.values.items()},
        }


def _finite_or_none(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _jsonable(v):
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    try:
        return _finite_or_none(v)
    except (TypeError, ValueError):
        return str(v)


def judge(
    lhs: float, rhs: float, premises: List[Premise], scale: Optional[float] = None,
    rtol: float = DEFAULT_RTOL, atol: float = 0.0,
) -> str:
    """lhs <= rhs を rtol·scale の許容で判定。前提が一つでも崩れていれば not-applicable"""
    if not all(p.ok for p in premises):
        return NOT_APPLICABLE
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        return FAIL
    tol = rtol * (scale if scale is not None else abs(lhs) + abs(rhs)) + atol
    return PASS if rhs - lhs >= -tol else FAIL


def inequality(
    check_id: str, lhs: float, rhs: float, premises: List[Premise], scale: Optional[float] = None,
    rtol: float = DEFAULT_RTOL, atol: float = 0.0, notes: Optional[List[str]] = None, **values,
) -> CheckResult:
    verdict = judge(lhs, rhs, premises, scale, rtol, atol)
    return CheckResult(check_id, float(lhs), float(rhs), verdict, list(premises), list(notes or []), values)


def info(check_id: str, lhs: float, rhs: float, notes: Optional[List[str]] = None, **values) -> CheckResult:
    """判定を伴わない記録用の項目"""
    return CheckResult(check_id, float(lhs), float(rhs), INFO, [], list(notes or []), values)


def not_applicable(check_id: str, premises: List[Premise], notes: Optional[List[str]] = None, **values) -> CheckResult:
    return CheckResult(check_id, math.nan, math.nan, NOT_APPLICABLE, list(premises), list(notes or []), values)


def failed(check_id: str, message: str, **values) -> CheckResult:
    """監査そのものが例外で止まったときの記録"""
    return CheckResult(check_id, math.nan, math.nan, FAIL, [], [message], values)


class TheoryReport:
    def __init__(self, meta: Optional[Dict[str, Any]] = None):
        self.meta: Dict[str, Any] = dict(meta or {})
        self.checks: List[CheckResult] = []

    def add(self, *checks: CheckResult) -> None:
        for check in checks:
            logger.info("監査 %s: %s (margin=%.3e)", check.id, check.verdict, check.margin if math.isfinite(check.margin) else math.nan)
            self.checks.append(check)

    def extend(self, checks) -> None:
        self.add(*checks)

    def get(self, check_id: str) -> CheckResult:
        for check in self.checks:
            if check.id == check_id:
                return check
        raise KeyError(check_id)

    def ids(self) -> List[str]:
        return [c.id for c in self.checks]

    def counts(self) -> Dict[str, int]:
        out = {v: 0 for v in VERDICTS}
        for c in self.checks:
            out[c.verdict] += 1
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "meta": {k: _jsonable(v) for k, v in sorted(self.meta.items())},
            "summary": self.counts(),
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path
