"""Report records shared by the instruments, with JSON and text rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple


def _clean(x: Any):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in sorted(x.items())}
    if hasattr(x, "item"):
        return _clean(x.item())
    return x


@dataclass
class BoundReport:
    bound_id: str
    series: List[Tuple[float, float, float]]
    constants: Dict[str, Any] = field(default_factory=dict)
    passed: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def worst_ratio(self) -> float:
        ratios = [m / e for _, m, e in self.series if e > 0 and math.isfinite(e)]
        return max(ratios) if ratios else float("nan")

    def to_dict(self) -> dict:
        return _clean({
            "bound_id": self.bound_id,
            "series": [list(row) for row in self.series],
            "worst_ratio": self.worst_ratio,
            "constants": self.constants,
            "pass": bool(self.passed),
            "notes": list(self.notes),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [f"{self.bound_id}: {'PASS' if self.passed else 'FAIL'}  worst_ratio={self.worst_ratio:.6g}"]
        for k, v in sorted(self.constants.items()):
            lines.append(f"  {k:<24} {v}")
        lines.append(f"  {'t':>12} {'measured':>14} {'envelope':>14}")
        for t, m, e in self.series:
            lines.append(f"  {t:12.6g} {m:14.8g} {e:14.8g}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


@dataclass
class ResidualReport:
    identity_id: str
    residuals: List[float]
    spacings: List[float]
    passed: bool = False
    notes: List[str] = field(default_factory=list)

    @property
    def ratios(self) -> List[float]:
        r = self.residuals
        return [r[i] / r[i + 1] if r[i + 1] > 0 else float("inf") for i in range(len(r) - 1)]

    @property
    def order(self) -> float:
        """Least-squares slope of log residual against log spacing."""
        h = [math.log(x) for x in self.spacings]
        e = [math.log(max(x, 1e-300)) for x in self.residuals]
        hm, em = sum(h) / len(h), sum(e) / len(e)
        num = sum((a - hm) * (b - em) for a, b in zip(h, e))
        den = sum((a - hm) ** 2 for a in h)
        return num / den

    def to_dict(self) -> dict:
        return _clean({
            "identity_id": self.identity_id,
            "residuals": list(self.residuals),
            "spacings": list(self.spacings),
            "ratios": self.ratios,
            "order": self.order,
            "pass": bool(self.passed),
            "notes": list(self.notes),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = [f"{self.identity_id}: {'PASS' if self.passed else 'FAIL'}  order={self.order:.3f}"]
        lines.append(f"  {'spacing':>12} {'residual':>14} {'ratio':>8}")
        ratios = [float("nan")] + self.ratios
        for h, r, q in zip(self.spacings, self.residuals, ratios):
            lines.append(f"  {h:12.6g} {r:14.6e} {q:8.3f}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


def residual_report(identity_id: str, residuals: Sequence[float], spacings: Sequence[float],
                    min_order: float = 1.5, notes: Sequence[str] = ()) -> ResidualReport:
    if len(residuals) < 3:
        raise ValueError("residual studies need at least 3 refinement levels")
    rep = ResidualReport(identity_id, [float(r) for r in residuals], [float(h) for h in spacings],
                         notes=list(notes))
    decreasing = all(a > b for a, b in zip(rep.residuals, rep.residuals[1:]))
    rep.passed = bool(decreasing and rep.order >= min_order)
    return rep
