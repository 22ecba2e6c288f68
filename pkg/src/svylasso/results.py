"""Common result container for the inference methods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple


@dataclass(frozen=True)
class InferenceResult:
    """Estimate, CI, test statistic and p-value with a method tag.

    method is one of {"DB", "SI", "SI2", "Calpha", "t_svy"}.  applicable is
    False when the method cannot be computed for the requested target (e.g.
    SI on a variable the Lasso did not select); such results mirror the "-"
    cells of reported tables.
    """

    method: str
    target: str
    estimate: float = float("nan")
    se: float = float("nan")
    statistic: float = float("nan")
    pvalue: float = float("nan")
    ci: Tuple[float, float] = (float("nan"), float("nan"))
    level: float = 0.95
    df: Optional[int] = None
    applicable: bool = True
    used_pinv: bool = False
