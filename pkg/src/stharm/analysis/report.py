"""Machine-readable experiment reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays (recursively) to JSON-friendly Python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    return value


@dataclass
class Assertion:
    """One named one-sided check ``lhs <= rhs + tolerance`` (or a plain flag when lhs/rhs are None)."""

    name: str
    passed: bool
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


@dataclass
class ExperimentReport:
    experiment: str
    config: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def estimate(self, name: str, value, se=None, **extra) -> None:
        entry = {"value": value}
        if se is not None:
            entry["se"] = se
        entry.update(extra)
        self.estimates[name] = entry

    def check(self, name: str, passed: bool, lhs=None, rhs=None, tolerance=None, detail: str = "") -> Assertion:
        a = Assertion(
            name,
            bool(passed),
            None if lhs is None else float(lhs),
            None if rhs is None else float(rhs),
            None if tolerance is None else float(tolerance),
            detail,
        )
        self.assertions.append(a)
        return a

    def extend(self, other: "ExperimentReport", prefix: str = "") -> None:
        for k, v in other.estimates.items():
            self.estimates[prefix + k] = v
        for a in other.assertions:
            self.assertions.append(Assertion(prefix + a.name, a.passed, a.lhs, a.rhs, a.tolerance, a.detail))
        self.notes.extend(other.notes)

    def to_dict(self) -> dict:
        return _plain(
            {
                "experiment": self.experiment,
                "passed": self.passed,
                "config": self.config,
                "estimates": self.estimates,
                "assertions": [asdict(a) for a in self.assertions],
                "notes": self.notes,
                "wall_time": self.wall_time,
            }
        )

    def to_json(self, path=None, indent: int = 2) -> str:
        text = json.dumps(self.to_dict(), indent=indent, sort_keys=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def summary_lines(self) -> list[str]:
        lines = [f"{self.experiment}: {'PASS' if self.passed else 'FAIL'}"]
        for a in self.assertions:
            tag = "pass" if a.passed else "FAIL"
            if a.lhs is not None and a.rhs is not None:
                tol = f" (tol {a.tolerance:.3g})" if a.tolerance is not None else ""
                lines.append(f"  [{tag}] {a.name}: {a.lhs:.6g} <= {a.rhs:.6g}{tol} {a.detail}".rstrip())
            else:
                lines.append(f"  [{tag}] {a.name} {a.detail}".rstrip())
        return lines


def mean_se(values: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    se = values.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.full_like(mean, np.inf)
    return mean, se
