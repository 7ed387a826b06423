"""Least-squares line fits for QPS -> CPU / memory demand."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from ..errors import DegenerateFit


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    input_label: str = "qps"
    output_label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ValueError("linear model parameters must be finite")

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "input_label": self.input_label,
            "output_label": self.output_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearModel:
        return cls(float(d["slope"]), float(d["intercept"]), d.get("input_label", "qps"), d.get("output_label", ""))


def fit_linear(
    samples: Iterable[tuple[float, float]],
    input_label: str = "qps",
    output_label: str = "",
) -> LinearModel:
    """Ordinary least squares through ``(x, y)`` pairs.

    Uses centred sums, which keeps the slope accurate when ``x`` has a large
    offset relative to its spread.
    """
    pts = [(float(x), float(y)) for x, y in samples]
    if len(pts) < 2:
        raise DegenerateFit(f"need at least 2 samples, got {len(pts)}")
    n = len(pts)
    mean_x = math.fsum(x for x, _ in pts) / n
    mean_y = math.fsum(y for _, y in pts) / n
    sxx = math.fsum((x - mean_x) ** 2 for x, _ in pts)
    if sxx == 0:
        raise DegenerateFit("all x values are identical")
    sxy = math.fsum((x - mean_x) * (y - mean_y) for x, y in pts)
    slope = sxy / sxx
    return LinearModel(slope, mean_y - slope * mean_x, input_label, output_label)


def predict_resources(cpu_model: LinearModel, mem_model: LinearModel, qps: float) -> tuple[float, float]:
    """CPU cores and memory for a pod at ``qps``; negative outputs clamp to 0."""
    if qps < 0:
        raise ValueError(f"qps must be non-negative, got {qps}")
    return max(0.0, cpu_model(qps)), max(0.0, mem_model(qps))
