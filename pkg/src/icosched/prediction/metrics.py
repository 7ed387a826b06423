from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class EvalMetrics:
    mae: float
    mse: float
    mape: float
    # None when the truths have zero variance and R^2 is undefined.
    r2: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(predictions: Sequence[float], truths: Sequence[float]) -> EvalMetrics:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ShapeError(f"predictions {p.shape} and truths {t.shape} differ")
    if p.size == 0:
        raise ShapeError("cannot evaluate an empty prediction set")
    err = p - t
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err * err))
    nz = t != 0
    with np.errstate(over="ignore"):  # subnormal truths give an honest inf
        mape = float(np.mean(np.abs(err[nz]) / np.abs(t[nz]))) if nz.any() else 0.0
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(err * err)) / ss_tot
    return EvalMetrics(mae, mse, mape, r2)
