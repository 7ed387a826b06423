"""QPS profiles: a mean-reverting random walk, or a replayed CSV series."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import ParseError


@dataclass(frozen=True)
class RandomWalkProfile:
    target: float
    step_sigma: float
    floor: float
    cap: float
    kappa: float = 0.1

    def __post_init__(self):
        if not self.target > 0:
            raise ValueError("target qps must be positive")
        if self.cap < self.floor:
            raise ValueError("cap must be >= floor")


@dataclass(frozen=True)
class TraceProfile:
    series: tuple[float, ...]

    def __post_init__(self):
        if not self.series:
            raise ValueError("empty qps series")


Profile = Union[RandomWalkProfile, TraceProfile]


def generate_qps(profile: Profile, window_index: int, rng: np.random.Generator, previous: Optional[float] = None) -> float:
    """QPS for ``window_index``.

    For a walk, ``previous`` is last window's value (the target if omitted):
    ``clamp(prev + N(0, step) + kappa * (target - prev), floor, cap)``.
    A trace ignores ``rng`` and cycles its series.
    """
    if isinstance(profile, TraceProfile):
        return profile.series[window_index % len(profile.series)]
    q = profile.target if previous is None else previous
    step = rng.normal(0.0, profile.step_sigma) if profile.step_sigma > 0 else 0.0
    q = q + step + profile.kappa * (profile.target - q)
    return float(min(max(q, profile.floor), profile.cap))


def qps_path(profile: Profile, first_window: int, n_windows: int, rng: np.random.Generator) -> np.ndarray:
    """Values for windows ``first_window .. first_window + n_windows - 1``.

    The walk starts at its target in ``first_window`` and steps from there.
    """
    out = np.empty(n_windows)
    if isinstance(profile, TraceProfile):
        for i in range(n_windows):
            out[i] = generate_qps(profile, first_window + i, rng)
        return out
    q = float(min(max(profile.target, profile.floor), profile.cap))
    for i in range(n_windows):
        if i > 0:
            q = generate_qps(profile, first_window + i, rng, q)
        out[i] = q
    return out


def import_qps_profile(source) -> TraceProfile:
    """Read a ``window_index,qps`` CSV (header optional) from a path or text.

    Window indices must strictly increase; values are replayed in file order.
    """
    if isinstance(source, Path) or (isinstance(source, str) and source and "\n" not in source and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = str(source)
    series = []
    last = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip().lower() == "window_index":
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 columns (window_index, qps), got {len(row)}", lineno)
        try:
            idx = int(row[0])
            qps = float(row[1])
        except ValueError:
            raise ParseError(f"cannot parse row {row!r}", lineno) from None
        if qps < 0 or not np.isfinite(qps):
            raise ParseError(f"qps must be finite and non-negative, got {qps}", lineno)
        if last is not None and idx <= last:
            raise ParseError(f"window_index {idx} does not increase past {last}", lineno)
        last = idx
        series.append(qps)
    if not series:
        raise ParseError("no data rows")
    return TraceProfile(tuple(series))
