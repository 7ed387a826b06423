"""Scheduling-latency histograms and interference scores.

A service's scheduling latency over one collection window is summarised as
200 fixed-width 5 ns bins. Bin ``k`` counts observations in ``[5k, 5k+5)``;
the last bin is open-ended and holds everything at or above 995 ns.

Node interference adds up the average latency of every resident service,
weighting online services and offline jobs separately. Pod interference
scales the latency a model predicts for the pod on a candidate node. Both
scores are divided by ``norm_ns`` so they sit on the same scale as the
``[0, 1]`` utilisation product they are subtracted from; ``norm_ns=1``
gives the raw nanosecond-weighted sums.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_BINS = 200
BIN_WIDTH_NS = 5
MAX_AVG_NS = float((N_BINS - 1) * BIN_WIDTH_NS)  # 995
COUNTER_MAX = np.iinfo(np.uint64).max

# Lower bin edges in ns, used as the bin value when averaging.
BIN_EDGES_NS = np.arange(N_BINS, dtype=np.uint64) * np.uint64(BIN_WIDTH_NS)

# Fast integer path is exact while sum(count * edge) stays under 2**64.
_FAST_TOTAL_LIMIT = int(COUNTER_MAX) // int(MAX_AVG_NS)

# Clamped negative predictions are tallied here.
DIAGNOSTICS: Counter = Counter()


class ServiceClass(str, enum.Enum):
    ONLINE = "online"
    OFFLINE = "offline"


def bin_index(latency_ns: float) -> int:
    if latency_ns < 0:
        raise ValueError(f"latency must be non-negative, got {latency_ns}")
    return min(int(latency_ns // BIN_WIDTH_NS), N_BINS - 1)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RunqlatHistogram:
    """Immutable 200-bin counter of scheduling-latency observations."""

    bins: np.ndarray

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.shape != (N_BINS,):
            raise ValueError(f"histogram needs exactly {N_BINS} bins, got shape {bins.shape}")
        if bins.dtype != np.uint64:
            if np.any(bins < 0):
                raise ValueError("histogram counts must be non-negative")
            if np.issubdtype(bins.dtype, np.floating) and np.any(bins != np.floor(bins)):
                raise ValueError("histogram counts must be integers")
            bins = bins.astype(np.uint64)
        elif bins.flags.writeable:
            bins = bins.copy()
        object.__setattr__(self, "bins", _frozen(bins))

    @classmethod
    def empty(cls) -> RunqlatHistogram:
        return cls(np.zeros(N_BINS, dtype=np.uint64))

    @classmethod
    def from_counts(cls, counts: dict[int, int]) -> RunqlatHistogram:
        bins = np.zeros(N_BINS, dtype=np.uint64)
        for k, c in counts.items():
            bins[k] = c
        return cls(bins)

    @classmethod
    def from_latencies(cls, latencies_ns) -> RunqlatHistogram:
        """Bin an array of latencies in one pass (same rule as :func:`record`)."""
        lat = np.asarray(latencies_ns, dtype=np.float64)
        if lat.size and lat.min() < 0:
            raise ValueError("latencies must be non-negative")
        idx = np.minimum(np.floor(lat / BIN_WIDTH_NS), N_BINS - 1).astype(np.int64)
        return cls(np.bincount(idx, minlength=N_BINS).astype(np.uint64))

    def total_count(self) -> int:
        return int(self.bins.sum(dtype=np.uint64)) if self._fits_fast() else sum(int(b) for b in self.bins)

    def _fits_fast(self) -> bool:
        # float max is an upper bound, good enough to pick the exact path
        return float(self.bins.max(initial=0)) * N_BINS < _FAST_TOTAL_LIMIT

    def to_list(self) -> list[int]:
        return [int(b) for b in self.bins]

    def to_csv_field(self) -> str:
        return ",".join(str(int(b)) for b in self.bins)

    @classmethod
    def from_csv_field(cls, text: str) -> RunqlatHistogram:
        parts = text.split(",")
        if len(parts) != N_BINS:
            raise ValueError(f"runqlat_bins needs {N_BINS} values, got {len(parts)}")
        return cls(np.array([int(p) for p in parts], dtype=np.uint64))

    def __eq__(self, other):
        if not isinstance(other, RunqlatHistogram):
            return NotImplemented
        return bool(np.array_equal(self.bins, other.bins))

    def __hash__(self):
        return hash(self.bins.tobytes())

    def __repr__(self):
        nz = {int(k): int(self.bins[k]) for k in np.flatnonzero(self.bins)}
        return f"RunqlatHistogram({nz})"


def record(hist: RunqlatHistogram, latency_ns: float) -> RunqlatHistogram:
    """Return a copy of ``hist`` with one more observation at ``latency_ns``."""
    k = bin_index(latency_ns)
    bins = hist.bins.copy()
    if bins[k] != COUNTER_MAX:
        bins[k] += np.uint64(1)
    return RunqlatHistogram(bins)


def merge(a: RunqlatHistogram, b: RunqlatHistogram) -> RunqlatHistogram:
    """Elementwise sum, saturating at the counter maximum."""
    headroom = COUNTER_MAX - a.bins
    summed = np.where(b.bins > headroom, COUNTER_MAX, a.bins + np.minimum(b.bins, headroom))
    return RunqlatHistogram(summed.astype(np.uint64))


def merge_all(hists: Iterable[RunqlatHistogram]) -> RunqlatHistogram:
    out = RunqlatHistogram.empty()
    for h in hists:
        out = merge(out, h)
    return out


def avg_runqlat(hist: RunqlatHistogram) -> float:
    """Average latency in ns, valuing each bin at its lower edge.

    An empty histogram averages to 0. The division is between exact integers,
    so the result is the correctly rounded float of the true mean.
    """
    bins = hist.bins
    if hist._fits_fast():
        total = int(bins.sum(dtype=np.uint64))
        if total == 0:
            return 0.0
        weighted = int(np.dot(bins, BIN_EDGES_NS))
    else:
        counts = [int(b) for b in bins]
        total = sum(counts)
        weighted = sum(c * k * BIN_WIDTH_NS for k, c in enumerate(counts))
    return weighted / total


@dataclass(frozen=True)
class InterferenceWeights:
    w_a: float = 2.0  # online services
    w_b: float = 1.5  # offline jobs
    w_c: float = 1.0  # predicted pod latency
    norm_ns: float = MAX_AVG_NS

    def __post_init__(self):
        if not self.w_a > 1:
            raise ValueError(f"w_a must be > 1, got {self.w_a}")
        if not self.w_b > 1:
            raise ValueError(f"w_b must be > 1, got {self.w_b}")
        if not self.w_c > 0:
            raise ValueError(f"w_c must be > 0, got {self.w_c}")
        if not self.norm_ns > 0:
            raise ValueError(f"norm_ns must be > 0, got {self.norm_ns}")


def node_interference(
    online: Sequence[RunqlatHistogram],
    offline: Sequence[RunqlatHistogram],
    w: InterferenceWeights,
) -> float:
    online_sum = sum(avg_runqlat(h) for h in online)
    offline_sum = sum(avg_runqlat(h) for h in offline)
    return (w.w_a * online_sum + w.w_b * offline_sum) / w.norm_ns


def pod_interference(predicted_avg_ns: float, w: InterferenceWeights) -> float:
    if predicted_avg_ns < 0:
        DIAGNOSTICS["negative_latency_prediction"] += 1
        predicted_avg_ns = 0.0
    return w.w_c * predicted_avg_ns / w.norm_ns
