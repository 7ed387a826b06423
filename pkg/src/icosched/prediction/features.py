"""Fixed-order feature vectors for the scheduling-latency model.

Layout (246 columns): pod QPS, 13 node performance metrics, 32 hardware
event counters, then the node-wide merged latency histogram (200 bins).
The order below is frozen; saved models carry it as a manifest and refuse
to load against a different one.
"""

from __future__ import annotations

import numpy as np

from ..errors import IncompleteSnapshot, ShapeError
from ..interference import N_BINS, merge_all

PERF_METRICS = (
    "cpu_utilization",
    "memory_usage",
    "mem_cache",
    "mem_pgfault",
    "mem_pgmajfault",
    "working_set",
    "memory_rss",
    "net_recv_avg",
    "net_recv_packets_avg",
    "net_send_avg",
    "net_send_packets_avg",
    "fs_read_avg",
    "fs_write_avg",
)

HW_EVENTS = (
    "branch-instructions",
    "ref-cycles",
    "branch-misses",
    "bus-cycles",
    "cache-misses",
    "cache-references",
    "cpu-cycles",
    "instructions",
    "alignment-faults",
    "bpf-output",
    "cpu-migration",
    "emulation-faults",
    "major-faults",
    "minor-faults",
    "page-faults",
    "dummy",
    "L1-dcache-load-misses",
    "L1-dcache-loads",
    "L1-dcache-stores",
    "LLC-load-misses",
    "LLC-loads",
    "LLC-store-misses",
    "LLC-stores",
    "branch-load-misses",
    "branch-loads",
    "dTLB-load-misses",
    "dTLB-loads",
    "dTLB-store-misses",
    "dTLB-stores",
    "iTLB-load-misses",
    "iTLB-loads",
    "node-load-misses",
)

RUNQLAT_FEATURES = tuple(f"runqlat_{k}" for k in range(N_BINS))

FEATURE_NAMES = ("qps",) + PERF_METRICS + HW_EVENTS + RUNQLAT_FEATURES
N_FEATURES = len(FEATURE_NAMES)

QPS_SLICE = slice(0, 1)
PERF_SLICE = slice(1, 1 + len(PERF_METRICS))
HW_SLICE = slice(PERF_SLICE.stop, PERF_SLICE.stop + len(HW_EVENTS))
RUNQLAT_SLICE = slice(HW_SLICE.stop, HW_SLICE.stop + N_BINS)

assert N_FEATURES == 246 and RUNQLAT_SLICE.stop == N_FEATURES


def _lookup(mapping, section: str, names) -> list[float]:
    if mapping is None:
        raise IncompleteSnapshot(section)
    out = []
    for name in names:
        try:
            out.append(float(mapping[name]))
        except KeyError:
            raise IncompleteSnapshot(f"{section}.{name}") from None
    return out


def build_feature_vector(node, pod_qps: float) -> np.ndarray:
    """Assemble the model input for placing a pod with ``pod_qps`` on ``node``.

    ``node`` is a :class:`~icosched.scheduler.NodeSnapshot`; its per-service
    histograms are merged into one node-level histogram.
    """
    services = getattr(node, "services", None)
    if services is None:
        raise IncompleteSnapshot("services")
    vec = np.empty(N_FEATURES, dtype=np.float64)
    vec[0] = pod_qps
    vec[PERF_SLICE] = _lookup(getattr(node, "perf_metrics", None), "perf_metrics", PERF_METRICS)
    vec[HW_SLICE] = _lookup(getattr(node, "hw_events", None), "hw_events", HW_EVENTS)
    merged = merge_all(s.hist for s in services)
    vec[RUNQLAT_SLICE] = merged.bins.astype(np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValueError("feature vector contains non-finite values")
    return vec


def check_dims(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ShapeError(f"expected {N_FEATURES} features, got shape {X.shape}")
    return X
