"""Node selection policies: interference-aware (ICO) and three baselines.

ICO scores every candidate node as

    (1 - u_cpu) * (1 - u_mem) - intf_h - intf_p

where ``u_cpu``/``u_mem`` are the node's utilisation after adding the pod's
predicted demand inflated by ``w_d``/``w_e``, ``intf_h`` is the node's
current interference and ``intf_p`` the pod's predicted interference on that
node. Nodes whose projected utilisation exceeds the thresholds are skipped.
HUP shares that control flow but rewards utilisation (``u_cpu * u_mem``).
RR cycles through nodes; LQP picks the node with the smallest online QPS sum.

Every policy also requires raw headroom (allocated + request <= capacity),
so a pod is never placed where it cannot physically fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .interference import (
    InterferenceWeights,
    RunqlatHistogram,
    ServiceClass,
    node_interference,
    pod_interference,
)
from .prediction.features import build_feature_vector


@dataclass(frozen=True)
class ServiceSample:
    cls: ServiceClass
    qps: float
    hist: RunqlatHistogram


@dataclass
class NodeSnapshot:
    """One node's state as the scheduler sees it.

    ``cpu_cur``/``mem_cur`` are measured usage; ``cpu_alloc``/``mem_alloc``
    are reserved requests (default: same as usage) and drive the raw
    capacity guard. Memory is in GiB throughout the package.
    """

    node_id: int
    cpu_cur: float
    cpu_sum: float
    mem_cur: float
    mem_sum: float
    services: list[ServiceSample] = field(default_factory=list)
    perf_metrics: Optional[dict] = None
    hw_events: Optional[dict] = None
    cpu_alloc: Optional[float] = None
    mem_alloc: Optional[float] = None

    def __post_init__(self):
        if self.cpu_sum <= 0 or self.mem_sum <= 0:
            raise ValueError("node capacities must be positive")
        if not (0 <= self.cpu_cur <= self.cpu_sum + 1e-9 and 0 <= self.mem_cur <= self.mem_sum + 1e-9):
            raise ValueError(f"node {self.node_id}: usage outside [0, capacity]")
        if self.cpu_alloc is None:
            self.cpu_alloc = self.cpu_cur
        if self.mem_alloc is None:
            self.mem_alloc = self.mem_cur

    def online_qps(self) -> float:
        return sum(s.qps for s in self.services if s.cls is ServiceClass.ONLINE)

    def fits(self, pod: PodRequest) -> bool:
        return (
            self.cpu_alloc + pod.cpu_pred <= self.cpu_sum + 1e-9
            and self.mem_alloc + pod.mem_pred <= self.mem_sum + 1e-9
        )


@dataclass(frozen=True)
class PodRequest:
    kind: str
    cls: ServiceClass
    qps: float
    cpu_pred: float
    mem_pred: float
    pod_id: int = 0

    def __post_init__(self):
        if self.cls is ServiceClass.ONLINE and not self.qps > 0:
            raise ValueError("online pods need qps > 0")
        if self.cpu_pred < 0 or self.mem_pred < 0:
            raise ValueError("predicted demand must be non-negative")


@dataclass(frozen=True)
class SchedulerWeights:
    w_d: float = 1.2
    w_e: float = 1.25
    cpu_threshold: float = 0.70
    mem_threshold: float = 0.80

    def __post_init__(self):
        if not (self.w_d > 1 and self.w_e > 1):
            raise ValueError("w_d and w_e must be > 1")
        for name in ("cpu_threshold", "mem_threshold"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")


@dataclass(frozen=True)
class ScoreBreakdown:
    utilization: float
    intf_h: float
    intf_p: float
    total: float

    def to_dict(self) -> dict:
        return {"utilization": self.utilization, "intf_h": self.intf_h, "intf_p": self.intf_p, "total": self.total}


@dataclass(frozen=True)
class ScheduleDecision:
    """``node_id`` is None when no node was feasible."""

    node_id: Optional[int]
    scores: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.node_id is not None


NO_FEASIBLE_NODE = ScheduleDecision(None)


def utilization_projection(node: NodeSnapshot, pod: PodRequest, w: SchedulerWeights) -> tuple[float, float]:
    u_cpu = (node.cpu_cur + w.w_d * pod.cpu_pred) / node.cpu_sum
    u_mem = (node.mem_cur + w.w_e * pod.mem_pred) / node.mem_sum
    return u_cpu, u_mem


def ico_score(node, pod, intf_h: float, intf_p: float, w: SchedulerWeights) -> float:
    u_cpu, u_mem = utilization_projection(node, pod, w)
    return (1 - u_cpu) * (1 - u_mem) - intf_h - intf_p


def hup_score(node, pod, intf_h: float, intf_p: float, w: SchedulerWeights) -> float:
    u_cpu, u_mem = utilization_projection(node, pod, w)
    return u_cpu * u_mem - intf_h - intf_p


def host_interference(node: NodeSnapshot, iw: InterferenceWeights) -> float:
    online = [s.hist for s in node.services if s.cls is ServiceClass.ONLINE]
    offline = [s.hist for s in node.services if s.cls is ServiceClass.OFFLINE]
    return node_interference(online, offline, iw)


def _select_scored(nodes, pod, predictor, iw, sw, utilization_term: Callable[[float, float], float]):
    ordered = sorted(nodes, key=lambda n: n.node_id)
    if not ordered:
        raise ValueError("node list is empty")
    candidates = []
    for node in ordered:
        u_cpu, u_mem = utilization_projection(node, pod, sw)
        if u_cpu > sw.cpu_threshold or u_mem > sw.mem_threshold:
            continue
        if not node.fits(pod):
            continue
        candidates.append((node, utilization_term(u_cpu, u_mem)))
    if not candidates:
        return NO_FEASIBLE_NODE

    # one prediction per candidate; batched, same values as one-at-a-time
    X = np.stack([build_feature_vector(node, pod.qps) for node, _ in candidates])
    predicted = predictor.predict(X)

    best_score = -math.inf
    best_id = None
    scores = {}
    for (node, util), pred in zip(candidates, predicted):
        intf_h = host_interference(node, iw)
        intf_p = pod_interference(float(pred), iw)
        total = util - intf_h - intf_p
        scores[node.node_id] = ScoreBreakdown(util, intf_h, intf_p, total)
        if total > best_score:
            best_score = total
            best_id = node.node_id
    return ScheduleDecision(best_id, scores)


def select_node_ico(nodes: Sequence[NodeSnapshot], pod: PodRequest, predictor, iw: InterferenceWeights, sw: SchedulerWeights) -> ScheduleDecision:
    return _select_scored(nodes, pod, predictor, iw, sw, lambda uc, um: (1 - uc) * (1 - um))


def select_node_hup(nodes: Sequence[NodeSnapshot], pod: PodRequest, predictor, iw: InterferenceWeights, sw: SchedulerWeights) -> ScheduleDecision:
    return _select_scored(nodes, pod, predictor, iw, sw, lambda uc, um: uc * um)


@dataclass
class RoundRobinCursor:
    last_node_id: Optional[int] = None


def select_node_rr(state: RoundRobinCursor, nodes: Sequence[NodeSnapshot], pod: PodRequest) -> ScheduleDecision:
    """Next node after the cursor (by id, wrapping) with room for the pod."""
    ordered = sorted(nodes, key=lambda n: n.node_id)
    if not ordered:
        raise ValueError("node list is empty")
    start = 0
    if state.last_node_id is not None:
        start = next((i for i, n in enumerate(ordered) if n.node_id > state.last_node_id), 0)
    for k in range(len(ordered)):
        node = ordered[(start + k) % len(ordered)]
        if node.fits(pod):
            state.last_node_id = node.node_id
            return ScheduleDecision(node.node_id)
    return NO_FEASIBLE_NODE


def select_node_lqp(nodes: Sequence[NodeSnapshot], pod: PodRequest) -> ScheduleDecision:
    best = None
    scores = {}
    for node in sorted(nodes, key=lambda n: n.node_id):
        if not node.fits(pod):
            continue
        q = node.online_qps()
        scores[node.node_id] = q
        if best is None or q < scores[best]:
            best = node.node_id
    if best is None:
        return NO_FEASIBLE_NODE
    return ScheduleDecision(best, scores)


POLICIES = ("ico", "rr", "hup", "lqp")


class Policy:
    """Binds one of the four policies to its models and weights."""

    def __init__(self, name: str, predictor=None, iw: InterferenceWeights = None, sw: SchedulerWeights = None):
        if name not in POLICIES:
            raise ValueError(f"unknown policy {name!r}; choose from {POLICIES}")
        if name in ("ico", "hup") and predictor is None:
            raise ValueError(f"policy {name!r} needs a latency predictor")
        self.name = name
        self.predictor = predictor
        self.iw = iw or InterferenceWeights()
        self.sw = sw or SchedulerWeights()
        self.cursor = RoundRobinCursor()

    def select(self, nodes: Sequence[NodeSnapshot], pod: PodRequest) -> ScheduleDecision:
        if self.name == "ico":
            return select_node_ico(nodes, pod, self.predictor, self.iw, self.sw)
        if self.name == "hup":
            return select_node_hup(nodes, pod, self.predictor, self.iw, self.sw)
        if self.name == "rr":
            return select_node_rr(self.cursor, nodes, pod)
        return select_node_lqp(nodes, pod)
