"""Window-stepped simulation of a co-located cluster.

Each step covers one collection window. Pods arrive, the scheduler places
what it can, online QPS moves, every resident service gets a latency
histogram from its node's run-queue pressure, online services emit request
response times, and finished jobs leave.

Resource accounting uses reservations: a pod reserves its predicted
CPU/MEM when placed and the sum of reservations on a node never exceeds
capacity. Measured usage follows the live QPS and is what utilisation and
snapshots report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..config import SimConfig
from ..errors import NotFound
from ..interference import RunqlatHistogram, ServiceClass, avg_runqlat
from ..prediction.features import HW_EVENTS, PERF_METRICS
from ..prediction.linear import LinearModel, predict_resources
from ..scheduler import NodeSnapshot, Policy, PodRequest, ScheduleDecision, ServiceSample
from . import rng as streams
from .contention import contention_latency, response_time
from .workload import RandomWalkProfile, TraceProfile, import_qps_profile, qps_path


@dataclass
class PodSpec:
    pod_id: int
    arrival_s: float
    cls: ServiceClass
    kind: str
    qps_target: float = 0.0
    duration_s: Optional[float] = None  # batch run time, or online lifetime
    background: bool = False  # placed by the background placer, not the policy


@dataclass
class Resident:
    spec: PodSpec
    node_id: int
    placed_window: int
    end_s: Optional[float]
    cpu_req: float
    mem_req: float
    qps: float = 0.0
    cpu_use: float = 0.0
    mem_use: float = 0.0
    threads: float = 0.0
    hist: RunqlatHistogram = field(default_factory=RunqlatHistogram.empty)
    measured: bool = False
    intensity: float = 1.0


@dataclass
class SimNode:
    node_id: int
    cores: float
    mem: float
    residents: list[Resident] = field(default_factory=list)
    cpu_alloc: float = 0.0
    mem_alloc: float = 0.0
    cpu_pct: list[float] = field(default_factory=list)
    mem_pct: list[float] = field(default_factory=list)


# Hardware counters are synthetic proxies: fixed linear mixes of runnable
# load, CPU cores in use, GiB in use and online QPS, times a per-event scale,
# with lognormal measurement noise. They are load-correlated stand-ins, not a
# model of any real PMU.
_ZERO_EVENTS = {"alignment-faults", "bpf-output", "emulation-faults", "dummy"}
_HW_SCALE = np.array([0.0 if e in _ZERO_EVENTS else 10.0 ** (3 + (i * 7) % 5) for i, e in enumerate(HW_EVENTS)])
_HW_MIX = np.random.default_rng(20231101).dirichlet(np.ones(4) * 0.8, size=len(HW_EVENTS))
_PROXY_NOISE = 0.05


def _synth_features(load, cpu_use, mem_use, online_qps, offline_cores, cores, rng):
    noise = np.exp(rng.normal(0.0, _PROXY_NOISE, size=len(PERF_METRICS) + len(HW_EVENTS)))
    pn, hn = noise[: len(PERF_METRICS)], noise[len(PERF_METRICS):]
    perf = {
        "cpu_utilization": cpu_use / cores,
        "memory_usage": mem_use,
        "mem_cache": 0.25 * mem_use * pn[2],
        "mem_pgfault": 1000.0 * (load + 0.1 * mem_use) * pn[3],
        "mem_pgmajfault": 2.0 * offline_cores * pn[4],
        "working_set": 0.9 * mem_use * pn[5],
        "memory_rss": 0.8 * mem_use * pn[6],
        "net_recv_avg": 2.0 * online_qps * pn[7],
        "net_recv_packets_avg": 1.5 * online_qps * pn[8],
        "net_send_avg": 8.0 * online_qps * pn[9],
        "net_send_packets_avg": 1.2 * online_qps * pn[10],
        "fs_read_avg": 5.0 * offline_cores * pn[11],
        "fs_write_avg": 3.0 * offline_cores * pn[12],
    }
    drivers = np.array([load, cpu_use, mem_use / 4.0, online_qps / 100.0])
    hw_vals = _HW_SCALE * (_HW_MIX @ drivers) * hn
    return perf, dict(zip(HW_EVENTS, hw_vals.tolist()))


@dataclass
class DecisionRecord:
    time_s: float
    pod_id: int
    policy: str
    node_id: Optional[int]
    scores: dict

    def csv_row(self) -> list:
        scores = {
            str(k): (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in sorted(self.scores.items())
        }
        return [
            repr(self.time_s),
            self.pod_id,
            self.policy,
            "" if self.node_id is None else self.node_id,
            json.dumps(scores, sort_keys=True),
        ]


class ClusterSim:
    """One simulation instance. Single owner; advance with :meth:`step`.

    ``resource_models`` maps online kind -> (cpu LinearModel, mem LinearModel)
    used to size pod requests; without it the true demand lines are used.
    ``on_place(sim, pod_id, node_id, snapshot)`` is called after every
    policy placement, with the snapshot the policy saw for that node.
    """

    def __init__(
        self,
        config: SimConfig,
        seed: int,
        policy: Optional[Policy] = None,
        resource_models: Optional[dict] = None,
        record_requests: bool = True,
        arrivals: bool = True,
        on_place: Optional[Callable] = None,
    ):
        self.config = config
        self.seed = seed
        self.policy = policy or Policy("rr")
        self.record_requests = record_requests
        self.on_place = on_place
        self.online_kinds = {k.name: k for k in config.online_kinds}
        self.offline_kinds = {k.name: k for k in config.offline_kinds}
        self.resource_models = resource_models or {
            k.name: (
                LinearModel(k.cpu_slope, k.cpu_intercept, "qps", "cpu"),
                LinearModel(k.mem_slope, k.mem_intercept, "qps", "mem"),
            )
            for k in config.online_kinds
        }
        self.trace = import_qps_profile(config.qps_profile_csv) if config.qps_profile_csv else None

        self.clock = 0.0
        self.window = 0
        self.nodes = [SimNode(i, config.node_cores, config.node_mem_gib) for i in range(config.n_nodes)]
        self.pods: list[PodSpec] = self._generate_arrivals() if arrivals else []
        self._n_arrivals = len(self.pods)  # pods registered later are placed by the caller
        self._next_arrival = 0
        self.pending: list[PodSpec] = []
        self._qps_paths: dict[int, np.ndarray] = {}
        self._qps_first: dict[int, int] = {}
        self._by_pod: dict[int, Resident] = {}
        self.placements = 0
        self.no_feasible = 0
        self.decisions: list[DecisionRecord] = []
        self._req_chunks: list[tuple] = []
        # (window, pod_id, node_id, avg_runqlat_ns, mean_response_ms, n_requests)
        self.service_stats: list[tuple] = []
        # (window, node_id, load, cpu_pct, mem_pct)
        self.node_stats: list[tuple] = []

    # ------------------------------------------------------------------ setup

    def _generate_arrivals(self) -> list[PodSpec]:
        cfg = self.config
        rng = streams.stream(self.seed, streams.ARRIVALS)
        online = list(cfg.online_kinds)
        offline = list(cfg.offline_kinds)
        background = cfg.offline_scheduling == "background"
        pods = []

        def offline_pod(t):
            k = offline[int(rng.integers(len(offline)))]
            dur = float(rng.uniform(k.duration_min_s, k.duration_max_s))
            return PodSpec(len(pods), t, ServiceClass.OFFLINE, k.name, 0.0, dur, background)

        for _ in range(cfg.initial_offline_jobs):
            pods.append(offline_pod(0.0))
        t = 0.0
        while True:
            t += float(rng.exponential(cfg.arrival_mean_s))
            if t >= cfg.horizon_s:
                break
            if rng.random() < cfg.online_fraction:
                k = online[int(rng.integers(len(online)))]
                qps = float(rng.uniform(k.qps_min, k.qps_max))
                life = float(rng.exponential(cfg.online_lifetime_s)) if cfg.online_lifetime_s else None
                pods.append(PodSpec(len(pods), t, ServiceClass.ONLINE, k.name, qps, life))
            else:
                pods.append(offline_pod(t))
        return pods

    def _profile(self, spec: PodSpec):
        if self.trace is not None:
            return self.trace
        w = self.config.qps_walk
        tgt = spec.qps_target
        return RandomWalkProfile(tgt, w.step_frac * tgt, w.floor_frac * tgt, w.cap_frac * tgt, w.kappa)

    def qps_at(self, pod_id: int, window: int) -> float:
        path = self._qps_paths.get(pod_id)
        if path is None:
            spec = self.pods[pod_id]
            first = int(spec.arrival_s // self.config.window_s)
            n = max(self.config.n_windows - first, 1)
            path = qps_path(self._profile(spec), first, n, streams.stream(self.seed, streams.QPS, pod_id))
            self._qps_paths[pod_id] = path
            self._qps_first[pod_id] = first
        first = self._qps_first[pod_id]
        return float(path[min(max(window - first, 0), len(path) - 1)])

    def request_for(self, spec: PodSpec) -> PodRequest:
        if spec.cls is ServiceClass.ONLINE:
            cpu_m, mem_m = self.resource_models[spec.kind]
            cpu, mem = predict_resources(cpu_m, mem_m, spec.qps_target)
            return PodRequest(spec.kind, spec.cls, spec.qps_target, cpu, mem, spec.pod_id)
        k = self.offline_kinds[spec.kind]
        return PodRequest(spec.kind, spec.cls, 0.0, float(k.cores), float(k.mem_gib), spec.pod_id)

    def add_pod(self, spec: PodSpec) -> PodSpec:
        """Register an extra pod (used to pin services in controlled studies).

        The pod is never queued for scheduling; the caller places it.
        """
        spec.pod_id = len(self.pods)
        self.pods.append(spec)
        return spec

    # -------------------------------------------------------------- snapshots

    def node(self, node_id: int) -> SimNode:
        if not 0 <= node_id < len(self.nodes):
            raise NotFound(f"no node {node_id}")
        return self.nodes[node_id]

    def _nominal_threads(self, r: Resident) -> float:
        if r.spec.cls is ServiceClass.ONLINE:
            return self.online_kinds[r.spec.kind].threads_per_qps * r.spec.qps_target
        k = self.offline_kinds[r.spec.kind]
        return k.cores * k.threads_per_core

    def snapshot(self, node_id: int, exclude: Optional[int] = None) -> NodeSnapshot:
        """What the collector would report for ``node_id`` right now.

        Measured residents report last window's usage, load and histogram;
        services placed since then report their requested demand, nominal
        thread count and an empty histogram. Pure: the proxy noise is keyed
        by (node, window, resident count), so repeated calls agree.
        ``exclude`` leaves one pod out, giving the view its co-residents form.
        """
        node = self.node(node_id)
        residents = [r for r in node.residents if r.spec.pod_id != exclude]
        cpu = mem = load = online_qps = offline_cores = 0.0
        services = []
        for r in residents:
            cpu += r.cpu_use if r.measured else r.cpu_req
            mem += r.mem_use if r.measured else r.mem_req
            load += r.threads if r.measured else self._nominal_threads(r)
            qps = r.qps if r.measured else r.spec.qps_target
            if r.spec.cls is ServiceClass.ONLINE:
                online_qps += qps
            else:
                offline_cores += self.offline_kinds[r.spec.kind].cores
            services.append(ServiceSample(r.spec.cls, qps, r.hist))
        cpu = min(cpu, node.cores)
        mem = min(mem, node.mem)
        rng = streams.stream(self.seed, streams.PROXY, node_id, self.window * 1024 + min(len(residents), 1023))
        perf, hw = _synth_features(load, cpu, mem, online_qps, offline_cores, node.cores, rng)
        return NodeSnapshot(
            node_id=node.node_id,
            cpu_cur=cpu,
            cpu_sum=node.cores,
            mem_cur=mem,
            mem_sum=node.mem,
            services=services,
            perf_metrics=perf,
            hw_events=hw,
            cpu_alloc=node.cpu_alloc,
            mem_alloc=node.mem_alloc,
        )

    def snapshots(self) -> list[NodeSnapshot]:
        return [self.snapshot(n.node_id) for n in self.nodes]

    # -------------------------------------------------------------- placement

    def place(self, spec: PodSpec, node_id: int, request: Optional[PodRequest] = None) -> Resident:
        node = self.node(node_id)
        req = request or self.request_for(spec)
        start = self.window * self.config.window_s
        end = start + spec.duration_s if spec.duration_s is not None else None
        res = Resident(spec, node_id, self.window, end, req.cpu_pred, req.mem_pred, qps=spec.qps_target)
        lj = self.config.contention.load_jitter
        if spec.cls is ServiceClass.OFFLINE and lj > 0:
            res.intensity = float(streams.stream(self.seed, streams.INTENSITY, spec.pod_id).gamma(1.0 / lj**2, lj**2))
        node.residents.append(res)
        node.cpu_alloc += req.cpu_pred
        node.mem_alloc += req.mem_pred
        assert node.cpu_alloc <= node.cores + 1e-9 and node.mem_alloc <= node.mem + 1e-9, "capacity overrun"
        self._by_pod[spec.pod_id] = res
        return res

    def _background_choice(self, spec: PodSpec, req: PodRequest, snaps: dict) -> Optional[int]:
        fits = [nid for nid, s in sorted(snaps.items()) if s.fits(req)]
        if not fits:
            return None
        rng = streams.stream(self.seed, streams.BACKGROUND, spec.pod_id, self.window)
        return fits[int(rng.integers(len(fits)))]

    def _schedule_tick(self):
        if not self.pending:
            return
        snaps = {n.node_id: self.snapshot(n.node_id) for n in self.nodes}
        waiting = []
        for spec in self.pending:
            req = self.request_for(spec)
            if spec.background:
                node_id = self._background_choice(spec, req, snaps)
            else:
                decision: ScheduleDecision = self.policy.select(list(snaps.values()), req)
                node_id = decision.node_id
                self.decisions.append(DecisionRecord(self.clock, spec.pod_id, self.policy.name, node_id, decision.scores))
                if node_id is None:
                    self.no_feasible += 1
            if node_id is None:
                waiting.append(spec)
                continue
            seen = snaps[node_id]
            self.place(spec, node_id, req)
            if not spec.background:
                self.placements += 1
                if self.on_place is not None:
                    self.on_place(self, spec.pod_id, node_id, seen)
            snaps[node_id] = self.snapshot(node_id)
        self.pending = waiting

    # ------------------------------------------------------------------- step

    def done(self) -> bool:
        return self.window >= self.config.n_windows

    def schedule(self) -> None:
        """Admit this window's arrivals and run one scheduling tick."""
        end = (self.window + 1) * self.config.window_s
        while self._next_arrival < self._n_arrivals and self.pods[self._next_arrival].arrival_s < end:
            self.pending.append(self.pods[self._next_arrival])
            self._next_arrival += 1
        self._schedule_tick()

    def step(self) -> None:
        self.schedule()
        self.advance()

    def advance(self) -> None:
        """Run the current window with the placements as they stand."""
        cfg = self.config
        t = self.window
        start = t * cfg.window_s
        end = start + cfg.window_s

        for node in self.nodes:
            # 2. live QPS and measured demand. Each resident draws everything
            # for this window from one keyed stream; draw counts never depend
            # on the policy, so common random numbers hold across runs.
            rngs = {}
            for r in node.residents:
                rng = rngs[r.spec.pod_id] = streams.stream(self.seed, streams.SERVICE, r.spec.pod_id, t)
                noise = 1.0 + cfg.demand_noise * float(rng.standard_normal())
                if r.spec.cls is ServiceClass.ONLINE:
                    kind = self.online_kinds[r.spec.kind]
                    r.qps = self.qps_at(r.spec.pod_id, t)
                    r.cpu_use = max(0.0, (kind.cpu_slope * r.qps + kind.cpu_intercept) * noise)
                    r.mem_use = max(0.0, (kind.mem_slope * r.qps + kind.mem_intercept) * noise)
                    r.threads = kind.threads_per_qps * r.qps
                else:
                    kind = self.offline_kinds[r.spec.kind]
                    r.cpu_use = kind.cores * noise
                    r.mem_use = kind.mem_gib * noise
                    r.threads = kind.cores * kind.threads_per_core * r.intensity * noise
                r.measured = True

            # 3. runnable load
            load = sum(r.threads for r in node.residents)

            # 4. per-service histograms, 5. online response times
            for r in node.residents:
                rng = rngs[r.spec.pod_id]
                r.hist = contention_latency(load, node.cores, cfg.contention, rng)
                if r.spec.cls is not ServiceClass.ONLINE:
                    continue
                avg = avg_runqlat(r.hist)
                n_req = max(1, int(round(r.qps * cfg.window_s * cfg.request_sample_fraction)))
                kind = self.online_kinds[r.spec.kind]
                rsp = response_time(kind.base_ms, avg, cfg.response, rng, size=n_req)
                self.service_stats.append((t, r.spec.pod_id, node.node_id, avg, float(rsp.mean()), n_req))
                if self.record_requests:
                    ts = start + (np.arange(n_req) + 0.5) * (cfg.window_s / n_req)
                    self._req_chunks.append((ts, r.spec.pod_id, r.spec.kind, node.node_id, rsp))

            # 7. utilisation samples for this window
            cpu_use = min(sum(r.cpu_use for r in node.residents), node.cores)
            mem_use = min(sum(r.mem_use for r in node.residents), node.mem)
            node.cpu_pct.append(100.0 * cpu_use / node.cores)
            node.mem_pct.append(100.0 * mem_use / node.mem)
            self.node_stats.append((t, node.node_id, load, node.cpu_pct[-1], node.mem_pct[-1]))

            # 6. retire finished jobs / expired services
            keep = []
            for r in node.residents:
                if r.end_s is not None and r.end_s <= end:
                    node.cpu_alloc -= r.cpu_req
                    node.mem_alloc -= r.mem_req
                    self._by_pod.pop(r.spec.pod_id, None)
                else:
                    keep.append(r)
            node.residents = keep
            if not keep:
                node.cpu_alloc = node.mem_alloc = 0.0
            assert node.cpu_alloc <= node.cores + 1e-9 and node.mem_alloc <= node.mem + 1e-9

        self.window += 1
        self.clock = end

    def run(self) -> ClusterSim:
        while not self.done():
            self.step()
        return self

    # ---------------------------------------------------------------- results

    def resident(self, pod_id: int) -> Optional[Resident]:
        return self._by_pod.get(pod_id)

    def requests(self) -> dict[str, np.ndarray]:
        """All emitted request records, in emission order."""
        if not self._req_chunks:
            return {
                "timestamp_s": np.empty(0), "pod_id": np.empty(0, dtype=np.int64),
                "kind": np.empty(0, dtype=object), "node_id": np.empty(0, dtype=np.int64),
                "response_ms": np.empty(0),
            }
        return {
            "timestamp_s": np.concatenate([c[0] for c in self._req_chunks]),
            "pod_id": np.concatenate([np.full(len(c[0]), c[1]) for c in self._req_chunks]),
            "kind": np.concatenate([np.full(len(c[0]), c[2], dtype=object) for c in self._req_chunks]),
            "node_id": np.concatenate([np.full(len(c[0]), c[3]) for c in self._req_chunks]),
            "response_ms": np.concatenate([c[4] for c in self._req_chunks]),
        }

    def node_utilization_means(self) -> tuple[list[float], list[float]]:
        cpu = [float(np.mean(n.cpu_pct)) if n.cpu_pct else 0.0 for n in self.nodes]
        mem = [float(np.mean(n.mem_pct)) if n.mem_pct else 0.0 for n in self.nodes]
        return cpu, mem
