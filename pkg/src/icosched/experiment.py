"""End-to-end experiments: training data, model fitting, policy comparison,
and the response-time curve-fit study.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import Config, SimConfig
from .errors import DegenerateFit, EmptyInput, InsufficientNodes
from .interference import InterferenceWeights, ServiceClass
from .prediction import (
    FEATURE_NAMES,
    ForestModel,
    ForestParams,
    LinearModel,
    build_feature_vector,
    evaluate,
    fit_linear,
    train_forest,
)
from .scheduler import NO_FEASIBLE_NODE, Policy, ScheduleDecision, SchedulerWeights
from .sim import ClusterSim, PodSpec
from .sim import rng as streams

log = logging.getLogger(__name__)

TARGET_COLUMN = "target_avg_ns"


# --------------------------------------------------------------------------
# summary statistics


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p * n)``-th smallest sample."""
    if len(samples) == 0:
        raise EmptyInput("percentile of an empty sample")
    if not 0 < p <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    ordered = sorted(samples)
    # round away float noise such as 0.7 * 10 = 7.000000000000001
    rank = math.ceil(round(p * len(ordered), 9))
    return float(ordered[max(rank, 1) - 1])


def utilization_stddev(per_node_means: Sequence[float]) -> float:
    """Population standard deviation across nodes (divide by N).

    The variance is exact (rational arithmetic), then rounded once, so the
    result does not depend on summation order.
    """
    if len(per_node_means) < 2:
        raise InsufficientNodes("need at least 2 nodes")
    vals = [Fraction(float(v)) for v in per_node_means]
    mu = sum(vals) / len(vals)
    return math.sqrt(float(sum((v - mu) ** 2 for v in vals) / len(vals)))


def mean(values: Sequence[float]) -> float:
    """Correctly rounded arithmetic mean."""
    if len(values) == 0:
        raise EmptyInput("mean of an empty sample")
    return float(sum(map(Fraction, map(float, values))) / len(values))


# --------------------------------------------------------------------------
# training data


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def split(self, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
        perm = streams.stream(seed, streams.SPLIT).permutation(len(self.y))
        n_test = int(round(len(self.y) * test_fraction))
        test, train = perm[:n_test], perm[n_test:]
        return Dataset(self.X[train], self.y[train]), Dataset(self.X[test], self.y[test])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(FEATURE_NAMES) + [TARGET_COLUMN])
        for row, target in zip(self.X.tolist(), self.y.tolist()):
            w.writerow([repr(v) for v in row] + [repr(target)])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> Dataset:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != list(FEATURE_NAMES) + [TARGET_COLUMN]:
                raise ValueError(f"{path}: header does not match the feature layout")
            rows = np.array([[float(v) for v in r] for r in reader], dtype=np.float64)
        if rows.size == 0:
            return cls(np.empty((0, len(FEATURE_NAMES))), np.empty(0))
        return cls(rows[:, :-1], rows[:, -1])


class RandomPlacement:
    """Uniform choice among nodes with raw headroom; used only to spread
    training samples over a wide range of node loads."""

    name = "random"

    def __init__(self, seed: int):
        self.seed = seed
        self._calls = 0

    def select(self, nodes, pod) -> ScheduleDecision:
        fits = sorted(n.node_id for n in nodes if n.fits(pod))
        self._calls += 1
        if not fits:
            return NO_FEASIBLE_NODE
        rng = streams.stream(self.seed, streams.PLACEMENT, pod.pod_id, self._calls)
        return ScheduleDecision(fits[int(rng.integers(len(fits)))])


def _dataset_run_config(config: Config, rng) -> SimConfig:
    d = config.dataset
    return dataclasses.replace(
        config.sim,
        n_nodes=int(rng.integers(d.nodes_min, d.nodes_max + 1)),
        horizon_s=d.windows_per_run * config.sim.window_s,
        arrival_mean_s=float(rng.uniform(d.arrival_mean_min_s, d.arrival_mean_max_s)),
        initial_offline_jobs=int(rng.integers(0, d.initial_offline_max + 1)),
        online_fraction=float(rng.uniform(0.4, 0.8)),
        online_lifetime_s=d.online_lifetime_s,
        offline_scheduling="background",
    )


def generate_training_dataset(config: Config, n_runs: Optional[int] = None) -> Dataset:
    """One sample per online placement: the feature vector of the pod's
    co-residents once the scheduling tick has finished, labelled with the
    pod's own average scheduling latency over its first window."""
    n_runs = config.dataset.n_runs if n_runs is None else n_runs
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    rows: list[np.ndarray] = []
    targets: list[float] = []
    for run in range(n_runs):
        run_rng = streams.stream(config.seed, streams.DATASET, run)
        sim_cfg = _dataset_run_config(config, run_rng)
        run_seed = int(run_rng.integers(0, 2**63))
        placed: list[tuple[int, int]] = []

        def on_place(sim, pod_id, node_id, snap, placed=placed):
            if sim.pods[pod_id].cls is ServiceClass.ONLINE:
                placed.append((pod_id, node_id))

        sim = ClusterSim(sim_cfg, run_seed, RandomPlacement(run_seed), record_requests=False, on_place=on_place)
        while not sim.done():
            sim.schedule()
            waiting = {
                pod_id: build_feature_vector(sim.snapshot(node_id, exclude=pod_id), sim.pods[pod_id].qps_target)
                for pod_id, node_id in placed
            }
            placed.clear()
            n_before = len(sim.service_stats)
            sim.advance()
            for _, pod_id, _, avg, _, _ in sim.service_stats[n_before:]:
                vec = waiting.pop(pod_id, None)
                if vec is not None:
                    rows.append(vec)
                    targets.append(avg)
    X = np.vstack(rows) if rows else np.empty((0, len(FEATURE_NAMES)))
    return Dataset(X, np.asarray(targets, dtype=np.float64))


def train_resource_models(config: Config) -> dict[str, tuple[LinearModel, LinearModel]]:
    """Per online kind, QPS -> CPU and QPS -> MEM lines fitted to measured usage."""
    out = {}
    walk = config.sim.qps_walk
    for i, kind in enumerate(config.sim.online_kinds):
        rng = streams.stream(config.seed, streams.DEMAND, i)
        lo, hi = kind.qps_min * walk.floor_frac, kind.qps_max * max(walk.cap_frac, 1.0)
        qps = rng.uniform(lo, hi, size=config.dataset.resource_samples)
        noise = 1.0 + config.sim.demand_noise * rng.standard_normal((2, qps.size))
        cpu = (kind.cpu_slope * qps + kind.cpu_intercept) * noise[0]
        mem = (kind.mem_slope * qps + kind.mem_intercept) * noise[1]
        out[kind.name] = (
            fit_linear(zip(qps, cpu), "qps", "cpu_cores"),
            fit_linear(zip(qps, mem), "qps", "mem_gib"),
        )
    return out


@dataclass
class TrainedModels:
    forest: ForestModel
    resources: dict[str, tuple[LinearModel, LinearModel]]
    evaluation: dict = field(default_factory=dict)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.forest.save(d / "forest.json")
        res = {k: {"cpu": c.to_dict(), "mem": m.to_dict()} for k, (c, m) in sorted(self.resources.items())}
        (d / "resources.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
        (d / "evaluation.json").write_text(json.dumps(self.evaluation, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> TrainedModels:
        d = Path(directory)
        res = json.loads((d / "resources.json").read_text())
        resources = {k: (LinearModel.from_dict(v["cpu"]), LinearModel.from_dict(v["mem"])) for k, v in res.items()}
        ev_path = d / "evaluation.json"
        evaluation = json.loads(ev_path.read_text()) if ev_path.exists() else {}
        return cls(ForestModel.load(d / "forest.json"), resources, evaluation)


def forest_params(config: Config) -> ForestParams:
    f = config.forest
    return ForestParams(f.n_trees, f.max_depth, f.min_samples_leaf, f.features_per_split, True, config.seed)


def train_models(config: Config, dataset: Optional[Dataset] = None, n_jobs: int = 1) -> TrainedModels:
    """Fit the latency forest (plus a QPS-only line for reference) and the
    per-kind resource lines; evaluation is on a held-out split."""
    if dataset is None:
        dataset = generate_training_dataset(config)
    train, test = dataset.split(config.dataset.test_fraction, config.seed)
    forest = train_forest(train.X, train.y, forest_params(config), n_jobs=n_jobs)
    qps_line = fit_linear(zip(train.X[:, 0], train.y), "qps", "avg_runqlat_ns")
    evaluation = {
        "n_train": len(train),
        "n_test": len(test),
        "forest": evaluate(forest.predict(test.X), test.y).to_dict(),
        "linear_qps": evaluate([qps_line(q) for q in test.X[:, 0]], test.y).to_dict(),
    }
    return TrainedModels(forest, train_resource_models(config), evaluation)


# --------------------------------------------------------------------------
# policy comparison


@dataclass
class RunResult:
    policy: str
    seed: int
    avg_ms: Optional[float]
    p90_ms: Optional[float]
    p99_ms: Optional[float]
    n_requests: int
    cpu_node_means: list[float]
    mem_node_means: list[float]
    cpu_std: float
    mem_std: float
    placements: int
    no_feasible: int
    requests: dict = field(default_factory=dict, repr=False)
    decisions: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("requests")
        d.pop("decisions")
        return d


def response_summary(responses: Sequence[float]) -> tuple[Optional[float], Optional[float], Optional[float]]:
    if len(responses) == 0:
        return None, None, None
    vals = [float(v) for v in responses]
    return mean(vals), percentile(vals, 0.90), percentile(vals, 0.99)


def run_policy(config: Config, models: Optional[TrainedModels], policy_name: str, seed: int,
               keep_records: bool = True) -> RunResult:
    iw = InterferenceWeights(**dataclasses.asdict(config.interference))
    sw = SchedulerWeights(**dataclasses.asdict(config.scheduler))
    forest = models.forest if models is not None else None
    resources = models.resources if models is not None else None
    sim = ClusterSim(config.sim, seed, Policy(policy_name, forest, iw, sw), resources, record_requests=True)
    sim.run()
    reqs = sim.requests()
    avg, p90, p99 = response_summary(reqs["response_ms"])
    cpu_means, mem_means = sim.node_utilization_means()
    two = len(cpu_means) >= 2
    return RunResult(
        policy=policy_name,
        seed=seed,
        avg_ms=avg,
        p90_ms=p90,
        p99_ms=p99,
        n_requests=int(len(reqs["response_ms"])),
        cpu_node_means=cpu_means,
        mem_node_means=mem_means,
        cpu_std=utilization_stddev(cpu_means) if two else 0.0,
        mem_std=utilization_stddev(mem_means) if two else 0.0,
        placements=sim.placements,
        no_feasible=sim.no_feasible,
        requests=reqs if keep_records else {},
        decisions=[d.csv_row() for d in sim.decisions] if keep_records else [],
    )


def _run_policy_star(args):
    return run_policy(*args)


def experiment_seeds(config: Config) -> list[int]:
    return [config.seed + i for i in range(config.experiment.n_seeds)]


@dataclass
class ExperimentReport:
    policies: dict
    runs: list[dict]
    metadata: dict

    def to_dict(self) -> dict:
        return {"metadata": self.metadata, "policies": self.policies, "runs": self.runs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _mean_or_none(vals):
    vals = [v for v in vals if v is not None]
    return mean(vals) if vals else None


def aggregate(results: Sequence[RunResult], config: Config, seeds: Sequence[int]) -> ExperimentReport:
    by_policy: dict[str, list[RunResult]] = {}
    for r in results:
        by_policy.setdefault(r.policy, []).append(r)
    policies = {}
    for name, rs in by_policy.items():
        n_nodes = len(rs[0].cpu_node_means)
        policies[name] = {
            "avg_ms": _mean_or_none([r.avg_ms for r in rs]),
            "p90_ms": _mean_or_none([r.p90_ms for r in rs]),
            "p99_ms": _mean_or_none([r.p99_ms for r in rs]),
            "cpu_std": mean([r.cpu_std for r in rs]),
            "mem_std": mean([r.mem_std for r in rs]),
            "cpu_node_means": [mean([r.cpu_node_means[i] for r in rs]) for i in range(n_nodes)],
            "mem_node_means": [mean([r.mem_node_means[i] for r in rs]) for i in range(n_nodes)],
            "placements": sum(r.placements for r in rs),
            "no_feasible": sum(r.no_feasible for r in rs),
            "n_seeds": len(rs),
        }
    metadata = {
        "config_hash": config.digest(),
        "seed": config.seed,
        "seeds": list(seeds),
        "code_version": __version__,
        "percentile": "nearest-rank",
        "stddev": "population, percent of node capacity",
    }
    return ExperimentReport(policies, [r.summary() for r in results], metadata)


def run_comparison(config: Config, models: Optional[TrainedModels], policies: Optional[Sequence[str]] = None,
                   seeds: Optional[Sequence[int]] = None, parallelism: int = 1,
                   out_dir=None) -> tuple[ExperimentReport, list[RunResult]]:
    """Run every policy on every seed with identical arrivals and QPS streams."""
    policies = list(policies or config.experiment.policies)
    seeds = list(seeds if seeds is not None else experiment_seeds(config))
    jobs = [(config, models, p, s) for s in seeds for p in policies]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(parallelism) as pool:
            results = list(pool.map(_run_policy_star, jobs))
    else:
        results = [run_policy(*j) for j in jobs]
    report = aggregate(results, config, seeds)
    if out_dir is not None:
        write_comparison(Path(out_dir), config, report, results)
    return report, results


REQUEST_COLUMNS = ["policy", "seed", "timestamp_s", "pod_id", "kind", "node_id", "response_ms"]
DECISION_COLUMNS = ["policy_run", "seed", "timestamp_s", "pod_id", "policy", "chosen_node", "scores_json"]


def write_comparison(out: Path, config: Config, report: ExperimentReport, results: Sequence[RunResult],
                     fmt: str = "json") -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(config.to_yaml())
    (out / "report.json").write_text(report.to_json())
    if fmt == "csv":
        (out / "report.csv").write_text(summary_csv(report))
    with open(out / "requests.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_COLUMNS)
        for r in results:
            q = r.requests
            for ts, pid, kind, nid, rsp in zip(
                q["timestamp_s"].tolist(), q["pod_id"].tolist(), q["kind"].tolist(),
                q["node_id"].tolist(), q["response_ms"].tolist(),
            ):
                w.writerow([r.policy, r.seed, repr(ts), pid, kind, nid, repr(rsp)])
    with open(out / "decisions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DECISION_COLUMNS)
        for r in results:
            for row in r.decisions:
                w.writerow([r.policy, r.seed] + row)


SUMMARY_FIELDS = ("avg_ms", "p90_ms", "p99_ms", "cpu_std", "mem_std")


def summary_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", *SUMMARY_FIELDS, "placements", "no_feasible"])
    for name, p in report.policies.items():
        w.writerow([name, *(repr(p[f]) for f in SUMMARY_FIELDS), p["placements"], p["no_feasible"]])
    return buf.getvalue()


def summary_table(report: ExperimentReport) -> str:
    head = f"{'policy':<8}" + "".join(f"{f:>12}" for f in SUMMARY_FIELDS)
    lines = [head, "-" * len(head)]
    for name, p in report.policies.items():
        cells = "".join(f"{'n/a':>12}" if p[f] is None else f"{p[f]:>12.3f}" for f in SUMMARY_FIELDS)
        lines.append(f"{name:<8}{cells}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# response time vs scheduling latency / CPU utilisation


def _sweep_seed(seed: int, exp: int, point: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0xF17, exp, point)).generate_state(1, np.uint64)[0] >> 1)


def _sweep_point(config: Config, exp: int, point: int, qps: float, offline_cores: float) -> list[tuple]:
    m = config.motivation
    online = next(k for k in config.sim.online_kinds if k.name == m.online_kind)
    offline = next(k for k in config.sim.offline_kinds if k.name == m.offline_kind)
    offline = dataclasses.replace(offline, cores=offline_cores, mem_gib=min(offline.mem_gib, m.node_mem_gib / 2))
    sim_cfg = dataclasses.replace(
        config.sim,
        n_nodes=1,
        node_cores=m.node_cores,
        node_mem_gib=m.node_mem_gib,
        horizon_s=m.windows_per_point * config.sim.window_s,
        initial_offline_jobs=0,
        qps_profile_csv=None,
        qps_walk=dataclasses.replace(config.sim.qps_walk, step_frac=0.0),
        online_kinds=[online],
        offline_kinds=[offline],
    )
    sim = ClusterSim(sim_cfg, _sweep_seed(config.seed, exp, point), arrivals=False, record_requests=False)
    web = sim.add_pod(PodSpec(0, 0.0, ServiceClass.ONLINE, online.name, qps))
    batch = sim.add_pod(PodSpec(0, 0.0, ServiceClass.OFFLINE, offline.name))
    sim.place(web, 0)
    sim.place(batch, 0)
    sim.run()
    cpu = {w: c for w, _, _, c, _ in sim.node_stats}
    return [(avg, resp, cpu[w]) for w, pid, _, avg, resp, _ in sim.service_stats if pid == web.pod_id]


def _fit(x, y) -> dict:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(x)) < 3:
        raise DegenerateFit("need at least 3 distinct x values for a quadratic fit")
    coeffs = np.polyfit(x, y, 2)
    m = evaluate(np.polyval(coeffs, x), y)
    return {"coefficients": coeffs.tolist(), "mape": m.mape, "r2": m.r2}


def motivation_fit(config: Config) -> dict:
    """Two single-node sweeps (batch cores at fixed QPS; QPS at fixed batch
    cores). Each window is one point; response is fitted with a quadratic in
    average scheduling latency and, separately, in node CPU utilisation."""
    m = config.motivation
    if m.n_points < 3:
        raise DegenerateFit(f"a sweep needs at least 3 points, got {m.n_points}")
    sweeps = {
        "exp1": [(m.fixed_qps, m.offline_cores_start + i * m.offline_cores_step) for i in range(m.n_points)],
        "exp2": [(m.qps_start + i * m.qps_step, m.fixed_offline_cores) for i in range(m.n_points)],
    }
    report = {"metadata": {"config_hash": config.digest(), "seed": config.seed, "code_version": __version__,
                           "fit": "least-squares quadratic"}}
    for e, (name, points) in enumerate(sweeps.items()):
        obs = []
        for i, (qps, cores) in enumerate(points):
            if cores > m.node_cores:
                raise DegenerateFit(f"{name}: offline cores {cores} exceed the node's {m.node_cores}")
            obs.extend(_sweep_point(config, e, i, qps, cores))
        rq, resp, cpu = (list(v) for v in zip(*obs))
        report[name] = {"n_points": len(obs), "runqlat": _fit(rq, resp), "cpu": _fit(cpu, resp)}
    return report
