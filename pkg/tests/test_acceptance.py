"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; conftest prints them all at
the end of the run. The expensive artifacts (training dataset, trained
models, the default five-seed comparison) are built once per session.
"""

import csv
import dataclasses
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import RowPredictor, make_node, online_pod
from oracles import oracle_select, random_instance

from icosched import experiment as ex
from icosched.cli import main as cli_main
from icosched.config import default_config
from icosched.interference import N_BINS, InterferenceWeights, RunqlatHistogram, avg_runqlat
from icosched.scheduler import (
    RoundRobinCursor,
    SchedulerWeights,
    select_node_hup,
    select_node_ico,
    select_node_lqp,
    select_node_rr,
    utilization_projection,
)

VERDICTS: dict[int, str] = {}

pytestmark = pytest.mark.slow


def verdict(n, ok, detail):
    VERDICTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(VERDICTS[n])
    assert ok, VERDICTS[n]


# ---------------------------------------------------------------- session artifacts


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def dataset(config):
    return ex.generate_training_dataset(config)


@pytest.fixture(scope="session")
def trained(config, dataset):
    start = time.perf_counter()
    models = ex.train_models(config, dataset)
    return models, time.perf_counter() - start


@pytest.fixture(scope="session")
def comparison(config, trained):
    start = time.perf_counter()
    report, results = ex.run_comparison(config, trained[0])
    return report, results, time.perf_counter() - start


# ---------------------------------------------------------------- 1


def test_c01_average_matches_quantized_brute_force():
    rng = np.random.default_rng(101)
    mismatches = 0
    spent = 0.0
    for _ in range(10_000):
        raw = rng.gamma(rng.uniform(0.3, 4), rng.uniform(5, 400), size=int(rng.integers(0, 80)))
        hist = RunqlatHistogram.from_latencies(raw)
        t = time.perf_counter()
        got = avg_runqlat(hist)
        spent += time.perf_counter() - t
        edges = [min(int(Fraction(x) // 5), N_BINS - 1) * 5 for x in raw]
        want = float(Fraction(sum(edges), len(edges))) if edges else 0.0
        mismatches += got != want
    verdict(1, mismatches == 0 and spent < 5.0,
            f"10000 histograms, {mismatches} mismatches, avg_runqlat time {spent:.3f}s (limit 5s)")


# ---------------------------------------------------------------- 2


def test_c02_ico_matches_exhaustive_oracle():
    rng = np.random.default_rng(202)
    iw, sw = InterferenceWeights(), SchedulerWeights()
    mismatches = ties = 0
    for _ in range(1000):
        nodes, pod = random_instance(rng, max_nodes=32)
        predictor = RowPredictor(float(rng.integers(0, 1000)))
        d = select_node_ico(nodes, pod, predictor, iw, sw)
        mismatches += d.node_id != oracle_select(nodes, pod, predictor, iw, sw, "ico")
        if d.feasible:
            totals = [s.total for s in d.scores.values()]
            ties += totals.count(max(totals)) > 1
    verdict(2, mismatches == 0, f"1000 instances (<=32 nodes), {ties} with tied best scores, {mismatches} mismatches")


# ---------------------------------------------------------------- 3


def test_c03_thresholds_never_violated():
    rng = np.random.default_rng(303)
    iw, sw = InterferenceWeights(), SchedulerWeights()
    violations = placed = 0
    for _ in range(10_000):
        nodes, pod = random_instance(rng, max_nodes=16, duplicate_rate=0.0)
        predictor = RowPredictor(float(rng.integers(0, 1000)))
        for select in (select_node_ico, select_node_hup):
            d = select(nodes, pod, predictor, iw, sw)
            if not d.feasible:
                continue
            placed += 1
            node = next(n for n in nodes if n.node_id == d.node_id)
            u_cpu, u_mem = utilization_projection(node, pod, sw)
            violations += u_cpu > sw.cpu_threshold or u_mem > sw.mem_threshold
    verdict(3, violations == 0, f"10000 trials x (ICO, HUP), {placed} placements, {violations} violations")


# ---------------------------------------------------------------- 4


def test_c04_baseline_contracts():
    rng = np.random.default_rng(404)
    rr_bad = lqp_bad = 0
    for n in range(1, 17):
        for k in (1, 3, 7):
            nodes = [make_node(i) for i in rng.permutation(n).tolist()]
            cur = RoundRobinCursor()
            counts = np.zeros(n, dtype=int)
            for _ in range(n * k):
                counts[select_node_rr(cur, nodes, online_pod(cpu=0.0, mem=0.0)).node_id] += 1
            rr_bad += not np.all(counts == k)
    for _ in range(2000):
        nodes, pod = random_instance(rng, max_nodes=32)
        d = select_node_lqp(nodes, pod)
        sums = {n.node_id: n.online_qps() for n in nodes if n.fits(pod)}
        if not sums:
            lqp_bad += d.feasible
            continue
        best = min(sums.values())
        lqp_bad += d.node_id != min(i for i, q in sums.items() if q == best)
    verdict(4, rr_bad == 0 and lqp_bad == 0,
            f"RR uneven spreads {rr_bad}/48, LQP non-minimal choices {lqp_bad}/2000")


# ---------------------------------------------------------------- 5


def test_c05_prediction_quality(dataset, trained):
    models, seconds = trained
    ev = models.evaluation
    r2, lin = ev["forest"]["r2"], ev["linear_qps"]["r2"]
    ok = len(dataset) >= 20_000 and r2 is not None and r2 >= 0.85 and (lin is None or r2 > lin) and seconds <= 120
    verdict(5, ok, f"{len(dataset)} samples ({ev['n_train']}/{ev['n_test']}), forest R2 {r2:.4f} vs "
                   f"QPS-only linear R2 {lin:.4f}, train+eval {seconds:.1f}s (limit 120s)")


# ---------------------------------------------------------------- 6


def test_c06_runqlat_explains_response_better_than_cpu(config):
    rows = []
    ok = True
    for seed in range(config.seed, config.seed + 5):
        rep = ex.motivation_fit(config.with_seed(seed))
        for name in ("exp1", "exp2"):
            a, b = rep[name]["runqlat"]["r2"], rep[name]["cpu"]["r2"]
            ok &= a is not None and (b is None or a > b)
            rows.append(f"{a:.3f}>{b:.3f}")
    verdict(6, ok, "R2 runqlat>cpu per seed (exp1, exp2): " + " ".join(rows))


# ---------------------------------------------------------------- 7


def test_c07_ico_beats_baselines(comparison):
    report, _, seconds = comparison
    P = report.policies
    worse = [f"{b}.{f}" for b in ("rr", "hup", "lqp") for f in ("avg_ms", "p90_ms", "p99_ms") if P["ico"][f] > P[b][f]]
    gain = 1 - P["ico"]["avg_ms"] / P["hup"]["avg_ms"]
    table = ", ".join(f"{p} {P[p]['avg_ms']:.2f}/{P[p]['p90_ms']:.2f}/{P[p]['p99_ms']:.2f}" for p in P)
    verdict(7, not worse and gain >= 0.10 and seconds <= 300,
            f"avg/p90/p99 ms: {table}; ICO vs HUP avg {100 * gain:.1f}% (need >=10%); "
            f"ICO worse on {worse or 'none'}; {seconds:.1f}s (limit 300s)")


# ---------------------------------------------------------------- 8


def test_c08_ico_balances_better_than_rr(comparison):
    P = comparison[0].policies
    ok = P["ico"]["cpu_std"] < P["rr"]["cpu_std"] and P["ico"]["mem_std"] < P["rr"]["mem_std"]
    verdict(8, ok, f"CPU std ICO {P['ico']['cpu_std']:.2f} vs RR {P['rr']['cpu_std']:.2f}; "
                   f"MEM std ICO {P['ico']['mem_std']:.2f} vs RR {P['rr']['mem_std']:.2f}")


# ---------------------------------------------------------------- 9


SMALL = {
    "sim": {"n_nodes": 3, "horizon_s": 900, "arrival_mean_s": 60, "initial_offline_jobs": 2},
    "forest": {"n_trees": 4, "max_depth": 6},
    "dataset": {"n_runs": 4, "windows_per_run": 20, "nodes_min": 2, "nodes_max": 3},
    "experiment": {"n_seeds": 2},
    "motivation": {"n_points": 4, "windows_per_point": 2},
}


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c09_reruns_are_byte_identical(tmp_path, config, trained, comparison):
    import yaml

    cfg = tmp_path / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    model_dir = tmp_path / "model"
    trained[0].save(model_dir)
    commands = [
        ["gen-dataset", "--runs", "2"],
        ["train"],
        ["simulate", "--policy", "ico", "--model", str(model_dir), "--format", "csv"],
        ["compare", "--format", "csv"],
        ["motivation"],
    ]
    differing = []
    for cmd in commands:
        trees = []
        for attempt in ("a", "b"):
            out = tmp_path / cmd[0] / attempt
            rc = cli_main([cmd[0], "--config", str(cfg), "--seed", "9", "--out", str(out), "--parallelism", "1", *cmd[1:]])
            assert rc == 0, cmd
            trees.append(_tree_bytes(out))
        if trees[0] != trees[1]:
            differing.append(cmd[0])
    dumps = []
    for attempt in ("a", "b"):
        target = tmp_path / f"dump-{attempt}.yaml"
        cli_main(["dump-default-config", "--out", str(target)])
        dumps.append(target.read_bytes())
    if dumps[0] != dumps[1]:
        differing.append("dump-default-config")
    # and the full default comparison, rerun with a process pool
    report, _, _ = comparison
    again, _ = ex.run_comparison(config, trained[0], parallelism=2)
    if again.to_json() != report.to_json():
        differing.append("default comparison")
    verdict(9, not differing, f"6 subcommands plus the default comparison rerun; differing: {differing or 'none'}")


# ---------------------------------------------------------------- 10


def _rank(n, p):
    return max(math.ceil(Fraction(str(p)) * n), 1) - 1


def test_c10_report_metrics_match_raw_csv(tmp_path, config, comparison):
    report, results, _ = comparison
    ex.write_comparison(tmp_path, config, report, results)
    doc = json.loads((tmp_path / "report.json").read_text())
    groups = {}
    with open(tmp_path / "requests.csv", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for r in rows:
            groups.setdefault((r[0], int(r[1])), []).append(float(r[6]))
    bad = []
    for run in doc["runs"]:
        xs = sorted(groups.get((run["policy"], run["seed"]), []))
        key = f"{run['policy']}/{run['seed']}"
        if run["n_requests"] != len(xs):
            bad.append(f"{key} count")
            continue
        if run["avg_ms"] != float(sum(map(Fraction, xs)) / len(xs)):
            bad.append(f"{key} avg")
        if run["p90_ms"] != xs[_rank(len(xs), 0.90)] or run["p99_ms"] != xs[_rank(len(xs), 0.99)]:
            bad.append(f"{key} percentile")
        for res in ("cpu", "mem"):
            vals = [Fraction(v) for v in run[f"{res}_node_means"]]
            n = len(vals)
            pstdev = math.sqrt(float(sum(v * v for v in vals) / n - (sum(vals) / n) ** 2))
            if run[f"{res}_std"] != pstdev:
                bad.append(f"{key} {res}_std")
    for name, p in doc["policies"].items():
        runs = [r for r in doc["runs"] if r["policy"] == name]
        for f in ("avg_ms", "p90_ms", "p99_ms", "cpu_std", "mem_std"):
            vals = [r[f] for r in runs if r[f] is not None]
            if p[f] != float(sum(map(Fraction, vals)) / len(vals)):
                bad.append(f"{name} mean {f}")
    n_req = sum(len(v) for v in groups.values())
    verdict(10, not bad, f"{len(doc['runs'])} runs, {n_req} request rows recomputed; mismatches: {bad or 'none'}")
