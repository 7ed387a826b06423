import numpy as np
import pytest

from icosched.interference import RunqlatHistogram, ServiceClass
from icosched.prediction.features import HW_EVENTS, PERF_METRICS
from icosched.scheduler import NodeSnapshot, PodRequest, ServiceSample


def make_node(node_id=0, cpu_cur=0.0, cpu_sum=16.0, mem_cur=0.0, mem_sum=64.0, services=(), **kw):
    """Snapshot with zeroed collector fields unless given."""
    kw.setdefault("perf_metrics", dict.fromkeys(PERF_METRICS, 0.0))
    kw.setdefault("hw_events", dict.fromkeys(HW_EVENTS, 0.0))
    return NodeSnapshot(node_id, cpu_cur, cpu_sum, mem_cur, mem_sum, list(services), **kw)


def online(qps, counts=None):
    return ServiceSample(ServiceClass.ONLINE, qps, RunqlatHistogram.from_counts(counts or {}))


def offline(counts=None):
    return ServiceSample(ServiceClass.OFFLINE, 0.0, RunqlatHistogram.from_counts(counts or {}))


def online_pod(qps=100.0, cpu=1.0, mem=2.0, pod_id=0):
    return PodRequest("web-search", ServiceClass.ONLINE, qps, cpu, mem, pod_id)


class ConstantPredictor:
    """Stands in for a forest: predicts ``value`` for every row."""

    def __init__(self, value=0.0):
        self.value = value

    def predict(self, X):
        return np.full(np.asarray(X).shape[0], float(self.value))


class RowPredictor:
    """Predicts from the first perf metric (cpu_utilization), scaled."""

    def __init__(self, scale=100.0):
        self.scale = scale

    def predict(self, X):
        X = np.atleast_2d(X)
        return X[:, 1] * self.scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
