"""Contention model: run-queue pressure -> latency histogram -> response time.

Mean latency stays at ``lambda0`` until the node has ``rho0`` runnable
threads per core, then grows as ``lambda1 * (rho - rho0) ** gamma``, capped at
995 ns. Individual events are gamma-distributed around that mean with
coefficient of variation ``dispersion``.
"""

from __future__ import annotations

import numpy as np

from ..config import ContentionParams, ResponseParams
from ..interference import MAX_AVG_NS, RunqlatHistogram


def mean_latency_ns(node_load: float, cores: float, params: ContentionParams) -> float:
    rho = node_load / cores
    mu = params.lambda0 + params.lambda1 * max(0.0, rho - params.rho0) ** params.gamma
    return min(mu, MAX_AVG_NS)


def contention_latency(node_load: float, cores: float, params: ContentionParams, rng: np.random.Generator,
                       n_samples: int | None = None) -> RunqlatHistogram:
    if cores <= 0:
        raise ValueError("cores must be positive")
    n = params.n_samples if n_samples is None else n_samples
    mu = mean_latency_ns(node_load, cores, params)
    if params.dispersion == 0 or mu == 0:
        return RunqlatHistogram.from_latencies(np.full(n, mu))
    shape = 1.0 / params.dispersion**2
    return RunqlatHistogram.from_latencies(rng.gamma(shape, mu / shape, size=n))


def response_time(base_ms: float, avg_runqlat_ns: float, params: ResponseParams, rng: np.random.Generator,
                  size: int | None = None):
    """Response time(s) in ms; returns a float, or an array when ``size`` is given."""
    if base_ms <= 0:
        raise ValueError("base_ms must be positive")
    r = params.s0 * base_ms * (1.0 + params.s1 * (avg_runqlat_ns / MAX_AVG_NS))
    if size is None:
        return r + (abs(rng.normal(0.0, params.sigma_ms)) if params.sigma_ms > 0 else 0.0)
    if params.sigma_ms > 0:
        return r + np.abs(rng.normal(0.0, params.sigma_ms, size=size))
    return np.full(size, r)
