"""Keyed random streams.

Every draw in a simulation comes from a generator keyed by what it is for
(stream tag, pod or node id, window), never from a shared sequential
generator. Runs under different policies therefore see the same arrivals,
QPS paths and noise for the same pod and window: common random numbers.

Keys go straight into a Philox counter-based generator; building one costs
about 10 us, so a fresh stream per (pod, window) is affordable.
"""

import numpy as np

ARRIVALS = 1
QPS = 2
SERVICE = 3  # per (pod, window): demand noise, latency, responses
INTENSITY = 4  # per offline pod: persistent load factor
PROXY = 6
BACKGROUND = 7
DEMAND = 8
PLACEMENT = 9
DATASET = 10
SPLIT = 11

_MASK64 = (1 << 64) - 1
_FIELD = 1 << 28


def stream(seed: int, tag: int, a: int = 0, b: int = 0) -> np.random.Generator:
    if not (0 <= a < _FIELD and 0 <= b < _FIELD and 0 <= tag < 256):
        raise ValueError(f"stream key out of range: tag={tag} a={a} b={b}")
    key = np.array([seed & _MASK64, (tag << 56) | (a << 28) | b], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
