"""Replica ensembles over a bounded process pool.

Replica ``k`` always receives ``replica_seed(root, k)``, and results come back
in replica order, so neither the worker count nor scheduling can change the
output.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial

from .rng import replica_seed


def default_workers() -> int:
    env = os.environ.get("SMOLKIN_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def _call(fn, kwargs, seed):
    return fn(seed=seed, **kwargs)


def run_replicas(fn, n_replicas: int, root_seed: int, workers: int | None = None, **kwargs):
    """``[fn(seed=replica_seed(root, k), **kwargs) for k in range(n)]``, possibly in parallel."""
    seeds = [replica_seed(root_seed, k) for k in range(n_replicas)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or n_replicas <= 1:
        return [fn(seed=s, **kwargs) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(_call, fn, kwargs), seeds))


def fsum_mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else float("nan")
