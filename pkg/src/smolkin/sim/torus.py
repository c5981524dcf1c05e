"""Annihilating (or constant-kernel coagulating) particles on the unit torus."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, StepSizeError
from ..params import DomainSpec, ModelParams, PotentialSpec, canonical_potential, \
    sample_initial_configuration, torus_params
from .encounter import EncounterPolicy, encounter_kernel
from .state import CollisionEvent, Snapshot
from .stepper import potential_table


@dataclass
class EncounterRecord:
    """One trajectory from the encounter engine.

    ``death_time[i]`` is ``inf`` for particles alive at the horizon, so alive
    counts are exact at any time, not just on the snapshot grid.
    """

    N: int
    T: float
    epsilon: float
    death_time: np.ndarray
    final_mass: np.ndarray
    events: list
    acc_unordered: float
    acc_by_mass: np.ndarray
    snapshots: list
    g_hist: np.ndarray
    g_rmax: float
    g_window: tuple
    stats: dict
    initial_positions: np.ndarray = field(repr=False, default=None)

    def alive_count(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([(self.death_time > ti).sum() for ti in t])

    def survival(self, t) -> np.ndarray:
        return self.alive_count(t) / self.N

    def tracer_alive(self, t, tracer: int = 0) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (self.death_time[tracer] > t).astype(int)


def _check_uniform_model(params: ModelParams):
    d = params.diffusivity
    a = params.strength
    if params.dimension != 3:
        raise DomainError("the encounter engine is three-dimensional")
    if not (np.all(d == d[0]) and np.all(a == a.flat[0])):
        raise ValueError("encounter engine needs constant diffusivity and strength tables")


def run_encounter(params: ModelParams, T: float, seed: int, *,
                  policy: EncounterPolicy = EncounterPolicy(), annihilation: bool = True,
                  snapshot_times=(), g_rmax: float = 0.0, g_bins: int = 0,
                  g_window=(0.0, 0.0), L: float = 1.0) -> EncounterRecord:
    """Simulate one torus trajectory to time ``T`` (a multiple of the coarse step)."""
    _check_uniform_model(params)
    eps = params.epsilon
    domain = DomainSpec("torus", L)
    domain.check_range(eps, params.potential.R)
    alpha = float(params.strength.flat[0])
    D = float(params.diffusivity[0])
    if 1.0 - math.exp(-alpha * params.potential.sup_norm * policy.c_dt) > policy.max_rate_dt:
        raise StepSizeError("leaf firing probability above guard; reduce c_dt")
    n_coarse = int(round(T / policy.coarse_dt))
    if abs(n_coarse * policy.coarse_dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of the coarse step")
    levels = policy.levels(eps)
    snap_t = np.asarray(sorted(set(float(t) for t in snapshot_times)), dtype=float)
    if np.any(snap_t < 0) or np.any(snap_t > T + 1e-12):
        raise ValueError("snapshot times must lie in [0, T]")
    snap_steps = np.rint(snap_t / policy.coarse_dt).astype(np.int64)
    if np.any(np.abs(snap_steps * policy.coarse_dt - snap_t) > 1e-9):
        raise ValueError("snapshot times must lie on the coarse grid")
    # time zero is served from the initial configuration, not the kernel
    at_zero = snap_steps == 0
    snap_steps = snap_steps[~at_zero]
    state = sample_initial_configuration(params, domain, seed)
    rt, vt = potential_table(params.potential)
    out = encounter_kernel(state.positions, state.masses, D, alpha, rt, vt, eps, L,
                           np.uint64(state.seed), n_coarse, policy.coarse_dt, levels,
                           policy.k_sigma, annihilation, snap_steps, float(g_rmax),
                           int(g_bins), float(g_window[0]), float(g_window[1]))
    death, mass, ev, ev_t, ev_x, acc_un, acc_m, sp, sa, sm, gh, st = out
    events = [CollisionEvent(float(t), int(r[0]), int(r[1]), int(r[2]), int(r[3]),
                             None if r[4] < 0 else int(r[4]), tuple(float(c) for c in x))
              for r, t, x in zip(ev, ev_t, ev_x)]
    snaps = []
    if at_zero.any():
        snaps.append(Snapshot(0.0, state.positions.copy(), state.masses.copy(),
                              np.arange(params.N)))
    for k, t in enumerate(snap_t[~at_zero]):
        ids = np.flatnonzero(sa[k])
        snaps.append(Snapshot(float(t), sp[k][ids].copy(), sm[k][ids].copy(), ids))
    stats = dict(zip(["candidates", "nodes", "leaves", "crossings"], st.tolist()))
    stats.update(levels=levels, leaf=policy.leaf(eps), coarse_dt=policy.coarse_dt)
    return EncounterRecord(params.N, T, eps, death, mass, events, float(acc_un), acc_m,
                           snaps, gh, float(g_rmax), tuple(g_window), stats,
                           state.positions.copy())


@dataclass
class SurvivalCurve:
    t: np.ndarray
    h: np.ndarray
    stderr: np.ndarray
    tracer: np.ndarray
    tracer_stderr: np.ndarray
    N: int
    n_replicas: int
    alpha: float


def survival_curve(records, times, alpha=float("nan")) -> SurvivalCurve:
    import math as _m
    times = np.asarray(times, dtype=float)
    H = np.array([r.survival(times) for r in records])
    Tr = np.array([r.tracer_alive(times) for r in records], dtype=float)
    n = len(records)
    mean = np.array([_m.fsum(col) / n for col in H.T])
    tmean = np.array([_m.fsum(col) / n for col in Tr.T])
    sd = H.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    tsd = Tr.std(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    return SurvivalCurve(times, mean, sd / math.sqrt(n), tmean, tsd / math.sqrt(n),
                         records[0].N if records else 0, n, alpha)


def run_torus_annihilation(alpha: float, N: int, T: float, n_replicas: int, seed: int,
                           times=None, policy: EncounterPolicy = EncounterPolicy(),
                           potential: PotentialSpec | None = None, workers: int | None = None,
                           **kwargs):
    """Ensemble survival fraction for the unit-rate annihilating torus model.

    Returns ``(SurvivalCurve, records)``.
    """
    from ..ensemble import run_replicas

    if times is None:
        times = np.linspace(0.0, T, 9)
    params = torus_params(N, alpha, potential or canonical_potential(3))
    records = run_replicas(run_encounter, n_replicas, seed, workers,
                           params=params, T=T, policy=policy, annihilation=True, **kwargs)
    return survival_curve(records, times, alpha), records
