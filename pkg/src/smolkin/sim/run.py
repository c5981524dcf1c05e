"""Whole-trajectory driver and observers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import StepSizeError
from ..params import DomainSpec, ModelParams, sample_initial_configuration
from .state import SimState
from .stepper import RateAccumulator, Stepper, StepPolicy


class Observer:
    """Base observer: records ``value(state)`` at each requested time.

    Times are snapped to the first step boundary at or after the request.
    """

    name = "observer"

    def __init__(self, times):
        self.times = np.sort(np.asarray(times, dtype=float))
        self.records: list[dict] = []

    def value(self, state: SimState):
        raise NotImplementedError

    def observe(self, state: SimState, t_requested: float):
        v, extra = self.value(state)
        self.records.append({"t": float(t_requested), "t_actual": float(state.time),
                             "name": self.name, "value": v, "extra": extra})


class AliveObserver(Observer):
    name = "alive"

    def value(self, state):
        return state.n_alive, {}


class MassObserver(Observer):
    name = "alive_mass"

    def value(self, state):
        return state.alive_mass, {}


class TracerObserver(Observer):
    """Survival indicator of the particle with initial index 0."""

    name = "tracer"

    def __init__(self, times, tracer: int = 0):
        super().__init__(times)
        self.tracer = tracer

    def value(self, state):
        alive = bool(state.alive[self.tracer])
        vt = None if alive else float(state.death_time[self.tracer])
        return int(alive), {"vanish_time": vt}


class SnapshotObserver(Observer):
    name = "snapshot"

    def __init__(self, times):
        super().__init__(times)
        self.snapshots = []

    def value(self, state):
        snap = state.snapshot()
        self.snapshots.append(snap)
        return snap.n_alive, {}


def tracer_observer(times, tracer: int = 0) -> TracerObserver:
    return TracerObserver(times, tracer)


@dataclass
class RunRecord:
    initial: SimState
    final: SimState
    events: list
    observers: list
    accumulator: RateAccumulator
    epsilon: float
    dt: float
    extra: dict = field(default_factory=dict)

    def records(self):
        out = []
        for ob in self.observers:
            out.extend(ob.records)
        return out


def run(params: ModelParams, domain: DomainSpec, T: float, policy: StepPolicy = StepPolicy(),
        observers=(), seed: int = 0, annihilation: bool = False,
        initial: SimState | None = None, test_function=None) -> RunRecord:
    """Sample an initial configuration and advance it to time ``T``."""
    if T < 0:
        raise ValueError("T must be >= 0")
    eps = params.epsilon
    domain.check_range(eps, params.potential.R)
    state = initial.copy() if initial is not None else sample_initial_configuration(params, domain, seed)
    state.annihilation = annihilation
    init = state.copy()
    stepper = Stepper(params, policy, annihilation, test_function)
    if stepper.worst_possible > policy.max_rate_dt:
        raise StepSizeError(
            f"alpha * sup V * c_dt gives firing probability {stepper.worst_possible:.3g} > "
            f"guard {policy.max_rate_dt}; reduce c_dt")
    dt = stepper.dt
    n_steps = int(math.ceil(T / dt - 1e-9)) if T > 0 else 0
    pending = sorted({(float(t), k) for k, ob in enumerate(observers) for t in ob.times})
    q = 0
    while q < len(pending) and pending[q][0] <= state.time + 1e-12:
        observers[pending[q][1]].observe(state, pending[q][0])
        q += 1
    done = 0
    while done < n_steps:
        # run straight to the step at which the next observer falls due
        chunk = n_steps - done
        if q < len(pending):
            due = int(math.ceil((pending[q][0] - state.time) / dt - 1e-9))
            chunk = max(1, min(chunk, due))
        stepper.advance(state, chunk)
        done += chunk
        while q < len(pending) and pending[q][0] <= state.time + 1e-12 * max(1.0, T):
            observers[pending[q][1]].observe(state, pending[q][0])
            q += 1
    while q < len(pending) and pending[q][0] <= T:
        observers[pending[q][1]].observe(state, pending[q][0])
        q += 1
    return RunRecord(init, state, state.events, list(observers), stepper.acc, eps, dt)
