"""Fixed time-step simulation of coagulating (or annihilating) Brownian particles.

Each step of length ``dt = c_dt * eps^2``:

1. every alive particle of mass ``m`` gets a Gaussian increment with
   per-coordinate variance ``2 d(m) dt``;
2. every alive pair closer than ``R eps`` fires with probability
   ``1 - exp(-alpha V_eps(x_i - x_j) dt)``, the rate frozen at the
   post-move positions;
3. fired pairs are resolved in a uniformly random order, skipping pairs
   with a member already removed this step.

Random draws are keyed by (seed, step, particle ids) so a run is a pure
function of its seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .. import rng
from ..errors import StepSizeError
from .cells import min_image, pairs_within
from .state import CollisionEvent, SimState

# mass pairs tracked individually by the rate accumulators
ACC_MASS_CAP = 8


@dataclass(frozen=True)
class StepPolicy:
    c_dt: float = 0.05
    max_rate_dt: float = 0.2

    def dt(self, eps: float) -> float:
        return self.c_dt * eps * eps


@dataclass
class RateAccumulator:
    """Time-integrated pair propensities along a trajectory (no ``eps`` normalization).

    ``unordered`` is ``int sum_{i<j} alpha V_eps dt``; ``by_mass[n-1, m-1]``
    is the same integral over ordered pairs with masses ``(n, m)``, and
    ``weighted`` repeats it with each ordered pair ``(i, j)`` weighted by the
    spatial test function at ``x_i`` (zero when no test function is set).
    """

    unordered: float = 0.0
    by_mass: np.ndarray = field(default_factory=lambda: np.zeros((ACC_MASS_CAP, ACC_MASS_CAP)))
    weighted: np.ndarray = field(default_factory=lambda: np.zeros((ACC_MASS_CAP, ACC_MASS_CAP)))

    def as_array(self):
        k = ACC_MASS_CAP * ACC_MASS_CAP
        a = np.zeros(1 + 2 * k)
        a[0] = self.unordered
        a[1:1 + k] = self.by_mass.ravel()
        a[1 + k:] = self.weighted.ravel()
        return a

    def load(self, a):
        k = ACC_MASS_CAP * ACC_MASS_CAP
        self.unordered = float(a[0])
        self.by_mass = a[1:1 + k].reshape(ACC_MASS_CAP, ACC_MASS_CAP).copy()
        self.weighted = a[1 + k:].reshape(ACC_MASS_CAP, ACC_MASS_CAP).copy()


def potential_table(potential, n: int = 4097):
    rt = np.linspace(0.0, potential.R, n)
    return rt, potential.radial(rt)


@nb.njit(cache=True)
def _table(r, rt, vt):
    if r >= rt[-1]:
        return 0.0
    x = r / rt[1]
    k = int(x)
    t = x - k
    return vt[k] * (1.0 - t) + vt[k + 1] * t


@nb.njit(cache=True)
def _lookup(tab, m):
    k = min(m, tab.shape[0]) - 1
    return tab[k]


@nb.njit(cache=True)
def _bump(x, jw):
    # jw = (amplitude, radius, cx, cy, cz, ...); radius <= 0 means no test function
    r2 = 0.0
    for k in range(x.size):
        dx = x[k] - jw[2 + k]
        r2 += dx * dx
    q = 1.0 - r2 / (jw[1] * jw[1])
    return jw[0] * q * q if q > 0 else 0.0


@nb.njit(cache=True)
def step_kernel(pos, mass, alive, death, dtab, atab, rt, vt, eps, dt, t0,
                periodic, L, seed, step, annihilation, guard, acc, jw):
    """Advance one step in place. Returns (status, worst prob, events, locations).

    status 0 = ok, 1 = guard violated (state untouched past the move).
    Events rows: (i, j, m_i, m_j, survivor or -1); locations are the
    survivor's (or first member's) position at the collision.
    """
    n, d = pos.shape
    # 1. free motion
    for i in range(n):
        if not alive[i]:
            continue
        s = math.sqrt(2.0 * _lookup(dtab, mass[i]) * dt)
        st = rng.key3(seed, step, i)
        for k in range(d):
            st, z = rng.stream_normal(st)
            pos[i, k] += s * z
            if periodic:
                pos[i, k] -= L * math.floor(pos[i, k] / L)
    # 2. pair clocks
    idx = np.flatnonzero(alive).astype(np.int64)
    R = rt[-1]
    pi, pj = pairs_within(pos, idx, R * eps, periodic, L)
    fired_i = np.empty(pi.size, dtype=np.int64)
    fired_j = np.empty(pi.size, dtype=np.int64)
    order = np.empty(pi.size)
    surv_u = np.empty(pi.size)
    nf = 0
    worst = 0.0
    cap = int(math.sqrt((acc.size - 1) // 2))
    woff = 1 + cap * cap
    use_j = jw[1] > 0
    for a in range(pi.size):
        i, j = pi[a], pj[a]
        r2 = 0.0
        for k in range(d):
            dx = pos[j, k] - pos[i, k]
            if periodic:
                dx = min_image(dx, L)
            r2 += dx * dx
        ai = min(mass[i], atab.shape[0]) - 1
        aj = min(mass[j], atab.shape[0]) - 1
        rate = atab[ai, aj] * _table(math.sqrt(r2) / eps, rt, vt) / (eps * eps)
        if rate <= 0.0:
            continue
        p = 1.0 - math.exp(-rate * dt)
        if p > worst:
            worst = p
        acc[0] += rate * dt
        mi, mj = mass[i], mass[j]
        if mi <= cap and mj <= cap:
            acc[1 + (mi - 1) * cap + (mj - 1)] += rate * dt
            acc[1 + (mj - 1) * cap + (mi - 1)] += rate * dt
            if use_j:
                acc[woff + (mi - 1) * cap + (mj - 1)] += rate * dt * _bump(pos[i], jw)
                acc[woff + (mj - 1) * cap + (mi - 1)] += rate * dt * _bump(pos[j], jw)
        st = rng.key4(seed, step, i, j)
        st, u = rng.stream_uniform(st)
        if u < p:
            st, o = rng.stream_uniform(st)
            st, w = rng.stream_uniform(st)
            fired_i[nf] = i
            fired_j[nf] = j
            order[nf] = o
            surv_u[nf] = w
            nf += 1
    if worst > guard:
        return 1, worst, np.empty((0, 5), dtype=np.int64), np.empty((0, d))
    # 3. resolve in random order
    perm = np.argsort(order[:nf])
    ev = np.empty((nf, 5), dtype=np.int64)
    evx = np.empty((nf, d))
    ne = 0
    t1 = t0 + dt
    for q in range(nf):
        a = perm[q]
        i, j = fired_i[a], fired_j[a]
        if not (alive[i] and alive[j]):
            continue
        mi, mj = mass[i], mass[j]
        ev[ne, 0] = i
        ev[ne, 1] = j
        ev[ne, 2] = mi
        ev[ne, 3] = mj
        if annihilation:
            alive[i] = False
            alive[j] = False
            death[i] = t1
            death[j] = t1
            ev[ne, 4] = -1
            evx[ne] = pos[i]
        else:
            if surv_u[a] * (mi + mj) < mi:
                keep, gone = i, j
            else:
                keep, gone = j, i
            mass[keep] = mi + mj
            alive[gone] = False
            death[gone] = t1
            ev[ne, 4] = keep
            evx[ne] = pos[keep]
        ne += 1
    return 0, worst, ev[:ne], evx[:ne]


@nb.njit(cache=True)
def advance_kernel(pos, mass, alive, death, dtab, atab, rt, vt, eps, dt, t0,
                   periodic, L, seed, step0, n_steps, annihilation, guard, acc, jw):
    """``n_steps`` consecutive steps in one call.

    Returns (status, worst prob, steps done, event rows, step indices, locations).
    """
    d = pos.shape[1]
    evs = np.empty((16, 5), dtype=np.int64)
    evk = np.empty(16, dtype=np.int64)
    evx = np.empty((16, d))
    ne = 0
    worst = 0.0
    for s in range(n_steps):
        status, w, ev, ex = step_kernel(pos, mass, alive, death, dtab, atab, rt, vt, eps, dt,
                                    t0 + s * dt, periodic, L, seed, step0 + s,
                                    annihilation, guard, acc, jw)
        worst = max(worst, w)
        if status != 0:
            return status, worst, s, evs[:ne], evk[:ne], evx[:ne]
        if ne + ev.shape[0] > evs.shape[0]:
            grow = max(2 * evs.shape[0], ne + ev.shape[0])
            e2 = np.empty((grow, 5), dtype=np.int64)
            e2[:ne] = evs[:ne]
            k2 = np.empty(grow, dtype=np.int64)
            k2[:ne] = evk[:ne]
            x2 = np.empty((grow, d))
            x2[:ne] = evx[:ne]
            evs, evk, evx = e2, k2, x2
        for q in range(ev.shape[0]):
            evs[ne] = ev[q]
            evk[ne] = step0 + s
            evx[ne] = ex[q]
            ne += 1
    return 0, worst, n_steps, evs[:ne], evk[:ne], evx[:ne]


class Stepper:
    """Binds a parameter set to the compiled step kernel."""

    def __init__(self, params, policy: StepPolicy = StepPolicy(), annihilation: bool = False,
                 test_function=None):
        self.params = params
        self.policy = policy
        self.eps = params.epsilon
        self.dt = policy.dt(self.eps)
        self.rt, self.vt = potential_table(params.potential)
        self.dtab = np.ascontiguousarray(params.diffusivity, dtype=float)
        self.atab = np.ascontiguousarray(params.strength, dtype=float)
        self.annihilation = annihilation
        self.acc = RateAccumulator()
        worst = 1.0 - math.exp(-float(self.atab.max()) * params.potential.sup_norm * policy.c_dt)
        self.worst_possible = worst
        # spatial test-function weights (amplitude, radius, centre)
        self.jw = np.zeros(2 + params.dimension)
        if test_function is not None and not test_function.is_constant:
            self.jw[0] = test_function.amplitude
            self.jw[1] = test_function.radius
            self.jw[2:] = test_function.center

    def advance(self, state: SimState, n_steps: int = 1) -> SimState:
        """Advance ``n_steps`` steps in place."""
        if n_steps <= 0:
            return state
        acc = self.acc.as_array()
        t0, k0 = state.time, state.step_index
        status, worst, done, ev, evk, evx = advance_kernel(
            state.positions, state.masses, state.alive, state.death_time,
            self.dtab, self.atab, self.rt, self.vt, self.eps, self.dt, t0,
            state.periodic, state.L, np.uint64(state.seed), k0, int(n_steps),
            self.annihilation, self.policy.max_rate_dt, acc, self.jw)
        self.acc.load(acc)
        state.step_index = k0 + done
        state.time = t0 + done * self.dt
        for (i, j, mi, mj, s), k, x in zip(ev, evk, evx):
            loc = tuple(float(c) for c in x)
            state.events.append(CollisionEvent(float(t0 + (k - k0 + 1) * self.dt), int(i), int(j),
                                               int(mi), int(mj), None if s < 0 else int(s), loc))
        if status == 1:
            raise StepSizeError(
                f"pair firing probability {worst:.3g} exceeds guard "
                f"{self.policy.max_rate_dt}; reduce c_dt (now {self.policy.c_dt})")
        return state

    def step(self, state: SimState) -> SimState:
        return self.advance(state, 1)


def step(state: SimState, params, policy: StepPolicy = StepPolicy()) -> SimState:
    """One step of the particle dynamics (in place; the state is also returned)."""
    return Stepper(params, policy, state.annihilation).step(state)
