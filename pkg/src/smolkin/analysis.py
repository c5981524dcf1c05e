"""Macroscopic observables computed from particle trajectories.

Works with both trajectory kinds: the fixed-step ``RunRecord`` and the
torus ``EncounterRecord``. Everything here is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from .errors import InsufficientStatistics
from .params import ModelParams, sphere_area
from .sim.cells import min_image


# ---------------------------------------------------------------------------
# mollifier and test functions


@dataclass(frozen=True)
class MollifierSpec:
    """``eta(x) = c_eta (1 - |x|^2/delta^2)^2`` on the ball of radius ``delta``."""

    delta: float = 0.25
    kind: str = "quartic_bump"
    dim: int = 3

    def __post_init__(self):
        if self.kind != "quartic_bump":
            raise ValueError(f"unknown mollifier kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @property
    def c_eta(self) -> float:
        d = self.dim
        unit = sphere_area(d) * special.beta(d / 2, 3) / 2
        return 1.0 / (unit * self.delta ** d)

    def radial(self, r):
        q = 1.0 - (np.asarray(r, dtype=float) / self.delta) ** 2
        return np.where(q > 0, self.c_eta * q * q, 0.0)

    def __call__(self, x):
        return self.radial(np.linalg.norm(np.asarray(x, dtype=float), axis=-1))

    def self_convolution(self, n: int = 2049):
        """Table ``(r, K(r))`` of ``K = eta * eta`` on ``[0, 2 delta]`` (3-D only)."""
        if self.dim != 3:
            raise ValueError("self-convolution table is implemented for d = 3")
        dl = self.delta
        c = self.c_eta

        def F(t):
            # antiderivative of t * eta(t)
            return c * (t ** 2 / 2 - t ** 4 / (2 * dl ** 2) + t ** 6 / (6 * dl ** 4))

        xs, ws = np.polynomial.legendre.leggauss(64)
        s = 0.5 * dl * (xs + 1)
        w = 0.5 * dl * ws
        r = np.linspace(0.0, 2 * dl, n)
        K = np.empty(n)
        eta_s = self.radial(s)
        K[0] = 4 * math.pi * float(np.sum(w * s * s * eta_s * eta_s))
        for k in range(1, n):
            rk = r[k]
            lo = np.abs(rk - s)
            hi = np.minimum(rk + s, dl)
            inner = np.where(hi > lo, F(hi) - F(np.minimum(lo, dl)), 0.0)
            K[k] = 2 * math.pi / rk * float(np.sum(w * s * eta_s * inner))
        K[-1] = 0.0
        return r, K


@dataclass(frozen=True)
class TestFunctionSpec:
    """Spatial test function: a constant, or ``amplitude (1 - |x-c|^2/radius^2)^2``."""

    amplitude: float = 1.0
    radius: float = 0.0
    center: tuple = (0.5, 0.5, 0.5)

    @property
    def is_constant(self) -> bool:
        return self.radius <= 0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_constant:
            return np.full(x.shape[:-1], self.amplitude)
        q = 1.0 - np.sum((x - np.asarray(self.center)) ** 2, axis=-1) / self.radius ** 2
        return np.where(q > 0, self.amplitude * q * q, 0.0)

    @property
    def sup(self) -> float:
        return abs(self.amplitude)

    @property
    def grad_sup(self) -> float:
        # max of |d/dr a (1 - r^2/R^2)^2| = a * 8 / (3 sqrt(3) R)
        return 0.0 if self.is_constant else abs(self.amplitude) * 8 / (3 * math.sqrt(3) * self.radius)


# ---------------------------------------------------------------------------
# empirical measure and candidate densities


@dataclass
class EmpiricalMeasure:
    positions: np.ndarray
    masses: np.ndarray
    weight: float

    @property
    def total_weight(self) -> float:
        return self.weight * len(self.masses)

    def weight_by_mass(self) -> dict:
        vals, counts = np.unique(self.masses, return_counts=True)
        return {int(v): self.weight * int(c) for v, c in zip(vals, counts)}


def _alive_view(state):
    """(positions, masses) of the alive particles of a SimState or Snapshot."""
    if hasattr(state, "alive"):
        a = state.alive
        return state.positions[a], state.masses[a]
    return state.positions, state.masses


def empirical_measure(state, epsilon: float, dim: int = 3) -> EmpiricalMeasure:
    """Alive particles as atoms of weight ``eps^{d-2}``."""
    pos, mass = _alive_view(state)
    return EmpiricalMeasure(pos.copy(), mass.copy(), epsilon ** (dim - 2))


@dataclass
class CandidateDensityField:
    mass: int
    points: np.ndarray
    values: np.ndarray
    epsilon: float
    mollifier: MollifierSpec
    cell_volume: float | None = None

    def integral(self) -> float:
        if self.cell_volume is None:
            raise ValueError("field was evaluated at scattered points")
        return float(np.sum(self.values) * self.cell_volume)


def candidate_density(state, n: int, mollifier: MollifierSpec, grid, epsilon: float,
                      periodic: bool = False, L: float = 1.0) -> CandidateDensityField:
    """Mollified, ``eps^{d-2}``-weighted density of the alive mass-``n`` particles.

    ``grid`` is a ``solvers.Grid`` or an array of evaluation points.
    """
    pos, mass = _alive_view(state)
    sel = pos[mass == n]
    if hasattr(grid, "points"):
        if not mollifier.delta > 2 * grid.h:
            raise ValueError("mollifier width must exceed two grid spacings")
        pts, cv = grid.points(), grid.cell_volume
    else:
        pts, cv = np.atleast_2d(np.asarray(grid, dtype=float)), None
    d = pts.shape[1]
    vals = _mollify(pts, sel, mollifier.delta, mollifier.c_eta, periodic, L)
    return CandidateDensityField(n, pts, epsilon ** (d - 2) * vals, epsilon, mollifier, cv)


@nb.njit(cache=True)
def _mollify(pts, xs, delta, c, periodic, L):
    out = np.zeros(pts.shape[0])
    d2 = delta * delta
    for a in range(xs.shape[0]):
        for g in range(pts.shape[0]):
            r2 = 0.0
            for k in range(pts.shape[1]):
                dx = pts[g, k] - xs[a, k]
                if periodic:
                    dx = min_image(dx, L)
                r2 += dx * dx
            if r2 < d2:
                q = 1.0 - r2 / d2
                out[g] += c * q * q
    return out


@nb.njit(cache=True)
def _kernel_pair_sum(pos, rt, kt, periodic, L, J):
    """``sum_{i,j} J K(x_i - x_j)`` over ordered pairs, diagonal included."""
    n = pos.shape[0]
    rmax = rt[-1]
    step = rt[1]
    s = 0.0
    for i in range(n):
        s += J * kt[0]
        for j in range(i + 1, n):
            r2 = 0.0
            for k in range(pos.shape[1]):
                dx = pos[j, k] - pos[i, k]
                if periodic:
                    dx = min_image(dx, L)
                r2 += dx * dx
            if r2 < rmax * rmax:
                x = math.sqrt(r2) / step
                q = int(x)
                t = x - q
                s += 2.0 * J * (kt[q] * (1 - t) + kt[q + 1] * t)
    return s


def density_product_integral(state, n: int, m: int, mollifier: MollifierSpec, epsilon: float,
                             periodic: bool = True, L: float = 1.0, table=None) -> float:
    """``int f_n f_m dx`` for the candidate densities, through ``K = eta * eta``.

    Exact up to the tabulation of ``K``; no spatial grid involved.
    """
    rt, kt = table if table is not None else mollifier.self_convolution()
    pos, mass = _alive_view(state)
    w = epsilon ** (2 * (pos.shape[1] - 2))
    if n == m:
        return w * _kernel_pair_sum(np.ascontiguousarray(pos[mass == n]), rt, kt, periodic, L, 1.0)
    a = np.ascontiguousarray(pos[(mass == n) | (mass == m)])
    both = _kernel_pair_sum(a, rt, kt, periodic, L, 1.0)
    sn = _kernel_pair_sum(np.ascontiguousarray(pos[mass == n]), rt, kt, periodic, L, 1.0)
    sm = _kernel_pair_sum(np.ascontiguousarray(pos[mass == m]), rt, kt, periodic, L, 1.0)
    return w * 0.5 * (both - sn - sm)


# ---------------------------------------------------------------------------
# trajectory adapters


@dataclass
class _Traj:
    epsilon: float
    N: int
    T: float
    unordered: float
    by_mass: np.ndarray
    weighted: np.ndarray | None
    snapshots: list
    n_events: int
    death_time: np.ndarray | None


def _traj(rec) -> _Traj:
    if hasattr(rec, "acc_unordered"):  # EncounterRecord or a saved record
        return _Traj(rec.epsilon, rec.N, rec.T, rec.acc_unordered, rec.acc_by_mass,
                     getattr(rec, "acc_weighted", None), list(rec.snapshots), len(rec.events),
                     rec.death_time)
    snaps = []
    for ob in rec.observers:
        snaps.extend(getattr(ob, "snapshots", []))
    acc = rec.accumulator
    return _Traj(rec.epsilon, rec.initial.N, rec.final.time, acc.unordered, acc.by_mass,
                 acc.weighted, snaps, len(rec.events), rec.final.death_time)


def _trapezoid(t, y) -> float:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t))) if t.size > 1 else 0.0


# ---------------------------------------------------------------------------
# Stosszahlansatz


@dataclass
class SzaResult:
    lhs: float
    rhs: float
    ratio: float
    stderr: float
    n_replicas: int
    per_replica: list = field(default_factory=list)


def stosszahlansatz_terms(rec, n: int, m: int, beta: float, mollifier: MollifierSpec,
                          J: TestFunctionSpec = TestFunctionSpec(), periodic: bool = True,
                          L: float = 1.0, table=None, dim: int = 3) -> tuple[float, float]:
    """``(lhs, rhs)`` for one trajectory.

    lhs is ``eps^{d-2}`` times the time-integrated ordered-pair propensity of
    mass-``(n, m)`` pairs, weighted by ``J`` at the first member; rhs is
    ``beta * int int J f_n f_m`` with the time integral taken by the trapezoid
    rule over the trajectory's snapshots.
    """
    tr = _traj(rec)
    w = tr.epsilon ** (dim - 2)
    if J.is_constant:
        lhs = w * J.amplitude * float(tr.by_mass[n - 1, m - 1])
    else:
        if tr.weighted is None:
            raise ValueError("spatial test functions need a fixed-step run with the test function set")
        lhs = w * float(tr.weighted[n - 1, m - 1])
    if len(tr.snapshots) < 2:
        raise InsufficientStatistics("need at least two snapshots for the time integral")
    if table is None:
        table = mollifier.self_convolution()
    ts = [s.time for s in tr.snapshots]
    if J.is_constant:
        vals = [J.amplitude * density_product_integral(s, n, m, mollifier, tr.epsilon, periodic, L, table)
                for s in tr.snapshots]
    else:
        vals = [_weighted_product(s, n, m, mollifier, tr.epsilon, J, periodic, L)
                for s in tr.snapshots]
    rhs = beta * _trapezoid(ts, vals)
    return lhs, rhs


def _weighted_product(snap, n, m, mollifier, eps, J, periodic, L, h=1 / 32):
    # int J f_n f_m on a grid covering J's support
    from .solvers import Grid
    side = 2 * J.radius
    k = max(8, int(math.ceil(side / h)))
    lo = tuple(c - J.radius for c in J.center)
    g = Grid((k,) * len(lo), side / k, "box", lo)
    fn = candidate_density(snap, n, mollifier, g, eps, periodic, L).values
    fm = fn if n == m else candidate_density(snap, m, mollifier, g, eps, periodic, L).values
    return float(np.sum(J(g.points()) * fn * fm) * g.cell_volume)


def stosszahlansatz_ratio(records, n: int, m: int, beta: float, mollifier: MollifierSpec,
                          J: TestFunctionSpec = TestFunctionSpec(), floor: float = 1e-12,
                          **kwargs) -> SzaResult:
    """Ensemble ratio ``mean(lhs) / mean(rhs)`` with a delta-method stderr.

    Raises ``InsufficientStatistics`` when the rhs is below ``floor``.
    """
    if not isinstance(records, (list, tuple)):
        records = [records]
    table = mollifier.self_convolution()
    pairs = [stosszahlansatz_terms(r, n, m, beta, mollifier, J, table=table, **kwargs)
             for r in records]
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    la, rb = math.fsum(a) / len(a), math.fsum(b) / len(b)
    if not rb > floor:
        raise InsufficientStatistics(f"rhs {rb:.3g} below floor {floor:g}")
    ratio = la / rb
    k = len(a)
    if k > 1:
        # delta method for a ratio of means
        va = a.var(ddof=1)
        vb = b.var(ddof=1)
        cab = np.cov(a, b, ddof=1)[0, 1]
        var = (va - 2 * ratio * cab + ratio ** 2 * vb) / (k * rb * rb)
        se = math.sqrt(max(var, 0.0))
    else:
        se = float("nan")
    return SzaResult(la, rb, ratio, se, k, pairs)


# ---------------------------------------------------------------------------
# pair correlation


@dataclass
class PairCorrelation:
    r: np.ndarray  # bin centres in units of eps
    g: np.ndarray
    stderr: np.ndarray
    edges: np.ndarray
    n_replicas: int

    def rank_correlation(self, reference) -> float:
        """Spearman correlation of ``g`` with ``reference(r)`` over the bins."""
        ref = np.asarray([reference(x) for x in self.r])
        return float(stats.spearmanr(self.g, ref).statistic)


def _pair_time(death: np.ndarray, t0: float, t1: float) -> float:
    """``int_{t0}^{t1} n(t)(n(t)-1)/2 dt`` for the alive count implied by death times."""
    d = np.sort(death)
    tot = 0.0
    cur = t0
    alive = int(np.sum(d > t0))
    for td in d[(d > t0) & (d < t1)]:
        tot += alive * (alive - 1) / 2 * (td - cur)
        cur = td
        alive -= 1
    tot += alive * (alive - 1) / 2 * (t1 - cur)
    return tot


def pair_correlation_profile(records, L: float = 1.0) -> PairCorrelation:
    """Pair correlation from the encounter engine's leaf-time histograms.

    Each replica's histogram holds the time integral, over its window, of the
    number of unordered alive pairs per separation bin. The Poisson reference
    for a bin is ``int n(n-1)/2 dt * shell volume / L^3``. The ensemble
    estimate is a ratio of sums; the stderr comes from the replica spread.
    """
    if not records:
        raise InsufficientStatistics("no records")
    r0 = records[0]
    if r0.g_hist is None or len(r0.g_hist) == 0:
        raise InsufficientStatistics("records carry no pair histogram")
    t0, t1 = r0.g_window
    if not t1 > t0:
        raise InsufficientStatistics("empty time window")
    nb_ = len(r0.g_hist)
    edges = np.linspace(0.0, r0.g_rmax, nb_ + 1)
    eps = r0.epsilon
    shell = 4.0 / 3.0 * math.pi * (edges[1:] ** 3 - edges[:-1] ** 3) * eps ** 3 / L ** 3
    obs = np.array([r.g_hist for r in records])
    ref = np.array([_pair_time(r.death_time, t0, t1) for r in records])[:, None] * shell[None, :]
    so, sr = obs.sum(axis=0), ref.sum(axis=0)
    if np.any(sr <= 0):
        raise InsufficientStatistics("no alive pairs in the window")
    g = so / sr
    k = len(records)
    if k > 1:
        resid = obs - g[None, :] * ref
        se = np.sqrt(resid.var(axis=0, ddof=1) * k) / sr
    else:
        se = np.full(nb_, np.nan)
    return PairCorrelation(0.5 * (edges[1:] + edges[:-1]), g, se, edges, k)


# ---------------------------------------------------------------------------
# concentration bound


def concentration_constant(params: ModelParams) -> float:
    """``K = Z^-1 sum_m0 l_m0 m0 d(m0)^{d/2} sup_{m>=m0} m^-1 d(m)^{-d/2}``.

    ``l_m0`` is the sup of the mass-``m0`` initial density.
    """
    d = params.dimension
    dd = params.diffusivity
    M = dd.size
    g = dd ** (-d / 2) / np.arange(1, M + 1)
    tail_sup = np.maximum.accumulate(g[::-1])[::-1]
    ell: dict = {}
    for p in params.initial_profiles:
        # profiles of one mass may overlap; the sum of sups bounds the sup of the sum
        ell[p.mass] = ell.get(p.mass, 0.0) + p.sup
    total = 0.0
    for m0, l in ell.items():
        k = min(m0, M) - 1
        total += l * m0 * dd[k] ** (d / 2) * tail_sup[k]
    return total / params.Z


def sobol_boxes(n_boxes: int, sides, seed: int = 0, dim: int = 3, L: float = 1.0):
    """Cube centres from a scrambled Sobol sequence, sides cycled from ``sides``."""
    eng = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(n_boxes, 2))))
    c = eng.random_base2(m)[:n_boxes] * L
    s = np.array([sides[k % len(sides)] for k in range(n_boxes)], dtype=float)
    return c, s


def dyadic_sides(N: int, lo: float = 0.1, hi: float = 10.0, dim: int = 3, L: float = 1.0):
    """Dyadic cube sides ``L 2^-j`` with ``N (side/L)^d`` in ``[lo, hi]``."""
    out = []
    for j in range(1, 30):
        s = L * 2.0 ** -j
        v = N * (s / L) ** dim
        if lo <= v <= hi:
            out.append(s)
    return out


@nb.njit(cache=True)
def _box_counts(pos, centres, sides, L):
    out = np.zeros(centres.shape[0], dtype=np.int64)
    for b in range(centres.shape[0]):
        h = 0.5 * sides[b]
        for i in range(pos.shape[0]):
            inside = True
            for k in range(pos.shape[1]):
                if abs(min_image(pos[i, k] - centres[b, k], L)) >= h:
                    inside = False
                    break
            if inside:
                out[b] += 1
    return out


@dataclass
class ConcentrationReport:
    k: int
    K: float
    N: int
    sides: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    violations: int
    passed: bool


def concentration_check(snapshots, k: int, params: ModelParams, centres, sides,
                        L: float = 1.0, n_sigma: float = 4.0) -> ConcentrationReport:
    """Compare ``P(|X_T cap A| = k)`` over replicas with ``(N K mu(A))^k``.

    ``snapshots`` holds one configuration per replica at the same time.
    """
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    centres = np.ascontiguousarray(centres, dtype=float)
    sides = np.ascontiguousarray(sides, dtype=float)
    counts = np.array([_box_counts(np.ascontiguousarray(_alive_view(s)[0]), centres, sides, L)
                       for s in snapshots])
    R = counts.shape[0]
    p = (counts == k).mean(axis=0)
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / R) / R)
    K = concentration_constant(params)
    mu = sides ** params.dimension
    bound = (params.N * K * mu) ** k
    viol = int(np.sum(p - n_sigma * se > bound))
    return ConcentrationReport(k, K, params.N, sides, p, se, bound, viol, viol == 0)


# ---------------------------------------------------------------------------
# collision budget


@dataclass
class BudgetResult:
    value: float
    stderr: float
    count_value: float
    count_stderr: float
    Z: float
    n_replicas: int

    @property
    def within_bound(self) -> bool:
        return self.value <= self.Z + 5 * self.stderr

    @property
    def estimators_agree(self) -> bool:
        se = math.hypot(self.stderr, self.count_stderr)
        return abs(self.value - self.count_value) <= 3 * se if se > 0 else self.value == self.count_value


def collision_budget(records, Z: float, dim: int = 3) -> BudgetResult:
    """``eps^{d-2} int sum_{i<j} alpha V_eps dt`` per trajectory, averaged.

    Alongside it, ``eps^{d-2}`` times the collision count, an unbiased
    estimator of the same mean integral.
    """
    if not isinstance(records, (list, tuple)):
        records = [records]
    tr = [_traj(r) for r in records]
    a = np.array([t.epsilon ** (dim - 2) * t.unordered for t in tr])
    c = np.array([t.epsilon ** (dim - 2) * t.n_events for t in tr])
    k = len(a)
    sa = a.std(ddof=1) / math.sqrt(k) if k > 1 else 0.0
    sc = c.std(ddof=1) / math.sqrt(k) if k > 1 else 0.0
    return BudgetResult(math.fsum(a) / k, sa, math.fsum(c) / k, sc, Z, k)
