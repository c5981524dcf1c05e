"""The flagship experiments, each a pure function of its arguments and seed."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import kernel as kr
from .analysis import (ConcentrationReport, MollifierSpec, _box_counts, collision_budget,
                       concentration_constant, dyadic_sides, pair_correlation_profile,
                       sobol_boxes, stosszahlansatz_terms)
from .ensemble import run_replicas
from .params import (DomainSpec, InitialProfile, ModelParams, PotentialSpec, canonical_potential,
                     diffusivity_power, torus_params)
from .rng import replica_seed
from .sim.encounter import EncounterPolicy
from .sim.run import AliveObserver, run
from .sim.stepper import StepPolicy
from .sim.torus import run_encounter, survival_curve
from . import solvers

CANONICAL_ALPHA = 8.0
CONVERGENCE_NS = (250, 500, 1000, 2000)
CURVE_TIMES = tuple(k / 8 for k in range(9))
SNAPSHOT_TIMES = tuple(k / 16 for k in range(17))
CONCENTRATION_TIMES = (0.0, 0.5)


def _grid_times(T: float, step: float):
    k = int(round(T / step))
    return tuple(i * step for i in range(k + 1))


# ---------------------------------------------------------------------------
# kernel cross-validation


@dataclass
class KernelCrossval:
    beta_fredholm: float
    beta_coarse: float
    envelope: float
    beta_mc: float
    mc_stderr: float
    u0_fredholm: float
    u0_mc: float
    u0_stderr: float
    beta_printed_c0: float
    u0_printed_c0: float
    seconds: float

    @property
    def combined_error(self) -> float:
        return 3 * self.mc_stderr + self.envelope

    @property
    def rel_diff(self) -> float:
        return abs(self.beta_fredholm - self.beta_mc) / self.beta_fredholm

    @property
    def passed(self) -> bool:
        return (abs(self.beta_fredholm - self.beta_mc) <= self.combined_error
                and self.rel_diff <= 0.02)

    @property
    def printed_c0_sigma(self) -> float:
        """Distance of the printed-constant prediction from MC, in MC stderrs."""
        return abs(self.beta_printed_c0 - self.beta_mc) / self.mc_stderr


def kernel_crossval(seed: int = 0, alpha: float = CANONICAL_ALPHA, dsum: float = 2.0,
                    n_paths: int = 100_000, resolution: int = 256) -> KernelCrossval:
    """Fredholm vs Monte Carlo on the canonical killing problem.

    Also solves with the alternative Green's constant so the two can be compared.
    """
    t0 = time.perf_counter()
    prob = kr.KillingProblem(canonical_potential(3), alpha / dsum, 3)
    fine = kr.solve_u_fredholm(prob, resolution)
    coarse = kr.solve_u_fredholm(prob, resolution // 2)
    bf = kr.beta_from_field(fine, alpha)
    bc = kr.beta_from_field(coarse, alpha)
    env = kr.richardson_envelope(bf, bc)
    bmc, se = kr.beta_mc(prob, alpha, n_paths=n_paths, seed=replica_seed(seed, 0))
    seconds = time.perf_counter() - t0
    # diagnostic only, outside the timed beta computation
    u0 = kr.estimate_u_mc(prob, np.zeros(3), n_paths=n_paths, seed=replica_seed(seed, 1))
    printed = kr.solve_u_fredholm(prob, resolution, c0=kr.green_constant(3, "printed"))
    return KernelCrossval(bf, bc, env, bmc, se, float(fine(0.0)[0]), u0.value, u0.stderr,
                          kr.beta_from_field(printed, alpha), float(printed(0.0)[0]), seconds)


def alpha_gap_scan(alphas=(2.0, 4.0, 6.0, 8.0, 10.0, 12.0)):
    """``(alpha, beta_recipe, beta_naive, ratio)`` for the unit-rate torus model."""
    out = []
    for a in alphas:
        b, _, bn = kr.torus_betas(a)
        out.append((a, b, bn, bn / b))
    return out


def choose_alpha(min_ratio: float = 1.25, preferred: float = CANONICAL_ALPHA) -> float:
    """Smallest scanned alpha with naive/recipe at least ``min_ratio``, else ``preferred``.

    The torus experiment uses ``preferred`` when it clears the gap, so the
    simulated problem is the one cross-validated by :func:`kernel_crossval`.
    """
    b, _, bn = kr.torus_betas(preferred)
    if bn / b >= min_ratio:
        return preferred
    for a, _, _, ratio in alpha_gap_scan(tuple(np.arange(2.0, 64.0, 2.0))):
        if ratio >= min_ratio:
            return a
    raise ValueError("no scanned alpha reaches the requested gap")


# ---------------------------------------------------------------------------
# torus convergence


def _torus_replica(seed, params, T, times, snap_times, beta, delta, centres, sides, policy,
                   table):
    rec = run_encounter(params, T, seed, policy=policy, snapshot_times=snap_times)
    mol = MollifierSpec(delta)
    lhs, rhs = stosszahlansatz_terms(rec, 1, 1, beta, mol, table=table)
    conc = {}
    for s in rec.snapshots:
        if any(abs(s.time - t) < 1e-12 for t in CONCENTRATION_TIMES):
            conc[round(s.time, 12)] = _box_counts(np.ascontiguousarray(s.positions), centres,
                                                   sides, 1.0)
    return {
        "survival": rec.survival(times),
        "tracer": rec.tracer_alive(times),
        "death_time": rec.death_time,
        "sza": (lhs, rhs),
        "budget": rec.epsilon * rec.acc_unordered,
        "events": len(rec.events),
        "conc": conc,
        "stats": rec.stats,
    }


@dataclass
class _ReplicaView:
    # minimal record interface for survival_curve
    N: int
    death_time: np.ndarray

    def survival(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([(self.death_time > ti).sum() for ti in t]) / self.N

    def tracer_alive(self, t, tracer: int = 0):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (self.death_time[tracer] > t).astype(int)


@dataclass
class TorusLevel:
    N: int
    curve: object
    sza_ratio: float
    sza_stderr: float
    sza_pairs: list
    seconds: float
    conc_counts: dict
    replica_seeds: list


@dataclass
class TorusConvergence:
    alpha: float
    beta_recipe: float
    beta_envelope: float
    beta_naive: float
    levels: dict
    centres: np.ndarray
    sides: np.ndarray
    times: tuple
    n_replicas: int
    seed: int

    def h_recipe(self, t):
        return 1.0 / (1.0 + self.beta_recipe * np.asarray(t, dtype=float))

    def h_naive(self, t):
        return 1.0 / (1.0 + self.beta_naive * np.asarray(t, dtype=float))

    def rows(self):
        """One row per (N, t): the comparison table."""
        out = []
        for N, lv in sorted(self.levels.items()):
            c = lv.curve
            for k, t in enumerate(c.t):
                out.append({"N": N, "t": float(t), "h_hat": float(c.h[k]),
                            "stderr": float(c.stderr[k]), "tracer": float(c.tracer[k]),
                            "tracer_stderr": float(c.tracer_stderr[k]),
                            "h_recipe": float(self.h_recipe(t)),
                            "h_naive": float(self.h_naive(t))})
        return out

    def max_error(self, N, ts=(0.25, 0.5, 1.0)):
        """``(max_t |h_N - h_recipe|, stderr at the maximizing t)``."""
        c = self.levels[N].curve
        best = (-1.0, 0.0)
        for t in ts:
            k = int(np.argmin(np.abs(c.t - t)))
            e = abs(c.h[k] - float(self.h_recipe(c.t[k])))
            if e > best[0]:
                best = (e, float(c.stderr[k]))
        return best


def _ratio_of_means(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    k = len(a)
    ma, mb = math.fsum(a) / k, math.fsum(b) / k
    r = ma / mb
    if k > 1:
        var = (a.var(ddof=1) - 2 * r * np.cov(a, b, ddof=1)[0, 1] + r * r * b.var(ddof=1)) / (k * mb * mb)
        return r, math.sqrt(max(var, 0.0))
    return r, float("nan")


def torus_convergence(alpha: float = CANONICAL_ALPHA, Ns=CONVERGENCE_NS, n_replicas: int = 128,
                      T: float = 1.0, seed: int = 0, workers: int | None = None,
                      times=CURVE_TIMES, snapshot_times=SNAPSHOT_TIMES, delta: float = 0.25,
                      n_boxes: int = 64, policy: EncounterPolicy = EncounterPolicy(),
                      progress=None) -> TorusConvergence:
    """Survival curves, Stosszahlansatz ratios and concentration counts per N.

    All N share the root seed; level ``N`` uses the root ``replica_seed(seed, N)``.
    """
    beta, env, bnaive = kr.torus_betas(alpha) if alpha > 0 else (0.0, 0.0, 0.0)
    times = tuple(t for t in times if t <= T + 1e-12)
    snaps = tuple(t for t in snapshot_times if t <= T + 1e-12)
    table = MollifierSpec(delta).self_convolution()
    levels = {}
    centres = sides = None
    for N in Ns:
        t0 = time.perf_counter()
        params = torus_params(N, alpha)
        sides_N = dyadic_sides(N)
        c, s = sobol_boxes(n_boxes, sides_N or [0.5 / N ** (1 / 3)], seed=seed)
        if N == max(Ns):
            centres, sides = c, s
        root = replica_seed(seed, N)
        res = run_replicas(_torus_replica, n_replicas, root, workers, params=params, T=T,
                           times=np.asarray(times), snap_times=snaps, beta=beta, delta=delta,
                           centres=c, sides=s, policy=policy, table=table)
        views = [_ReplicaView(N, r["death_time"]) for r in res]
        curve = survival_curve(views, times, alpha)
        pairs = [r["sza"] for r in res]
        if alpha > 0:
            ratio, rse = _ratio_of_means(pairs)
        else:
            ratio, rse = float("nan"), float("nan")
        conc = {t: np.array([r["conc"][round(t, 12)] for r in res])
                for t in CONCENTRATION_TIMES if t <= T}
        levels[N] = TorusLevel(N, curve, ratio, rse, pairs, time.perf_counter() - t0,
                               {"centres": c, "sides": s, "counts": conc},
                               [replica_seed(root, k) for k in range(n_replicas)])
        if progress:
            progress(N, levels[N])
    return TorusConvergence(alpha, beta, env, bnaive, levels, centres, sides, tuple(times),
                            n_replicas, seed)


def concentration_from_counts(level: TorusLevel, params: ModelParams, k: int, t: float,
                              n_sigma: float = 4.0):
    """Concentration report built from per-replica box counts."""
    counts = level.conc_counts["counts"][t]
    sides = level.conc_counts["sides"]
    R = counts.shape[0]
    p = (counts == k).mean(axis=0)
    se = np.sqrt(np.maximum(p * (1 - p), 1.0 / R) / R)
    K = concentration_constant(params)
    bound = (params.N * K * sides ** params.dimension) ** k
    viol = int(np.sum(p - n_sigma * se > bound))
    return ConcentrationReport(k, K, params.N, sides, p, se, bound, viol, viol == 0)


# ---------------------------------------------------------------------------
# pair correlation


def pair_correlation_experiment(alpha: float = CANONICAL_ALPHA, N: int = 250, n_replicas: int = 64,
                                T: float = 0.5, window=(0.25, 0.5), g_rmax: float = 9.0,
                                g_bins: int = 36, seed: int = 0, workers: int | None = None,
                                policy: EncounterPolicy = EncounterPolicy()):
    """``(PairCorrelation, u field)`` from torus runs with the pair histogram on."""
    params = torus_params(N, alpha)
    recs = run_replicas(run_encounter, n_replicas, replica_seed(seed, N), workers, params=params,
                        T=T, policy=policy, g_rmax=g_rmax, g_bins=g_bins, g_window=tuple(window))
    prof = pair_correlation_profile(recs)
    field_ = kr.solve_u_fredholm(kr.KillingProblem.torus(alpha)) if alpha > 0 else None
    return prof, field_


# ---------------------------------------------------------------------------
# collision budget ensembles


@dataclass
class BudgetRun:
    label: str
    result: object


def budget_ensembles(seed: int = 0, n_replicas: int = 64, workers: int | None = None):
    """Two coagulation-mode ensembles: the torus engine and the fixed-step stepper.

    The second has mass-dependent diffusivity ``d(n) = n^-1/2`` and two
    initial masses in free space.
    """
    out = []
    p1 = torus_params(500, CANONICAL_ALPHA)
    recs = run_replicas(run_encounter, n_replicas, replica_seed(seed, 1), workers, params=p1,
                        T=1.0, annihilation=False)
    out.append(BudgetRun("torus N=500 alpha=8", collision_budget(recs, p1.Z)))
    p2 = free_space_params(N=50, alpha=2.0)
    recs2 = run_replicas(_free_run, n_replicas, replica_seed(seed, 2), workers, params=p2, T=0.5)
    out.append(BudgetRun("free space N=50 alpha=2 two masses", collision_budget(recs2, p2.Z)))
    return out


def free_space_params(N: int = 50, alpha: float = 2.0, M: int = 64) -> ModelParams:
    profs = (InitialProfile(1, "box", 2.0 / 3.0, (0.0,) * 3, (1.0,) * 3),
             InitialProfile(2, "box", 1.0 / 3.0, (0.0,) * 3, (1.0,) * 3))
    return ModelParams(3, diffusivity_power(1.0, -0.5, M), np.full((M, M), alpha),
                       canonical_potential(3), profs, N)


def _free_run(seed, params, T, policy: StepPolicy = StepPolicy()):
    return run(params, DomainSpec("free_space"), T, policy, [AliveObserver([T])], seed=seed)


# ---------------------------------------------------------------------------
# uniform killing bounds


@dataclass
class KillingSuite:
    n_potentials: int
    range_ok: int
    exterior_ok: int
    n_probes: int
    worst_exterior: float
    monotone_ok: int
    n_pairs: int
    worst_monotone: float
    seconds: float

    @property
    def passed(self) -> bool:
        return (self.range_ok == self.n_potentials and self.exterior_ok == self.n_potentials
                and self.monotone_ok == self.n_pairs)


def random_potential(rng: np.random.Generator, v_lo: float = 0.1, v_hi: float = 100.0,
                     knots: int = 8) -> PotentialSpec:
    """Random nonnegative radial profile on a ball of radius ``<= 1``."""
    R = float(rng.uniform(0.3, 1.0))
    r = np.linspace(0.0, R, knots)
    v = rng.uniform(0.0, 1.0, knots)
    v[-1] = 0.0
    v = v / max(v.max(), 1e-12) * float(rng.uniform(v_lo, v_hi))
    return PotentialSpec("tabulated_radial", v0=1.0, R=R, radii=tuple(r), values=tuple(v))


def killing_bounds_suite(n_potentials: int = 50, n_probes: int = 20, n_pairs: int = 10,
                         seed: int = 0, resolution: int = 128) -> KillingSuite:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    range_ok = ext_ok = 0
    worst_ext = -math.inf
    for _ in range(n_potentials):
        pot = random_potential(rng)
        f = kr.solve_u_fredholm(kr.KillingProblem(pot, 1.0, 3), resolution)
        u = np.asarray(f.values)
        range_ok += bool(np.all(u >= -1e-6) and np.all(u <= 1 + 1e-6))
        r = rng.uniform(1.0, 10.0, n_probes)
        ur = f(r)
        excess = float(np.max(ur - r ** -1.0))
        worst_ext = max(worst_ext, excess)
        ext_ok += excess <= 1e-6
    mono_ok = 0
    worst_mono = -math.inf
    for _ in range(n_pairs):
        a = random_potential(rng)
        extra = rng.uniform(0.0, 1.0, len(a.values))
        extra[-1] = 0.0
        b = PotentialSpec("tabulated_radial", v0=1.0, R=a.R, radii=a.radii,
                          values=tuple(np.asarray(a.values) + extra * max(a.values)))
        fa = kr.solve_u_fredholm(kr.KillingProblem(a, 1.0, 3), resolution)
        fb = kr.solve_u_fredholm(kr.KillingProblem(b, 1.0, 3), resolution)
        probe = np.concatenate([np.asarray(fa.radii), rng.uniform(0.0, 5.0, n_probes)])
        d = fa(probe) - fb(probe)
        worst_mono = max(worst_mono, float(d.max()))
        mono_ok += bool(d.max() <= 1e-9)
    return KillingSuite(n_potentials, range_ok, ext_ok, n_potentials * n_probes, worst_ext,
                        mono_ok, n_pairs, worst_mono, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# solver closed forms


@dataclass
class SolverChecks:
    torus_ode_error: float
    heat_error: float
    uniform_pde_ode_error: float
    uniformity_spread: float
    cross_integrator_error: float
    mass_defect: float
    leakage: float
    domination: object
    normal_ratio_ok: bool

    @property
    def passed(self) -> bool:
        return (self.torus_ode_error <= 1e-10 and self.heat_error <= 1e-6
                and self.uniform_pde_ode_error <= 1e-8 and self.uniformity_spread <= 1e-9
                and self.cross_integrator_error <= 1e-6 and self.mass_defect <= 1e-6
                and self.domination.passed and self.normal_ratio_ok)


def pde_vs_ode(beta: float | None = None, fast: bool = False) -> SolverChecks:
    """Closed-form and cross-solver checks for the deterministic solvers."""
    if beta is None:
        beta = kr.torus_betas(CANONICAL_ALPHA)[0]
    surv = solvers.solve_torus_survival_ode(beta, 4.0)
    # pure heat flow, one Fourier mode
    n = 1024
    g = solvers.Grid((n, 2, 2), 1.0 / n)
    X = g.coords()[0]
    st = solvers.PdeState(g, (1.0 + np.sin(2 * np.pi * X))[None].copy())
    out = solvers.solve_pde(st, 0.0, [1.0], 0.1, g.h ** 2 / 6, save_times=[0.1])[-1]
    exact = 1.0 + np.exp(-4 * np.pi ** 2 * 0.1) * np.sin(2 * np.pi * X)
    heat_err = float(np.max(np.abs(out.f[0] - exact)))
    # uniform torus PDE against the ODE
    gu = solvers.Grid((8, 8, 8), 1.0 / 8)
    pu = solvers.solve_pde(solvers.uniform_state(gu, [1.0]), beta, [1.0], 1.0, gu.h ** 2 / 6)[-1]
    ode = solvers.solve_homogeneous_ode(beta, [1.0], 1.0, M=1, t_eval=[1.0])
    pde_ode = float(np.max(np.abs(pu.f[0] - ode.f[-1, 0])))
    spread = float(np.ptp(pu.f[0]))
    # constant kernel: adaptive vs fixed-step RK4
    te = np.linspace(0.0, 4.0, 17)
    M = 256
    ad = solvers.solve_homogeneous_ode(1.0, [1.0], 4.0, M=M, t_eval=te)
    rk = solvers.solve_homogeneous_ode_rk4(1.0, [1.0], 4.0, M=64 if fast else M,
                                           dt=1e-3 if fast else 1e-4, t_eval=te)
    cross = float(np.max(np.abs(ad.f[:, :8] - rk.f[:, :8])))
    defect = float(np.max(np.abs(ad.total_mass() + ad.leakage - 1.0)))
    # two-mass heat domination run on the torus
    dom = domination_run()
    return SolverChecks(surv.max_error, heat_err, pde_ode, spread, cross, defect,
                        float(ad.leakage[-1]), dom, solvers.normal_ratio_check(diffusivity_power(1.0, -0.5, 16)))


def domination_run(n: int = 32, T: float = 0.05):
    """Masses 1 and 2 with ``d = (1, 1/2)`` and ``beta(1,1) > 0`` from a Gaussian bump."""
    g = solvers.Grid((n, n, n), 1.0 / n)
    X, Y, Zc = g.coords()
    r2 = (X - 0.5) ** 2 + (Y - 0.5) ** 2 + (Zc - 0.5) ** 2
    f = np.zeros((2,) + g.shape)
    f[0] = 20.0 * np.exp(-r2 / (2 * 0.08 ** 2))
    st = solvers.PdeState(g, f)
    dvec = np.array([1.0, 0.5])
    B = np.array([[5.0, 5.0], [5.0, 5.0]])
    traj = solvers.solve_pde(st, B, dvec, T, g.h ** 2 / 6, save_times=np.linspace(0, T, 6))
    return solvers.heat_domination_check(traj, dvec)


# ---------------------------------------------------------------------------
# simulator micro-oracles


def _lattice(n: int, spacing: float, dim: int = 3) -> np.ndarray:
    side = int(math.ceil(n ** (1.0 / dim)))
    g = np.indices((side,) * dim).reshape(dim, -1).T[:n]
    return g * spacing


def _micro_params(N: int, diffusivity, alpha: float) -> ModelParams:
    return ModelParams(3, np.asarray(diffusivity, dtype=float), np.full((2, 2), alpha),
                       canonical_potential(3), (InitialProfile(1),), N)


@dataclass
class FreeMotionCheck:
    mass: int
    expected: float
    measured: float
    stderr: float
    n: int

    @property
    def z(self) -> float:
        return abs(self.measured - self.expected) / self.stderr

    @property
    def passed(self) -> bool:
        return self.z <= 4.0


def free_motion_check(n: int = 10_000, n_steps: int = 200, seed: int = 0,
                      diffusivity=(1.0, 0.5)) -> list:
    """Per-coordinate displacement variance against ``2 d(m) T`` for masses 1 and 2.

    ``n`` non-interacting particles (alpha = 0), half of each mass.
    """
    params = _micro_params(n, diffusivity, 0.0)
    from .sim.state import SimState
    from .sim.stepper import Stepper
    eps = params.epsilon
    pos0 = _lattice(n, 4 * eps)
    mass = np.where(np.arange(n) % 2 == 0, 1, 2)
    st = SimState.fresh(pos0, mass, seed=seed)
    stepper = Stepper(params)
    stepper.advance(st, n_steps)
    T = st.time
    out = []
    for m in (1, 2):
        sel = mass == m
        disp = (st.positions[sel] - pos0[sel]).ravel()
        k = disp.size
        expected = 2.0 * params.d_of(m) * T
        out.append(FreeMotionCheck(m, expected, float(np.mean(disp ** 2)),
                                   expected * math.sqrt(2.0 / k), k))
    return out


@dataclass
class FrozenPairCheck:
    rate: float
    n_pairs: int
    ks_pvalue: float
    survivor_heavy: int
    survivor_expected: float

    @property
    def survivor_z(self) -> float:
        p = self.survivor_expected
        return abs(self.survivor_heavy - p * self.n_pairs) / math.sqrt(self.n_pairs * p * (1 - p))

    @property
    def passed(self) -> bool:
        return self.ks_pvalue >= 0.01 and self.survivor_z <= 4.0


def frozen_pair_check(n_pairs: int = 10_000, alpha: float = 1.0, sep: float = 0.5,
                      c_dt: float = 0.01, seed: int = 0, chunk: int = 200) -> FrozenPairCheck:
    """Immobile (1, 2) pairs at separation ``sep * eps``, far apart from each other.

    Collision times should be exponential with rate ``alpha V(sep) / eps^2`` and
    the heavier particle should survive with probability 2/3.
    """
    from scipy import stats
    from .sim.state import SimState
    from .sim.stepper import Stepper
    params = _micro_params(2 * n_pairs, (0.0, 0.0), alpha)
    eps = params.epsilon
    centres = _lattice(n_pairs, 4 * eps)
    pos = np.empty((2 * n_pairs, 3))
    pos[0::2] = centres
    pos[1::2] = centres
    pos[1::2, 0] += sep * eps
    mass = np.tile([1, 2], n_pairs)
    st = SimState.fresh(pos, mass, seed=seed)
    stepper = Stepper(params, StepPolicy(c_dt=c_dt))
    while len(st.events) < n_pairs:
        stepper.advance(st, chunk)
    rate = alpha * float(params.potential.radial(sep)) / eps ** 2
    times = np.array([e.time for e in st.events])
    p = stats.kstest(times, "expon", args=(0.0, 1.0 / rate)).pvalue
    # odd ids carry mass 2
    heavy = sum(1 for e in st.events if e.survivor % 2 == 1)
    return FrozenPairCheck(rate, n_pairs, float(p), heavy, 2.0 / 3.0)


def cell_list_check(n_trials: int = 50, seed: int = 0) -> int:
    """Number of random configurations where cell-list and brute-force pair sets differ."""
    from .sim.cells import brute_force_pairs, CellIndex
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_trials):
        n = int(rng.integers(2, 600))
        periodic = bool(rng.integers(0, 2))
        L = 1.0
        pos = rng.uniform(0, L, (n, 3))
        alive = rng.uniform(size=n) < 0.9
        rcut = float(rng.uniform(0.01, 0.2))
        a = CellIndex(pos, alive, rcut, periodic, L).pairs(rcut)
        b = brute_force_pairs(pos, alive, rcut, periodic, L)
        bad += not np.array_equal(a, b)
    return bad


def determinism_check(seed: int = 0, n_replicas: int = 3) -> bool:
    """Same seed twice, and one vs two workers, give identical records."""
    p = torus_params(200, CANONICAL_ALPHA)
    kw = dict(params=p, T=0.0625, snapshot_times=(0.0625,))
    a = run_replicas(run_encounter, n_replicas, seed, 1, **kw)
    b = run_replicas(run_encounter, n_replicas, seed, 2, **kw)
    fp = dict(params=free_space_params(20, 2.0), T=0.01)
    c = run_replicas(_free_run, 2, seed, 1, **fp)
    d = run_replicas(_free_run, 2, seed, 1, **fp)
    same = all(np.array_equal(x.death_time, y.death_time)
               and np.array_equal(x.snapshots[-1].positions, y.snapshots[-1].positions)
               for x, y in zip(a, b))
    same &= all(np.array_equal(x.final.positions, y.final.positions) and x.events == y.events
                for x, y in zip(c, d))
    return bool(same)


@dataclass
class MicroOracles:
    free_motion: list
    frozen: FrozenPairCheck
    cell_mismatches: int
    deterministic: bool

    @property
    def passed(self) -> bool:
        return (all(f.passed for f in self.free_motion) and self.frozen.passed
                and self.cell_mismatches == 0 and self.deterministic)


def micro_oracles(seed: int = 0, n: int = 10_000) -> MicroOracles:
    return MicroOracles(free_motion_check(n, seed=replica_seed(seed, 0)),
                        frozen_pair_check(n, seed=replica_seed(seed, 1)),
                        cell_list_check(seed=seed), determinism_check(seed))
