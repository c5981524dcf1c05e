"""Deterministic solvers: the discrete coagulation-diffusion PDE, the
homogeneous coagulation ODE and the torus survival ODE.

The PDE step is Strang-split. Diffusion is advanced by the exact exponential
of the second-order central Laplacian (FFT on the torus, DCT-II under
zero-flux walls), which is unconditionally stable and leaves the zero mode,
hence the total mass, untouched. The reaction is classical RK4 with
substeps chosen so that ``dt_sub * max loss rate <= react_cfl``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.integrate import solve_ivp

from .errors import StepSizeError, StiffnessError
from .kernel import KernelTable


def _beta_matrix(kernel, M: int) -> np.ndarray:
    B = kernel.beta if isinstance(kernel, KernelTable) else np.asarray(kernel, dtype=float)
    if B.ndim == 0:
        return np.full((M, M), float(B))
    if B.shape[0] < M:
        raise ValueError(f"kernel covers masses <= {B.shape[0]}, need {M}")
    return np.ascontiguousarray(B[:M, :M])


def coagulation_rates(B: np.ndarray, f: np.ndarray):
    """Gain, loss and leakage for concentrations ``f`` of shape ``(M, ...)``.

    Gain into ``n > M`` is dropped and returned as the mass leakage rate
    ``sum_{n>M} n * gain_n``; the loss term keeps every partner ``m <= M``.
    """
    M = f.shape[0]
    if f.ndim == 1:
        P = 0.5 * B * np.outer(f, f)
        s = _sum_index(M)
        tot = np.bincount(s.ravel(), weights=P.ravel(), minlength=2 * M)
        gain = tot[:M].copy()
        leak = float(np.dot(np.arange(M + 1, 2 * M + 1), tot[M:2 * M]))
    else:
        gain = np.zeros_like(f)
        leak = np.zeros(f.shape[1:])
        for m in range(1, M + 1):
            prod = 0.5 * B[m - 1].reshape((-1,) + (1,) * (f.ndim - 1)) * f[m - 1] * f
            hi = M - m  # partners k with m + k <= M
            gain[m:] += prod[:hi]
            for k in range(hi + 1, M + 1):
                leak += (m + k) * prod[k - 1]
    loss = f * np.tensordot(B, f, axes=(1, 0))
    return gain, loss, leak


_SUM_CACHE: dict = {}


def _sum_index(M):
    # slot of mass (i + 1) + (j + 1) in a 0-based per-mass array
    if M not in _SUM_CACHE:
        i = np.arange(M)
        _SUM_CACHE[M] = i[:, None] + i[None, :] + 1
    return _SUM_CACHE[M]


# ---------------------------------------------------------------------------
# PDE


@dataclass
class Grid:
    """Uniform cell-centred grid on ``[lo, lo + n*h)`` along each axis."""

    shape: tuple
    h: float
    kind: str = "torus"
    lo: tuple = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if self.kind not in ("torus", "box"):
            raise ValueError("grid kind must be 'torus' or 'box'")
        if self.lo is None:
            self.lo = (0.0,) * len(self.shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def coords(self):
        axes = [self.lo[k] + (np.arange(s) + 0.5) * self.h for k, s in enumerate(self.shape)]
        return np.meshgrid(*axes, indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def integrate(self, values) -> float:
        return float(np.sum(values) * self.cell_volume)

    def laplacian_symbol(self) -> np.ndarray:
        """Eigenvalues of the central-difference Laplacian for this boundary."""
        lam = np.zeros(self.shape)
        for k, n in enumerate(self.shape):
            j = np.arange(n)
            if self.kind == "torus":
                s = -4.0 / self.h ** 2 * np.sin(np.pi * j / n) ** 2
            else:
                s = -4.0 / self.h ** 2 * np.sin(np.pi * j / (2 * n)) ** 2
            sh = [1] * self.dim
            sh[k] = n
            lam = lam + s.reshape(sh)
        return lam


@dataclass
class PdeState:
    grid: Grid
    f: np.ndarray
    t: float = 0.0
    leakage: float = 0.0

    @property
    def M(self) -> int:
        return self.f.shape[0]

    def total_mass(self) -> float:
        n = np.arange(1, self.M + 1).reshape((-1,) + (1,) * self.grid.dim)
        return self.grid.integrate(n * self.f)

    def copy(self) -> "PdeState":
        return PdeState(self.grid, self.f.copy(), self.t, self.leakage)


def heat_propagate(grid: Grid, g: np.ndarray, D: float, t: float) -> np.ndarray:
    """Exact semi-discrete heat flow ``exp(t D Lap_h) g``."""
    if t == 0 or D == 0:
        return g.copy()
    mult = np.exp(D * t * grid.laplacian_symbol())
    if grid.kind == "torus":
        return np.real(sfft.ifftn(sfft.fftn(g) * mult))
    return sfft.idctn(sfft.dctn(g, type=2, norm="ortho") * mult, type=2, norm="ortho")


def _diffuse(state: PdeState, dvec: np.ndarray, t: float):
    for n in range(state.M):
        state.f[n] = heat_propagate(state.grid, state.f[n], float(dvec[n]), t)


def _react(state: PdeState, B: np.ndarray, dt: float, react_cfl: float):
    f = state.f
    t_done = 0.0
    while t_done < dt * (1 - 1e-14):
        rate = float(np.max(np.tensordot(B, f, axes=(1, 0)))) if f.size else 0.0
        h = dt - t_done
        if rate > 0:
            h = min(h, react_cfl / rate)

        def rhs(y):
            g, lo, lk = coagulation_rates(B, y)
            return g - lo, lk

        k1, l1 = rhs(f)
        k2, l2 = rhs(f + 0.5 * h * k1)
        k3, l3 = rhs(f + 0.5 * h * k2)
        k4, l4 = rhs(f + h * k3)
        f = f + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        state.leakage += state.grid.integrate(h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4))
        t_done += h
    state.f = f


def _clip(state: PdeState, tol: float = 1e-12):
    lo = float(state.f.min()) if state.f.size else 0.0
    if lo < -tol:
        raise StepSizeError(f"negative density {lo:.3g}; reduce the time step")
    np.maximum(state.f, 0.0, out=state.f)


def step_pde(state: PdeState, kernel, diffusivity, dt: float, react_cfl: float = 0.1) -> PdeState:
    """Advance one Strang step ``D(dt/2) R(dt) D(dt/2)``; returns a new state."""
    M = state.M
    dvec = np.asarray(diffusivity, dtype=float)
    dvec = np.concatenate([dvec, np.full(max(0, M - dvec.size), dvec[-1])])[:M]
    limit = state.grid.h ** 2 / (2 * state.grid.dim * dvec.max()) if dvec.max() > 0 else math.inf
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:g} exceeds the CFL bound h^2/(2 d max d(n)) = {limit:g}")
    B = _beta_matrix(kernel, M)
    out = state.copy()
    _diffuse(out, dvec, 0.5 * dt)
    _react(out, B, dt, react_cfl)
    _diffuse(out, dvec, 0.5 * dt)
    _clip(out)
    out.t = state.t + dt
    return out


def solve_pde(state: PdeState, kernel, diffusivity, T: float, dt: float,
              save_times=(), react_cfl: float = 0.1) -> list:
    """Integrate to ``T`` in equal steps no longer than ``dt``; returns saved states."""
    n = max(1, int(math.ceil(T / dt - 1e-12)))
    step = T / n
    save = sorted(set(float(s) for s in save_times)) or [n * step]
    cur = state.copy()
    out = []
    k = 0
    while k < len(save) and save[k] <= cur.t + 1e-12:
        out.append(cur.copy())
        k += 1
    for _ in range(n):
        cur = step_pde(cur, kernel, diffusivity, step, react_cfl)
        while k < len(save) and save[k] <= cur.t + 1e-12:
            out.append(cur.copy())
            k += 1
    return out


def uniform_state(grid: Grid, values, t: float = 0.0) -> PdeState:
    values = np.asarray(values, dtype=float)
    f = np.broadcast_to(values.reshape((-1,) + (1,) * grid.dim), (values.size,) + grid.shape).copy()
    return PdeState(grid, f, t)


# ---------------------------------------------------------------------------
# ODEs


@dataclass
class OdeTrajectory:
    t: np.ndarray
    f: np.ndarray  # shape (len(t), M)
    leakage: np.ndarray
    method: str

    @property
    def M(self) -> int:
        return self.f.shape[1]

    def total_mass(self) -> np.ndarray:
        return self.f @ np.arange(1, self.M + 1)


def _ode_rhs(B):
    def rhs(_t, y):
        f = y[:-1]
        gain, loss, leak = coagulation_rates(B, f)
        return np.concatenate([gain - loss, [leak]])
    return rhs


def _pad_init(init, M):
    f0 = np.zeros(M)
    init = np.asarray(init, dtype=float)
    if init.size > M or np.any(init < 0):
        raise ValueError("initial data must be nonnegative and supported on n <= M")
    f0[: init.size] = init
    return f0


def solve_homogeneous_ode(kernel, init, T: float, M: int = 256, t_eval=None,
                          rtol: float = 1e-11, atol: float = 1e-14) -> OdeTrajectory:
    """Adaptive DOP853 integration of the truncated coagulation ODE.

    An extra component integrates the mass leaking past ``M``.
    """
    B = _beta_matrix(kernel, M)
    y0 = np.concatenate([_pad_init(init, M), [0.0]])
    t_eval = np.linspace(0, T, 41) if t_eval is None else np.asarray(t_eval, dtype=float)
    sol = solve_ivp(_ode_rhs(B), (0.0, T), y0, method="DOP853", t_eval=t_eval,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise StiffnessError(f"adaptive integrator failed: {sol.message}")
    return OdeTrajectory(sol.t, sol.y[:-1].T, sol.y[-1], "dop853")


def solve_homogeneous_ode_rk4(kernel, init, T: float, M: int = 256, dt: float = 1e-4,
                              t_eval=None) -> OdeTrajectory:
    """Fixed-step RK4, the independent cross-check for the adaptive solver."""
    B = _beta_matrix(kernel, M)
    rhs = _ode_rhs(B)
    t_eval = np.linspace(0, T, 41) if t_eval is None else np.asarray(t_eval, dtype=float)
    y = np.concatenate([_pad_init(init, M), [0.0]])
    n = int(round(T / dt))
    h = T / n
    idx = np.rint(t_eval / h).astype(int)
    out = np.empty((len(t_eval), M + 1))
    pos = 0
    for i in range(n + 1):
        while pos < len(idx) and idx[pos] == i:
            out[pos] = y
            pos += 1
        if i == n:
            break
        k1 = rhs(0, y)
        k2 = rhs(0, y + 0.5 * h * k1)
        k3 = rhs(0, y + 0.5 * h * k2)
        k4 = rhs(0, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return OdeTrajectory(t_eval, out[:, :-1], out[:, -1], "rk4")


@dataclass
class SurvivalSolution:
    t: np.ndarray
    integrated: np.ndarray
    closed_form: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(np.abs(self.integrated - self.closed_form)))


def solve_torus_survival_ode(beta: float, T: float, t_eval=None) -> SurvivalSolution:
    """``h' = -beta h^2``, ``h(0) = 1``, integrated and in closed form ``1/(1 + beta t)``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    t = np.linspace(0, T, 101) if t_eval is None else np.asarray(t_eval, dtype=float)
    sol = solve_ivp(lambda _t, y: -beta * y * y, (0.0, float(max(T, t.max()))), [1.0],
                    method="DOP853", t_eval=t, rtol=1e-13, atol=1e-16)
    if not sol.success:
        raise StiffnessError(sol.message)
    return SurvivalSolution(t, sol.y[0], 1.0 / (1.0 + beta * t))


# ---------------------------------------------------------------------------
# domination diagnostics


@dataclass
class DominationReport:
    passed: bool
    max_excess: float
    tolerance: float
    min_slack: float
    times: list = field(default_factory=list)


def heat_domination_check(trajectory, diffusivity, tol_factor: float = 10.0) -> DominationReport:
    """Check ``sum_n n d(n)^{d/2} f_n <= d(1)^{d/2} u`` along a PDE trajectory.

    ``u`` is the discrete heat flow at rate ``d(1)`` from ``sum_n n f_n(., 0)``.
    The tolerance is ``tol_factor * h^2 * max|Lap_h^2 u_0|``, a proxy for the
    fourth-derivative size of the comparison solution.
    """
    first = trajectory[0]
    g = first.grid
    M = first.M
    dvec = np.asarray(diffusivity, dtype=float)
    dvec = np.concatenate([dvec, np.full(max(0, M - dvec.size), dvec[-1])])[:M]
    n = np.arange(1, M + 1).reshape((-1,) + (1,) * g.dim)
    w = (n * dvec.reshape(n.shape) ** (g.dim / 2))
    u0 = np.sum(n * first.f, axis=0)
    sym = g.laplacian_symbol()
    if g.kind == "torus":
        bih = np.real(sfft.ifftn(sfft.fftn(u0) * sym * sym))
    else:
        bih = sfft.idctn(sfft.dctn(u0, type=2, norm="ortho") * sym * sym, type=2, norm="ortho")
    tol = tol_factor * g.h ** 2 * float(np.max(np.abs(bih)))
    worst = -math.inf
    slack = math.inf
    times = []
    for st in trajectory:
        lhs = np.sum(w * st.f, axis=0)
        rhs = dvec[0] ** (g.dim / 2) * heat_propagate(g, u0, float(dvec[0]), st.t - first.t)
        ex = float(np.max(lhs - rhs))
        worst = max(worst, ex)
        slack = min(slack, float(np.min(rhs - lhs)))
        times.append((st.t, ex))
    return DominationReport(worst <= tol + 1e-12, worst, tol, slack, times)


def normal_density(y, var: float) -> np.ndarray:
    """Density of ``N(0, var I)`` at the rows of ``y``."""
    y = np.atleast_2d(y)
    d = y.shape[1]
    return np.exp(-np.sum(y * y, axis=1) / (2 * var)) / (2 * math.pi * var) ** (d / 2)


def normal_ratio_check(diffusivity, n_pairs: int = 10, n_points: int = 100, seed: int = 0,
                       dim: int = 3) -> bool:
    """For ``m' > m``: ``nu_{2 d(m') s} / nu_{2 d(m) s} <= (d(m)/d(m'))^{d/2}`` at random points."""
    rng = np.random.default_rng(seed)
    dvec = np.asarray(diffusivity, dtype=float)
    ok = True
    for _ in range(n_pairs):
        m, mp = sorted(rng.choice(np.arange(1, dvec.size + 1), size=2, replace=False))
        s = rng.uniform(0.01, 2.0)
        y = rng.normal(scale=3.0 * math.sqrt(2 * dvec[m - 1] * s), size=(n_points, dim))
        ratio = normal_density(y, 2 * dvec[mp - 1] * s) / normal_density(y, 2 * dvec[m - 1] * s)
        ok &= bool(np.all(ratio <= (dvec[m - 1] / dvec[mp - 1]) ** (dim / 2) * (1 + 1e-12)))
    return ok
