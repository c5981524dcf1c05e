"""Pair-collision probability ``u`` and the coagulation kernel ``beta``.

``u`` solves ``-Delta u = W (1 - u)`` with ``u -> 0`` at infinity. It is the
probability that a Brownian motion with generator ``Delta`` started at ``x``
is killed at rate ``W``. Two independent routes are provided:

* a Nystrom solve of the equivalent linear integral equation
  ``u + c0 * int W u |x-y|^(2-d) = c0 * int W |x-y|^(2-d)``, on a radial
  grid for radial ``W`` or on a tensor grid in general;
* Monte Carlo over killed Brownian paths.

``beta(n, m) = alpha(n, m) * int V (1 - u_{n,m})`` with
``W = alpha(n, m) / (d(n) + d(m)) * V``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import linalg

from . import rng
from .errors import ResolutionError, UnsupportedDimensionError
from .params import ModelParams, PotentialSpec, sphere_area, unit_ball_volume


def green_constant(d: int, convention: str = "standard") -> float:
    """Constant ``c0`` with ``c0 |x|^(2-d)`` the Green's function of ``-Delta``.

    ``"standard"`` is ``1 / (d (d-2) omega_d)``. ``"printed"`` uses
    ``d (d-1) omega_d`` instead, kept only so the two can be compared.
    """
    w = unit_ball_volume(d)
    if convention == "standard":
        return 1.0 / (d * (d - 2) * w)
    if convention == "printed":
        return 1.0 / (d * (d - 1) * w)
    raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class KillingProblem:
    """Killing field ``W = coupling * V``."""

    potential: PotentialSpec
    coupling: float
    dim: int = 3

    def __post_init__(self):
        if self.dim < 3:
            raise UnsupportedDimensionError("killed-BM recipe needs d >= 3")
        if self.coupling < 0:
            raise ValueError("coupling must be >= 0")

    @classmethod
    def for_pair(cls, n: int, m: int, params: ModelParams) -> "KillingProblem":
        a = float(params.alpha_of(n, m))
        dsum = float(params.d_of(n) + params.d_of(m))
        return cls(params.potential, a / dsum, params.dimension)

    @classmethod
    def torus(cls, alpha: float, potential: PotentialSpec | None = None) -> "KillingProblem":
        # -2 Delta u = alpha V (1 - u): two unit-rate motions
        from .params import canonical_potential
        return cls(potential or canonical_potential(3), alpha / 2.0, 3)

    @property
    def R(self) -> float:
        return self.potential.R

    def W_radial(self, r):
        return self.coupling * self.potential.radial(r)

    def W(self, x):
        return self.coupling * self.potential(x)

    @property
    def is_zero(self) -> bool:
        return self.coupling == 0.0 or self.potential.sup_norm == 0.0


@dataclass
class UField:
    """``u`` sampled at quadrature nodes.

    Radial fields keep ``radii`` (shape (n,)); tensor fields keep ``nodes``
    (shape (n, d)). ``weights`` integrate a function of the nodes over the
    support against Lebesgue measure.
    """

    values: np.ndarray
    method: str
    resolution: int
    c0: float
    problem: KillingProblem
    radii: np.ndarray | None = None
    nodes: np.ndarray | None = None
    weights: np.ndarray | None = None
    stderr: np.ndarray | None = None
    _moment: float = field(default=0.0, repr=False)

    @property
    def radial(self) -> bool:
        return self.radii is not None

    def __call__(self, r):
        """Evaluate a radial field at radius ``r`` (inside or outside the support)."""
        if not self.radial:
            raise TypeError("off-node evaluation is only available for radial fields")
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.array([_radial_eval(self, float(ri)) for ri in r])
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.radial:
                w.writerow(["r", "u"])
                for r, u in zip(self.radii, self.values):
                    w.writerow([repr(float(r)), repr(float(u))])
            else:
                d = self.nodes.shape[1]
                w.writerow([f"x{k}" for k in range(d)] + ["u"])
                for x, u in zip(self.nodes, self.values):
                    w.writerow([repr(float(c)) for c in x] + [repr(float(u))])


# ---------------------------------------------------------------------------
# radial Nystrom solve (product integration, piecewise-linear u)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _radial_weights(s: np.ndarray, r_eval: np.ndarray, Wfun, d: int, c0: float):
    """``A[i, j] = int G(r_i, s) W(s) L_j(s) ds`` with ``L_j`` the hat at ``s_j``.

    ``G(r, s) = c0 |S^(d-1)| s^(d-1) max(r, s)^(2-d)`` is the angular average
    of ``c0 |x - y|^(2-d)`` over ``|y| = s``. Each interval is split at ``r``
    so both pieces are smooth and Gauss-Legendre is accurate.
    """
    a, b = s[:-1], s[1:]
    r = np.asarray(r_eval, dtype=float)[:, None]
    c = np.clip(r, a, b)
    A = np.zeros((r.shape[0], s.size))
    for p, q in ((a[None, :], c), (c, b[None, :])):
        half = 0.5 * (q - p)
        x = half[..., None] * _GL_X + (0.5 * (q + p))[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (c0 * sphere_area(d) * x ** (d - 1)
                 * np.maximum(r[..., None], x) ** (2 - d) * Wfun(x) * half[..., None] * _GL_W)
        g = np.where(half[..., None] > 0, g, 0.0)
        t = (x - a[None, :, None]) / (b - a)[None, :, None]
        A[:, :-1] += np.sum(g * (1.0 - t), axis=-1)
        A[:, 1:] += np.sum(g * t, axis=-1)
    return A


def _radial_moment_weights(s: np.ndarray, f, d: int):
    """``w_j = |S^(d-1)| int f(s) s^(d-1) L_j(s) ds``."""
    area = sphere_area(d)
    w = np.zeros(s.size)
    for k in range(s.size - 1):
        a, b = s[k], s[k + 1]
        x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
        wq = 0.5 * (b - a) * _GL_W * area * x ** (d - 1) * f(x)
        t = (x - a) / (b - a)
        w[k] += np.sum(wq * (1.0 - t))
        w[k + 1] += np.sum(wq * t)
    return w


def _check_range(u, tol=1e-6):
    if u.size and (u.min() < -tol or u.max() > 1.0 + tol):
        raise ResolutionError(
            f"u left [0,1] (min {u.min():.3g}, max {u.max():.3g}); refine the grid")


def solve_u_fredholm(problem: KillingProblem, resolution: int = 256,
                     c0: float | None = None, grid: str = "auto") -> UField:
    """Nystrom solve for ``u`` on the support of ``W``.

    ``grid="radial"`` uses ``resolution`` radial nodes on ``[0, R]``;
    ``grid="tensor"`` uses ``resolution`` nodes per axis over ``[-R, R]^d``.
    ``"auto"`` picks radial, since every supported potential is radial.
    """
    d = problem.dim
    if c0 is None:
        c0 = green_constant(d)
    if grid == "auto":
        grid = "radial"
    if grid == "radial":
        return _solve_radial(problem, resolution, c0)
    if grid == "tensor":
        return _solve_tensor(problem, resolution, c0)
    raise ValueError(f"unknown grid {grid!r}")


def _solve_radial(problem, n, c0):
    d, R = problem.dim, problem.R
    s = np.linspace(0.0, R, n)
    if problem.is_zero:
        A = np.zeros((n, n))
        u = np.zeros(n)
    else:
        A = _radial_weights(s, s, problem.W_radial, d, c0)
        u = linalg.solve(np.eye(n) + A, A.sum(axis=1))
    _check_range(u)
    w = _radial_moment_weights(s, problem.potential.radial, d)
    return UField(values=u, method="fredholm", resolution=n, c0=c0, problem=problem,
                  radii=s, weights=w)


def _radial_eval(field: UField, r: float) -> float:
    # u(r) = int G(r, s) W(s) (1 - u(s)) ds, reusing the node values
    p = field.problem
    if p.is_zero:
        return 0.0
    if field.method != "fredholm":
        return float(np.interp(r, field.radii, field.values, right=np.nan))
    A = _radial_weights(field.radii, np.array([r]), p.W_radial, p.dim, field.c0)
    return float(A[0] @ (1.0 - field.values))


def _solve_tensor(problem, n, c0):
    d, R = problem.dim, problem.R
    h = 2.0 * R / n
    ax = -R + h * (np.arange(n) + 0.5)
    mesh = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    Wn = problem.W(mesh)
    keep = Wn > 0
    x, Wn = mesh[keep], Wn[keep]
    vol = h ** d
    if x.shape[0] == 0:
        return UField(np.zeros(0), "fredholm", n, c0, problem, nodes=x, weights=np.zeros(0))
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 1.0)
    K = dist ** (2 - d)
    # ball of equal volume around the node: int_{|y|<rho} |y|^(2-d) dy = |S| rho^2 / 2
    rho = (vol / unit_ball_volume(d)) ** (1.0 / d)
    np.fill_diagonal(K, sphere_area(d) * rho ** 2 / 2.0 / vol)
    A = c0 * K * (Wn * vol)[None, :]
    del diff, dist, K
    u = linalg.solve(np.eye(x.shape[0]) + A, A.sum(axis=1))
    _check_range(u)
    w = problem.potential(x) * vol
    return UField(values=u, method="fredholm", resolution=n, c0=c0, problem=problem,
                  nodes=x, weights=w)


def richardson_envelope(fine: float, coarse: float, order: int = 2) -> float:
    """Error estimate for ``fine`` from a refinement pair at halved spacing."""
    return abs(fine - coarse) / (2 ** order - 1)


# ---------------------------------------------------------------------------
# Monte Carlo over killed Brownian paths


@nb.njit(cache=True)
def _radial_table_eval(r, rt, vt):
    # piecewise-linear lookup on a uniform table; zero beyond the last node
    if r >= rt[-1]:
        return 0.0
    x = r / rt[1]
    k = int(x)
    t = x - k
    return vt[k] * (1.0 - t) + vt[k + 1] * t


@nb.njit(cache=True)
def _killed_path(seed, path, x0, rt, vt, R, dt_in, R_max, t_max, dim, R_ret):
    """Run one path; returns the killing time or -1 if it escapes/outlives t_max.

    With ``R_ret > 0`` a path reaching ``R_max`` is not dropped: it comes back
    to radius ``R_ret`` with the exact probability ``(R_ret/r)^(d-2)``. This is
    exact for radial ``W`` (only the radius matters), but the returned time is
    then only a killed/survived flag.
    """
    state = rng.key2(seed, path)
    x = np.empty(dim)
    for k in range(dim):
        x[k] = x0[k]
    t = 0.0
    while True:
        r2 = 0.0
        for k in range(dim):
            r2 += x[k] * x[k]
        r = math.sqrt(r2)
        if t >= t_max:
            return -1.0
        if r >= R_max:
            if R_ret <= 0.0:
                return -1.0
            state, uu = rng.stream_uniform(state)
            if uu >= (R_ret / r) ** (dim - 2):
                return -1.0
            for k in range(dim):
                x[k] *= R_ret / r
            continue
        if r < R:
            dt = dt_in
            w = _radial_table_eval(r, rt, vt)
            if w > 0.0:
                state, uu = rng.stream_uniform(state)
                if uu > math.exp(-w * dt):
                    return t + dt
        else:
            # W vanishes here; any step whose spread stays well clear of the
            # support is exact for the position law
            sd = (r - R) / 6.0
            dt = max(dt_in, sd * sd / 2.0)
        if t + dt > t_max:
            dt = t_max - t
        s = math.sqrt(2.0 * dt)
        for k in range(dim):
            state, z = rng.stream_normal(state)
            x[k] += s * z
        t += dt
    return -1.0


@nb.njit(cache=True)
def _run_paths(seed, starts, rt, vt, R, dt_in, R_max, t_max, R_ret=0.0):
    n, dim = starts.shape
    out = np.empty(n)
    for i in range(n):
        out[i] = _killed_path(seed, i, starts[i], rt, vt, R, dt_in, R_max, t_max, dim, R_ret)
    return out


def _w_table(problem: KillingProblem, n: int = 4097):
    rt = np.linspace(0.0, problem.R, n)
    return rt, problem.W_radial(rt)


def _mc_dt(problem, dt_mc):
    # spec'd near-support refinement: dt/10 where killing can happen
    return (dt_mc if dt_mc is not None else 1e-3 * problem.R ** 2) / 10.0


@dataclass
class MCEstimate:
    value: float
    stderr: float
    n_paths: int
    truncation_bound: float = 0.0

    def __iter__(self):
        return iter((self.value, self.stderr))


def estimate_u_mc(problem: KillingProblem, x, n_paths: int = 100_000,
                  dt_mc: float | None = None, R_max: float | None = None,
                  seed: int = 0, far_field: bool = True) -> MCEstimate:
    """Killed fraction of Brownian paths from ``x``.

    Paths reaching ``R_max`` either return to radius ``2R`` with the exact
    hitting probability (``far_field=True``) or count as survivors, which
    biases ``u`` low by at most ``R_max^(2-d)`` (the ``truncation_bound``).
    """
    R = problem.R
    R_max = 20.0 * R if R_max is None else R_max
    if R_max < 4 * R:
        raise ValueError("R_max must be >= 4R")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.dim:
        raise ValueError("start point has wrong dimension")
    trunc = 0.0 if far_field else R_max ** (2 - problem.dim)
    if problem.is_zero:
        return MCEstimate(0.0, 0.0, n_paths, trunc)
    rt, vt = _w_table(problem)
    starts = np.broadcast_to(x, (n_paths, problem.dim)).copy()
    kt = _run_paths(np.uint64(seed), starts, rt, vt, R, _mc_dt(problem, dt_mc), R_max, np.inf,
                    2.0 * R if far_field else 0.0)
    p = float(np.mean(kt >= 0))
    return MCEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / n_paths), n_paths, trunc)


def estimate_u_finite_time(problem: KillingProblem, x, t_horizon, n_paths: int = 100_000,
                           dt_mc: float | None = None, seed: int = 0):
    """Estimates of ``u^[t]`` (killed before time ``t``) for one or several horizons.

    All horizons share the same paths, so estimates are non-decreasing in ``t``.
    Returns ``(estimates, stderrs)`` shaped like ``t_horizon``.
    """
    t = np.atleast_1d(np.asarray(t_horizon, dtype=float))
    if np.any(t <= 0):
        raise ValueError("horizons must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    if problem.is_zero:
        z = np.zeros_like(t)
        return (z, z.copy()) if np.ndim(t_horizon) else (0.0, 0.0)
    rt, vt = _w_table(problem)
    starts = np.broadcast_to(x, (n_paths, problem.dim)).copy()
    # no spatial cutoff: the horizon ends every path
    kt = _run_paths(np.uint64(seed), starts, rt, vt, problem.R,
                    _mc_dt(problem, dt_mc), np.inf, float(t.max()))
    killed = kt >= 0
    est = np.array([np.mean(killed & (kt <= ti)) for ti in t])
    se = np.sqrt(est * (1 - est) / n_paths)
    if np.ndim(t_horizon) == 0:
        return float(est[0]), float(se[0])
    return est, se


def sample_from_potential(potential: PotentialSpec, n: int, seed: int, dim: int = 3):
    """Points with density ``V / ||V||_1`` (radial rejection sampling)."""
    g = np.random.default_rng(seed)
    rr = np.linspace(0.0, potential.R, 2049)
    env = 1.05 * float(np.max(rr ** (dim - 1) * potential.radial(rr)))
    radii = np.empty(0)
    while radii.size < n:
        m = 2 * (n - radii.size) + 64
        r = potential.R * g.random(m)
        keep = g.random(m) * env <= r ** (dim - 1) * potential.radial(r)
        radii = np.concatenate([radii, r[keep]])
    radii = radii[:n]
    v = g.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return radii[:, None] * v


# ---------------------------------------------------------------------------
# kernel


def beta_from_field(field: UField, alpha: float) -> float:
    """``alpha * int V (1 - u)`` on the field's nodes."""
    return float(alpha * field.weights @ (1.0 - field.values))


def beta_mc(problem: KillingProblem, alpha: float, n_paths: int = 100_000,
            dt_mc: float | None = None, R_max: float | None = None, seed: int = 0,
            far_field: bool = True) -> MCEstimate:
    """Importance-sampled ``alpha int V (1-u)``: starts drawn from ``V/||V||_1``, one path each."""
    norm = problem.potential.l1_norm
    if alpha == 0 or norm == 0:
        return MCEstimate(0.0, 0.0, n_paths)
    R = problem.R
    R_max = 20.0 * R if R_max is None else R_max
    if problem.is_zero:
        return MCEstimate(alpha * norm, 0.0, n_paths)
    starts = sample_from_potential(problem.potential, n_paths, seed, problem.dim)
    rt, vt = _w_table(problem)
    kt = _run_paths(np.uint64(seed), starts, rt, vt, R, _mc_dt(problem, dt_mc), R_max, np.inf,
                    2.0 * R if far_field else 0.0)
    p = float(np.mean(kt >= 0))
    se = alpha * norm * math.sqrt(p * (1 - p) / n_paths)
    return MCEstimate(alpha * norm * (1 - p), se, n_paths,
                      0.0 if far_field else alpha * norm * R_max ** (2 - problem.dim))


def compute_beta(n: int, m: int, params: ModelParams, method: str = "fredholm",
                 resolution: int = 256, n_paths: int = 100_000, seed: int = 0,
                 c0: float | None = None):
    """``(beta, stderr)``; ``stderr`` is a Richardson envelope for the Fredholm route."""
    alpha = float(params.alpha_of(n, m))
    problem = KillingProblem.for_pair(n, m, params)
    return _beta_for(problem, alpha, method, resolution, n_paths, seed, c0)


def _beta_for(problem, alpha, method, resolution=256, n_paths=100_000, seed=0, c0=None):
    if alpha == 0.0:
        return 0.0, 0.0
    if method == "fredholm":
        return _beta_fredholm_cached(problem, alpha, resolution, c0)
    if method == "monte_carlo":
        est = beta_mc(problem, alpha, n_paths=n_paths, seed=seed)
        return est.value, est.stderr
    raise ValueError(f"unknown method {method!r}")


@lru_cache(maxsize=256)
def _beta_fredholm_cached(problem, alpha, resolution, c0):
    fine = beta_from_field(solve_u_fredholm(problem, resolution, c0), alpha)
    coarse = beta_from_field(solve_u_fredholm(problem, resolution // 2, c0), alpha)
    return fine, richardson_envelope(fine, coarse)


def beta_naive(n: int, m: int, params: ModelParams) -> float:
    """``alpha(n, m) * ||V||_1``: the kernel that ignores microscopic repulsion."""
    return float(params.alpha_of(n, m)) * params.potential.l1_norm


def beta_2d_closed_form(n: int, m: int, diffusivities, alpha) -> float:
    """Planar kernel for a potential normalized to unit integral.

    ``diffusivities`` maps mass to ``d``; ``alpha`` is a scalar or ``(n, m) -> alpha``.
    """
    dd = np.asarray(diffusivities, dtype=float)
    dsum = dd[min(n, dd.size) - 1] + dd[min(m, dd.size) - 1]
    if callable(alpha):
        a = float(alpha(n, m))
    elif np.ndim(alpha) == 2:
        tab = np.asarray(alpha, dtype=float)
        a = float(tab[min(n, len(tab)) - 1, min(m, len(tab)) - 1])
    else:
        a = float(alpha)
    k = 2.0 * math.pi * dsum
    return k * a / (k + a)


def torus_betas(alpha: float, potential: PotentialSpec | None = None,
                resolution: int = 256) -> tuple[float, float, float]:
    """``(beta_recipe, envelope, beta_naive)`` for the unit-rate annihilating torus model."""
    prob = KillingProblem.torus(alpha, potential)
    b, env = _beta_for(prob, alpha, "fredholm", resolution)
    return b, env, alpha * prob.potential.l1_norm


@dataclass
class KernelTable:
    beta: np.ndarray
    stderr: np.ndarray
    method: str
    params: ModelParams | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    def __call__(self, n, m):
        return self.beta[n - 1, m - 1]

    @classmethod
    def constant(cls, value: float, M: int) -> "KernelTable":
        return cls(np.full((M, M), float(value)), np.zeros((M, M)), "constant")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "beta", "stderr", "method"])
            for i in range(self.M):
                for j in range(self.M):
                    w.writerow([i + 1, j + 1, repr(float(self.beta[i, j])),
                                repr(float(self.stderr[i, j])), self.method])


def compute_kernel_table(params: ModelParams, M: int, method: str = "fredholm",
                         resolution: int = 256, n_paths: int = 100_000, seed: int = 0) -> KernelTable:
    """Fill ``beta(n, m)`` for ``n, m <= M``; entries sharing ``(alpha, d(n)+d(m))`` reuse one solve."""
    B = np.zeros((M, M))
    S = np.zeros((M, M))
    memo: dict = {}
    for i in range(1, M + 1):
        for j in range(i, M + 1):
            a = float(params.alpha_of(i, j))
            key = (a, float(params.d_of(i) + params.d_of(j)))
            if key not in memo:
                prob = KillingProblem.for_pair(i, j, params)
                sub = rng.replica_seed(seed, len(memo))
                memo[key] = _beta_for(prob, a, method, resolution, n_paths, sub)
            B[i - 1, j - 1] = B[j - 1, i - 1] = memo[key][0]
            S[i - 1, j - 1] = S[j - 1, i - 1] = memo[key][1]
    return KernelTable(B, S, method, params)
