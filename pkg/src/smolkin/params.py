"""Model parameters, the N <-> epsilon scaling, and initial configurations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, UnsupportedDimensionError

SIM_MASS_CAP = 64
ODE_MASS_CAP = 256


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return d * unit_ball_volume(d)


def derive_epsilon(N: int, Z: float, d: int) -> float:
    """Interaction range for ``N`` particles in the constant mean free path regime.

    Solves ``N = Z * eps**(2 - d)``.
    """
    if d < 3:
        raise UnsupportedDimensionError(
            f"d={d}: the kinetic scaling N = Z eps^(2-d) needs d >= 3")
    if N < 1:
        raise ValueError("N must be >= 1")
    if not Z > 0:
        raise ValueError("Z must be positive")
    return (Z / N) ** (1.0 / (d - 2))


@dataclass(frozen=True)
class PotentialSpec:
    """Radial interaction kernel ``V``.

    ``radial_poly_bump``: ``V(x) = v0 (1 - |x|^2/R^2)^2`` on ``|x| <= R``.
    ``tabulated_radial``: linear interpolation of ``values`` at ``radii``
    (``radii`` must start at 0 and end at ``R`` with ``values[-1] == 0``).
    """

    kind: str = "radial_poly_bump"
    v0: float = 1.0
    R: float = 1.0
    radii: tuple[float, ...] | None = None
    values: tuple[float, ...] | None = None
    dim: int = 3

    def __post_init__(self):
        if self.kind not in ("radial_poly_bump", "tabulated_radial"):
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        if not self.R > 0:
            raise ConfigurationError("support radius must be positive")
        if self.v0 < 0:
            raise ConfigurationError("amplitude v0 must be >= 0")
        if self.kind == "tabulated_radial":
            if self.radii is None or self.values is None:
                raise ConfigurationError("tabulated_radial needs radii and values")
            r = np.asarray(self.radii, float)
            v = np.asarray(self.values, float)
            if r.shape != v.shape or r.size < 2:
                raise ConfigurationError("radii/values shape mismatch")
            if r[0] != 0.0 or not np.isclose(r[-1], self.R) or np.any(np.diff(r) <= 0):
                raise ConfigurationError("radii must increase from 0 to R")
            if np.any(v < 0) or v[-1] != 0.0:
                raise ConfigurationError("values must be >= 0 and vanish at R")

    def radial(self, r):
        """``V`` as a function of the radius (vectorized)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "radial_poly_bump":
            s = 1.0 - (r / self.R) ** 2
            return np.where(r <= self.R, self.v0 * s * s, 0.0)
        vals = np.interp(r, self.radii, self.values, right=0.0)
        return np.where(r <= self.R, vals, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.radial(np.linalg.norm(x, axis=-1))

    @property
    def sup_norm(self) -> float:
        if self.kind == "radial_poly_bump":
            return float(self.v0)
        return float(max(self.values))

    @property
    def l1_norm(self) -> float:
        d = self.dim
        if self.kind == "radial_poly_bump":
            # int_0^R (1 - r^2/R^2)^2 r^(d-1) dr = R^d B(d/2, 3) / 2
            return float(self.v0 * sphere_area(d) * self.R ** d
                         * special.beta(d / 2, 3) / 2)
        r = np.asarray(self.radii)
        tot = 0.0
        for a, b in zip(r[:-1], r[1:]):
            tot += integrate.quad(lambda s: self.radial(s) * s ** (d - 1), a, b,
                                  epsabs=0, epsrel=1e-13)[0]
        return float(sphere_area(d) * tot)

    def scaled(self, eps: float):
        """``V_eps(x) = eps^-2 V(x/eps)`` as a callable of displacement."""
        return lambda x: self(np.asarray(x) / eps) / eps ** 2


def canonical_potential(d: int = 3) -> PotentialSpec:
    return PotentialSpec("radial_poly_bump", v0=1.0, R=1.0, dim=d)


@dataclass(frozen=True)
class InitialProfile:
    """Spatial density ``h_n`` for one mass.

    ``box``: constant ``value`` on the box ``[lo, hi]``.
    ``radial_bump``: ``value * (1 - |x-c|^2/r^2)^2`` on the ball of radius ``r``.
    """

    mass: int
    kind: str = "box"
    value: float = 1.0
    lo: tuple[float, ...] = (0.0, 0.0, 0.0)
    hi: tuple[float, ...] = (1.0, 1.0, 1.0)
    center: tuple[float, ...] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.mass < 1:
            raise ConfigurationError("masses are positive integers")
        if self.kind not in ("box", "radial_bump"):
            raise ConfigurationError(f"unknown profile kind {self.kind!r}")
        if not self.value >= 0 or not math.isfinite(self.value):
            raise ConfigurationError("profile value must be finite and >= 0")
        if self.kind == "box" and any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ConfigurationError("box must have hi > lo")
        if self.kind == "radial_bump" and not self.radius > 0:
            raise ConfigurationError("bump radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.lo) if self.kind == "box" else len(self.center)

    @property
    def integral(self) -> float:
        if self.kind == "box":
            return self.value * float(np.prod(np.subtract(self.hi, self.lo)))
        d = self.dim
        return self.value * sphere_area(d) * self.radius ** d * special.beta(d / 2, 3) / 2

    @property
    def sup(self) -> float:
        return float(self.value)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
            return np.where(inside, self.value, 0.0)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1) / self.radius ** 2
        return np.where(r2 <= 1.0, self.value * (1.0 - r2) ** 2, 0.0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = self.dim
        if self.kind == "box":
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            return lo + (hi - lo) * rng.random((n, d))
        out = np.empty((0, d))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            y = rng.uniform(-1.0, 1.0, (m, d))
            r2 = np.sum(y * y, axis=1)
            keep = (r2 <= 1.0) & (rng.random(m) <= (1.0 - np.minimum(r2, 1.0)) ** 2)
            out = np.vstack([out, y[keep]])
        return np.asarray(self.center) + self.radius * out[:n]


def diffusivity_power(d1: float, exponent: float, M: int = SIM_MASS_CAP) -> np.ndarray:
    """Table ``d(n) = d1 * n**exponent`` for ``n = 1..M``."""
    n = np.arange(1, M + 1, dtype=float)
    return d1 * n ** exponent


@dataclass(frozen=True)
class ModelParams:
    """Microscopic parameter set.

    ``diffusivity[n-1]`` is ``d(n)`` and ``strength[n-1, m-1]`` is
    ``alpha(n, m)``; masses beyond the table use the boundary values.
    """

    dimension: int
    diffusivity: np.ndarray
    strength: np.ndarray
    potential: PotentialSpec
    initial_profiles: tuple[InitialProfile, ...]
    N: int
    Z: float | None = None

    def __post_init__(self):
        d = np.asarray(self.diffusivity, dtype=float).copy()
        a = np.asarray(self.strength, dtype=float).copy()
        if a.ndim == 0:
            a = np.full((len(d), len(d)), float(a))
        # d = 0 (frozen particles) is allowed for diagnostics; validate() flags it
        if d.ndim != 1 or d.size == 0 or np.any(d < 0):
            raise ConfigurationError("diffusivity table must be nonnegative")
        if a.shape != (d.size, d.size):
            raise ConfigurationError("strength table must be M x M with M = len(diffusivity)")
        if np.any(a < 0) or not np.array_equal(a, a.T):
            raise ConfigurationError("strength table must be symmetric and >= 0")
        d.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "diffusivity", d)
        object.__setattr__(self, "strength", a)
        object.__setattr__(self, "initial_profiles", tuple(self.initial_profiles))
        total = sum(p.integral for p in self.initial_profiles)
        if self.Z is None:
            if total <= 0:
                raise ConfigurationError("initial profiles carry no mass; give Z explicitly")
            object.__setattr__(self, "Z", float(total))
        elif self.initial_profiles and abs(total - self.Z) > 1e-8 * self.Z:
            raise ConfigurationError(f"Z={self.Z} but sum of profile integrals is {total}")
        if self.N < 1:
            raise ConfigurationError("N must be >= 1")

    @property
    def mass_cap(self) -> int:
        return int(self.diffusivity.size)

    @property
    def epsilon(self) -> float:
        return derive_epsilon(self.N, self.Z, self.dimension)

    def d_of(self, n):
        n = np.minimum(np.asarray(n, dtype=np.int64), self.mass_cap)
        return self.diffusivity[n - 1]

    def alpha_of(self, n, m):
        M = self.mass_cap
        n = np.minimum(np.asarray(n, dtype=np.int64), M)
        m = np.minimum(np.asarray(m, dtype=np.int64), M)
        return self.strength[n - 1, m - 1]

    def mass_weights(self) -> dict[int, float]:
        """``n -> int h_n`` summed over profiles of mass ``n``."""
        w: dict[int, float] = {}
        for p in self.initial_profiles:
            w[p.mass] = w.get(p.mass, 0.0) + p.integral
        return w


def torus_params(N: int, alpha: float, potential: PotentialSpec | None = None,
                 diffusivity: float = 1.0, M: int = SIM_MASS_CAP, L: float = 1.0) -> ModelParams:
    """Unit-mass, uniform initial data on a torus of side ``L`` with Z = L^3 (1 for the unit torus)."""
    pot = potential or canonical_potential(3)
    prof = InitialProfile(mass=1, kind="box", value=1.0, lo=(0.0,) * 3, hi=(L,) * 3)
    return ModelParams(3, np.full(M, float(diffusivity)), np.full((M, M), float(alpha)),
                       pot, (prof,), N)


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "free_space"
    L: float = 1.0

    def __post_init__(self):
        if self.kind not in ("free_space", "torus"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if self.kind == "torus" and not self.L > 0:
            raise ConfigurationError("torus side must be positive")

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    def check_range(self, eps: float, R: float = 1.0):
        """Minimum-image distances are unambiguous only if the range is < L/4."""
        if self.periodic and not eps * R < self.L / 4:
            from .errors import DomainError
            raise DomainError(f"interaction range {eps * R:g} not below L/4 = {self.L / 4:g}")


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(passed for passed, _ in self.checks.values())

    def __getitem__(self, name):
        return self.checks[name][0]


def _bounded_on_table(values: np.ndarray) -> bool:
    # A finite table is always bounded; treat "still growing at the cap" as unbounded.
    M = values.size
    if M < 4:
        return bool(np.all(np.isfinite(values)))
    head = values[: M // 2].max()
    tail = values[M // 2:].max()
    return bool(np.isfinite(tail) and tail <= head * (1 + 1e-9))


def validate(params: ModelParams) -> ValidationReport:
    """Check the standing assumptions on ``d``, ``alpha`` and ``h_n``. Pure."""
    rep = ValidationReport()
    dd = params.diffusivity
    rep.checks["diffusivity_positive"] = (bool(np.all(dd > 0)), "d(n) > 0 over the table")
    rep.checks["diffusivity_nonincreasing"] = (
        bool(np.all(np.diff(dd) <= 0)), "d(n+1) <= d(n) over the table")
    n = np.arange(1, dd.size + 1)
    with np.errstate(divide="ignore"):
        growth = dd ** (-params.dimension / 2) / n
    rep.checks["diffusivity_decay"] = (
        _bounded_on_table(growth),
        f"sup m^-1 d(m)^(-d/2) = {growth.max():.6g} (tail max {growth[dd.size // 2:].max():.6g})")
    a = params.strength
    rep.checks["strength_bounded"] = (
        bool(np.all(np.isfinite(a)) and _bounded_on_table(a.max(axis=1))),
        f"max alpha = {a.max():.6g}")
    profs = params.initial_profiles
    bounded = all(math.isfinite(p.sup) for p in profs) and len(profs) > 0
    rep.checks["profiles_bounded_compact"] = (bounded, "h_n are boxes/bumps with finite sup")
    return rep


def sample_initial_configuration(params: ModelParams, domain: DomainSpec, seed: int):
    """Draw N i.i.d. (position, mass) pairs with density ``Z^-1 h_n(x)``."""
    from .sim.state import SimState

    if not params.initial_profiles:
        raise ConfigurationError("no initial profiles")
    rng = np.random.default_rng(seed)
    w = np.array([p.integral for p in params.initial_profiles])
    which = rng.choice(len(w), size=params.N, p=w / w.sum())
    pos = np.empty((params.N, params.dimension))
    mass = np.empty(params.N, dtype=np.int64)
    for k, prof in enumerate(params.initial_profiles):
        idx = np.flatnonzero(which == k)
        if idx.size:
            pos[idx] = prof.sample(rng, idx.size)
            mass[idx] = prof.mass
    if domain.periodic:
        pos %= domain.L
    return SimState.fresh(pos, mass, periodic=domain.periodic, L=domain.L,
                          seed=int(rng.integers(0, 2 ** 63)))
