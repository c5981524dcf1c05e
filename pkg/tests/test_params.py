import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from smolkin.errors import ConfigurationError, UnsupportedDimensionError
from smolkin.params import (DomainSpec, InitialProfile, ModelParams, PotentialSpec,
                            canonical_potential, derive_epsilon, diffusivity_power,
                            sample_initial_configuration, torus_params, validate)


@pytest.mark.parametrize("N,Z,d,eps", [(1000, 1.0, 3, 1e-3), (1, 1.0, 3, 1.0), (10000, 1.0, 4, 1e-2)])
def test_derive_epsilon_examples(N, Z, d, eps):
    assert derive_epsilon(N, Z, d) == pytest.approx(eps, rel=1e-12)


def test_derive_epsilon_rejects_low_dimension():
    with pytest.raises(UnsupportedDimensionError):
        derive_epsilon(100, 1.0, 2)
    with pytest.raises(ValueError):
        derive_epsilon(0, 1.0, 3)


@given(st.integers(1, 10 ** 7), st.floats(1e-3, 1e3), st.integers(3, 6))
def test_epsilon_round_trip(N, Z, d):
    eps = derive_epsilon(N, Z, d)
    assert Z * eps ** (2 - d) == pytest.approx(N, rel=1e-12)


def test_canonical_potential_norms():
    V = canonical_potential(3)
    assert V.l1_norm == pytest.approx(32 * math.pi / 105, rel=1e-12)
    assert V.sup_norm == 1.0
    q = integrate.quad(lambda r: 4 * math.pi * r * r * float(V.radial(r)), 0, 1, epsabs=0,
                       epsrel=1e-13)[0]
    assert V.l1_norm == pytest.approx(q, rel=1e-10)


def test_tabulated_norm_matches_quadrature():
    r = np.linspace(0, 0.8, 6)
    v = np.array([3.0, 2.5, 2.0, 1.0, 0.5, 0.0])
    V = PotentialSpec("tabulated_radial", R=0.8, radii=tuple(r), values=tuple(v))
    q = integrate.quad(lambda s: 4 * math.pi * s * s * float(V.radial(s)), 0, 0.8,
                       points=list(r), epsabs=0, epsrel=1e-13)[0]
    assert V.l1_norm == pytest.approx(q, rel=1e-10)
    assert V.sup_norm == 3.0


@given(st.floats(0.0, 3.0))
def test_potential_nonnegative_and_supported(r):
    V = canonical_potential(3)
    val = float(V.radial(r))
    assert val >= 0
    if r > 1:
        assert val == 0


def test_potential_rejects_bad_tables():
    with pytest.raises(ConfigurationError):
        PotentialSpec("tabulated_radial", R=1.0, radii=(0.0, 1.0), values=(1.0, 0.5))
    with pytest.raises(ConfigurationError):
        PotentialSpec("nope")


def _params(dvals, alpha=1.0):
    M = len(dvals)
    return ModelParams(3, np.asarray(dvals, float), np.full((M, M), alpha), canonical_potential(3),
                       (InitialProfile(1),), 100)


def test_validate_constant_tables_pass():
    assert validate(_params(np.ones(64))).ok


def test_validate_inverse_mass_diffusivity_fails():
    rep = validate(_params(1.0 / np.arange(1, 65)))
    assert not rep["diffusivity_decay"]


def test_validate_inverse_sqrt_diffusivity_passes():
    rep = validate(_params(diffusivity_power(1.0, -0.5, 64)))
    assert rep["diffusivity_decay"]
    assert rep.ok


def test_validate_flags_zero_diffusivity():
    assert not validate(_params(np.zeros(4)))["diffusivity_positive"]


def test_model_Z_from_profiles():
    p = torus_params(500, 2.0)
    assert p.Z == pytest.approx(1.0, rel=1e-8)
    assert p.epsilon == pytest.approx(1 / 500)


def test_torus_sampling_uniform():
    p = torus_params(20000, 1.0)
    s = sample_initial_configuration(p, DomainSpec("torus"), 4)
    assert np.all(s.masses == 1) and s.N == 20000
    for k in range(3):
        assert stats.kstest(s.positions[:, k], "uniform").pvalue > 1e-3


def test_single_particle_configuration():
    s = sample_initial_configuration(torus_params(1, 1.0), DomainSpec("torus"), 0)
    assert s.N == 1 and s.n_alive == 1


def test_two_mass_fractions_chi_square():
    profs = (InitialProfile(1, value=2.0), InitialProfile(2, value=1.0))
    p = ModelParams(3, np.ones(4), np.ones((4, 4)), canonical_potential(3), profs, 100_000)
    s = sample_initial_configuration(p, DomainSpec("free_space"), 9)
    obs = np.array([(s.masses == 1).sum(), (s.masses == 2).sum()])
    assert stats.chisquare(obs, [p.N * 2 / 3, p.N / 3]).pvalue > 1e-3


def test_sampling_deterministic():
    p = torus_params(300, 1.0)
    a = sample_initial_configuration(p, DomainSpec("torus"), 77)
    b = sample_initial_configuration(p, DomainSpec("torus"), 77)
    assert np.array_equal(a.positions, b.positions) and a.seed == b.seed


def test_torus_range_check():
    with pytest.raises(Exception):
        DomainSpec("torus", 1.0).check_range(0.3, 1.0)
