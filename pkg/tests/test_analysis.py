import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from smolkin import analysis as an
from smolkin.errors import InsufficientStatistics
from smolkin.params import DomainSpec, sample_initial_configuration, torus_params
from smolkin.sim.state import SimState
from smolkin.sim.torus import run_encounter
from smolkin.solvers import Grid

EPS = 0.01


def test_mollifier_normalized():
    m = an.MollifierSpec(0.25)
    g = Grid((64, 64, 64), 1 / 64, "box", (-0.5, -0.5, -0.5))
    assert g.integrate(m(g.points())) == pytest.approx(1.0, rel=1e-3)


def test_self_convolution_mass():
    m = an.MollifierSpec(0.2)
    r, k = m.self_convolution()
    # int K = (int eta)^2 = 1
    assert trapezoid(4 * np.pi * r * r * k, r) == pytest.approx(1.0, rel=1e-4)
    assert k[-1] == pytest.approx(0.0, abs=1e-9)


def test_empirical_measure_weight():
    p = torus_params(1000, 8.0)
    s = sample_initial_configuration(p, DomainSpec("torus"), 0)
    mu = an.empirical_measure(s, p.epsilon)
    assert mu.total_weight == pytest.approx(1000 * p.epsilon) and p.Z == 1.0
    assert mu.total_weight == pytest.approx(p.Z)
    assert mu.weight_by_mass() == {1: pytest.approx(1.0)}


def test_single_particle_density():
    st_ = SimState.fresh(np.array([[0.5, 0.5, 0.5]]), np.array([1]), periodic=True)
    m = an.MollifierSpec(0.25)
    g = Grid((32, 32, 32), 1 / 32)
    f = an.candidate_density(st_, 1, m, g, EPS, periodic=True)
    assert f.integral() == pytest.approx(EPS, rel=2e-2)
    assert an.candidate_density(st_, 2, m, g, EPS, periodic=True).integral() == 0.0


def test_mollifier_width_guard():
    st_ = SimState.fresh(np.zeros((1, 3)), np.array([1]))
    with pytest.raises(ValueError):
        an.candidate_density(st_, 1, an.MollifierSpec(0.05), Grid((16, 16, 16), 1 / 16), EPS)


def test_density_product_matches_grid():
    rng = np.random.default_rng(0)
    pos = rng.uniform(size=(40, 3))
    mass = np.where(np.arange(40) < 25, 1, 2)
    s = SimState.fresh(pos, mass, periodic=True)
    m = an.MollifierSpec(0.25)
    g = Grid((32, 32, 32), 1 / 32)
    f1 = an.candidate_density(s, 1, m, g, EPS, periodic=True).values
    f2 = an.candidate_density(s, 2, m, g, EPS, periodic=True).values
    for a, b, (n, k) in ((f1, f1, (1, 1)), (f1, f2, (1, 2))):
        exact = an.density_product_integral(s, n, k, m, EPS)
        assert exact == pytest.approx(g.integrate(a * b), rel=2e-2)


@pytest.fixture(scope="module")
def free_records():
    # alpha = 0: no interactions, independent uniform particles
    p = torus_params(300, 0.0)
    T = 2.0 ** -5
    return [run_encounter(p, T, seed=s, snapshot_times=(0.0, T / 2, T), g_rmax=6.0, g_bins=6,
                          g_window=(0.0, T)) for s in range(8)]


def test_sza_without_interaction_is_uninformative(free_records):
    with pytest.raises(InsufficientStatistics):
        an.stosszahlansatz_ratio(free_records, 1, 1, 0.0, an.MollifierSpec())


def test_budget_zero_without_interaction(free_records):
    b = an.collision_budget(free_records, 1.0)
    assert b.value == 0.0 and b.count_value == 0.0 and b.within_bound


def test_pair_correlation_flat_without_interaction(free_records):
    g = an.pair_correlation_profile(free_records)
    assert np.all(np.abs(g.g - 1) <= 4 * g.stderr + 0.05)


@pytest.fixture(scope="module")
def torus_records():
    p = torus_params(300, 8.0)
    T = 2.0 ** -5
    return p, [run_encounter(p, T, seed=s, snapshot_times=(0.0, T / 2, T)) for s in range(4)]


@given(st.floats(0.1, 10.0))
def test_sza_terms_linear_in_amplitude(torus_records, a):
    p, recs = torus_records
    m = an.MollifierSpec()
    l1, r1 = an.stosszahlansatz_terms(recs[0], 1, 1, 5.0, m)
    la, ra = an.stosszahlansatz_terms(recs[0], 1, 1, 5.0, m, an.TestFunctionSpec(a))
    assert la == pytest.approx(a * l1, rel=1e-12) and ra == pytest.approx(a * r1, rel=1e-12)


def test_sza_ratio_and_budget(torus_records):
    p, recs = torus_records
    res = an.stosszahlansatz_ratio(recs, 1, 1, 5.14, an.MollifierSpec())
    assert res.n_replicas == 4 and 0.3 < res.ratio < 3.0
    b = an.collision_budget(recs, p.Z)
    assert b.within_bound and b.estimators_agree


def test_concentration_constant_uniform_torus():
    assert an.concentration_constant(torus_params(100, 8.0)) == pytest.approx(1.0)


def test_concentration_at_time_zero():
    p = torus_params(500, 8.0)
    snaps = [sample_initial_configuration(p, DomainSpec("torus"), s) for s in range(200)]
    c, s = an.sobol_boxes(16, an.dyadic_sides(p.N), seed=1)
    for k in (1, 2, 3):
        rep = an.concentration_check(snaps, k, p, c, s)
        assert rep.passed


def test_dyadic_sides_range():
    for side in an.dyadic_sides(2000):
        assert 0.1 <= 2000 * side ** 3 <= 10
