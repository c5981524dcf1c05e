import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from smolkin import kernel as kr
from smolkin.params import (InitialProfile, ModelParams, PotentialSpec, canonical_potential,
                            diffusivity_power, torus_params)

# Frozen reference values for the canonical problem (alpha = 8, d(n)+d(m) = 2),
# 256-node radial Nystrom solve with the standard Green's constant.
BETA_CANONICAL = 5.137919
U0_CANONICAL = 0.431571
BETA_NAIVE_CANONICAL = 8 * 32 * math.pi / 105


def canonical():
    return kr.KillingProblem(canonical_potential(3), 4.0, 3)


def test_green_constant_standard():
    assert kr.green_constant(3) == pytest.approx(1 / (4 * math.pi))
    assert kr.green_constant(3, "printed") == pytest.approx(1 / (8 * math.pi))


def test_zero_potential_gives_zero_field():
    f = kr.solve_u_fredholm(kr.KillingProblem(canonical_potential(3), 0.0), 64)
    assert np.all(f.values == 0)


def test_canonical_field_frozen():
    f = kr.solve_u_fredholm(canonical(), 256)
    assert f(0.0)[0] == pytest.approx(U0_CANONICAL, abs=2e-6)
    assert kr.beta_from_field(f, 8.0) == pytest.approx(BETA_CANONICAL, abs=5e-6)


def test_fredholm_grid_convergence():
    b = [kr.beta_from_field(kr.solve_u_fredholm(canonical(), n), 8.0) for n in (64, 128, 256)]
    assert abs(b[2] - b[1]) < abs(b[1] - b[0])
    assert kr.richardson_envelope(b[2], b[1]) < 1e-5


def test_tensor_grid_agrees_with_radial():
    f = kr.solve_u_fredholm(canonical(), 24, grid="tensor")
    beta_t = kr.beta_from_field(f, 8.0)
    assert beta_t == pytest.approx(BETA_CANONICAL, rel=2e-2)


def test_exterior_decay_and_range():
    f = kr.solve_u_fredholm(canonical(), 128)
    assert np.all((f.values >= 0) & (f.values <= 1))
    r = np.linspace(1.0, 10.0, 20)
    assert np.all(f(r) <= 1 / r + 1e-9)


def test_monotone_in_w():
    a = kr.solve_u_fredholm(kr.KillingProblem(canonical_potential(3), 2.0), 128)
    b = kr.solve_u_fredholm(kr.KillingProblem(canonical_potential(3), 5.0), 128)
    r = np.linspace(0, 4, 50)
    assert np.all(b(r) >= a(r))


@given(st.floats(0.1, 100.0))
def test_field_in_unit_interval(v0):
    pot = PotentialSpec("radial_poly_bump", v0=v0, R=1.0)
    f = kr.solve_u_fredholm(kr.KillingProblem(pot, 1.0), 48)
    assert f.values.min() >= -1e-9 and f.values.max() <= 1 + 1e-9


def test_mc_zero_potential():
    prob = kr.KillingProblem(canonical_potential(3), 0.0)
    assert kr.estimate_u_mc(prob, np.zeros(3), n_paths=100).value == 0.0


def test_mc_far_start_bound():
    prob = canonical()
    est = kr.estimate_u_mc(prob, np.array([10.0, 0, 0]), n_paths=20_000, R_max=20.0, seed=3)
    assert est.value <= 0.1 + 4 * est.stderr


def test_mc_matches_fredholm_at_origin():
    est = kr.estimate_u_mc(canonical(), np.zeros(3), n_paths=20_000, seed=5)
    assert abs(est.value - U0_CANONICAL) <= 3 * est.stderr + 1e-5


def test_truncated_mc_is_biased_low():
    # dropping paths at R_max loses returns; the exact far-field restart does not
    a = kr.estimate_u_mc(canonical(), np.zeros(3), n_paths=20_000, seed=5, far_field=False)
    b = kr.estimate_u_mc(canonical(), np.zeros(3), n_paths=20_000, seed=5)
    assert a.value <= b.value
    assert a.truncation_bound == pytest.approx(1 / 20) and b.truncation_bound == 0.0


def test_finite_time_estimates():
    prob = canonical()
    est0, _ = kr.estimate_u_finite_time(prob, np.array([3.0, 0, 0]), 1e-6, n_paths=2000)
    assert est0 == 0.0
    t = np.array([1.0, 4.0, 16.0])
    est, se = kr.estimate_u_finite_time(prob, np.zeros(3), t, n_paths=20_000, seed=8)
    assert np.all(np.diff(est) >= 0)
    # P(killed after t) <= ||W||_1 int_t^inf (4 pi s)^-3/2 ds
    tail = 4.0 * prob.potential.l1_norm * 2 / ((4 * math.pi) ** 1.5 * math.sqrt(16.0))
    assert U0_CANONICAL - est[2] <= 4 * se[2] + tail
    assert est[2] <= U0_CANONICAL + 4 * se[2]


def test_torus_betas():
    b, env, bn = kr.torus_betas(8.0)
    assert b == pytest.approx(BETA_CANONICAL, abs=5e-6)
    assert bn == pytest.approx(BETA_NAIVE_CANONICAL, rel=1e-12)
    assert b < bn and env < 1e-5


def test_beta_zero_alpha():
    p = torus_params(100, 0.0)
    assert kr.compute_beta(1, 1, p) == (0.0, 0.0)
    assert kr.beta_naive(1, 1, p) == 0.0


def test_beta_naive_unit_alpha():
    assert kr.beta_naive(1, 1, torus_params(100, 1.0)) == pytest.approx(0.957, abs=5e-4)


def _mixed_params(seed=0, M=6):
    g = np.random.default_rng(seed)
    a = g.uniform(0.5, 5.0, (M, M))
    a = 0.5 * (a + a.T)
    return ModelParams(3, diffusivity_power(1.0, -0.5, M), a, canonical_potential(3),
                       (InitialProfile(1),), 1000)


def test_beta_symmetric_random_pairs():
    p = _mixed_params()
    g = np.random.default_rng(1)
    for _ in range(20):
        n, m = (int(v) for v in g.integers(1, 7, 2))
        assert kr.compute_beta(n, m, p, resolution=64)[0] == kr.compute_beta(m, n, p, resolution=64)[0]


def test_kernel_table_below_naive():
    p = _mixed_params(M=4)
    t = kr.compute_kernel_table(p, 4, resolution=64)
    naive = np.array([[kr.beta_naive(i, j, p) for j in range(1, 5)] for i in range(1, 5)])
    assert np.all(t.beta < naive)
    assert np.allclose(t.beta, t.beta.T)


def test_2d_closed_form():
    assert kr.beta_2d_closed_form(1, 1, [0.5], 2 * math.pi) == pytest.approx(math.pi, rel=1e-14)
    small = kr.beta_2d_closed_form(1, 1, [1.0], 1e-6) / 1e-6
    assert 0.999 <= small <= 1.0
    big = kr.beta_2d_closed_form(1, 1, [1.0], 1e6)
    assert big < 4 * math.pi and big == pytest.approx(4 * math.pi, rel=1e-4)


def test_kernel_table_csv(tmp_path):
    t = kr.KernelTable.constant(2.5, 3)
    t.to_csv(tmp_path / "k.csv")
    rows = (tmp_path / "k.csv").read_text().splitlines()
    assert rows[0] == "n,m,beta,stderr,method" and len(rows) == 10
