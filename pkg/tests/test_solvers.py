import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from smolkin import solvers as sv
from smolkin.errors import StepSizeError
from smolkin.experiments import domination_run
from smolkin.params import diffusivity_power


def bump_state(n=16, M=3, kind="torus"):
    g = sv.Grid((n, n, n), 1.0 / n, kind)
    x, y, z = g.coords()
    f0 = np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2) / 0.02)
    f = np.zeros((M,) + g.shape)
    f[0] = f0
    return sv.PdeState(g, f)


@pytest.mark.parametrize("kind", ["torus", "box"])
def test_heat_only_conserves_mass(kind):
    s = bump_state(kind=kind)
    out = sv.solve_pde(s, 0.0, [1.0, 0.5, 0.3], 0.02, 1e-4)[-1]
    assert out.total_mass() == pytest.approx(s.total_mass(), rel=1e-12)
    assert out.f.min() >= 0


def test_zero_kernel_uniform_state_is_stationary():
    g = sv.Grid((8, 8, 8), 1 / 8)
    s = sv.uniform_state(g, [1.0, 0.3, 0.1])
    out = sv.solve_pde(s, 0.0, [1.0, 0.7, 0.5], 0.1, 1e-3)[-1]
    assert np.allclose(out.f, s.f, rtol=0, atol=1e-14)


def test_uniform_pde_matches_ode():
    g = sv.Grid((4, 4, 4), 1 / 4)
    init = [1.0, 0.2]
    M = 16
    s = sv.uniform_state(g, init + [0.0] * (M - 2))
    out = sv.solve_pde(s, 2.0, [1.0], 0.5, 1e-3)[-1]
    ode = sv.solve_homogeneous_ode(2.0, init, 0.5, M=M, t_eval=[0.5])
    assert np.max(np.abs(out.f[:, 0, 0, 0] - ode.f[-1])) < 1e-8


def test_cfl_guard():
    s = bump_state(n=8)
    with pytest.raises(StepSizeError):
        sv.step_pde(s, 1.0, [1.0], dt=1.0)


def test_heat_propagate_exact_mode():
    g = sv.Grid((32, 1, 1), 1 / 32)
    x = g.coords()[0]
    u = np.cos(2 * np.pi * x)
    lam = -4 * 32 ** 2 * np.sin(np.pi / 32) ** 2
    out = sv.heat_propagate(g, u, 0.7, 0.3)
    assert np.allclose(out, u * np.exp(0.7 * 0.3 * lam), atol=1e-13)


def test_survival_ode_closed_form():
    s = sv.solve_torus_survival_ode(1.0, 1.0, [0.0, 0.5, 1.0])
    assert s.integrated[-1] == pytest.approx(0.5, abs=1e-10)
    assert s.max_error < 1e-10


def test_survival_ode_at_inverse_sqrt_alpha():
    # the slow-decay bound h(alpha^{-1/2}) <= alpha^{-1/2} for beta ~ alpha
    for alpha in (4.0, 16.0, 64.0):
        t = alpha ** -0.5
        s = sv.solve_torus_survival_ode(alpha, t, [t])
        assert s.integrated[-1] <= t + 1e-12


def test_constant_kernel_ode_total_concentration():
    # for constant K the total number N(t) = N0 / (1 + K N0 t / 2)
    K, T = 1.5, 1.0
    tr = sv.solve_homogeneous_ode(K, [1.0], T, M=256, t_eval=[T])
    total = tr.f[-1].sum()
    assert total == pytest.approx(1 / (1 + K * T / 2), abs=1e-9)
    assert tr.total_mass()[-1] + tr.leakage[-1] == pytest.approx(1.0, abs=1e-12)


def test_rk4_agrees_with_adaptive():
    a = sv.solve_homogeneous_ode(1.0, [1.0], 0.5, M=32, t_eval=[0.5])
    b = sv.solve_homogeneous_ode_rk4(1.0, [1.0], 0.5, M=32, dt=1e-3, t_eval=[0.5])
    assert np.max(np.abs(a.f - b.f)) < 1e-10


@given(arrays(float, 6, elements=st.floats(0, 5)), st.floats(0.1, 10))
def test_rates_mass_balance(f, k):
    M = f.size
    B = np.full((M, M), k)
    gain, loss, leak = sv.coagulation_rates(B, f)
    n = np.arange(1, M + 1)
    assert np.dot(n, gain - loss) + leak == pytest.approx(0.0, abs=1e-9 * (1 + np.dot(n, loss)))
    assert np.all(gain >= 0) and leak >= 0


def test_rates_field_matches_pointwise():
    rng = np.random.default_rng(0)
    f = rng.uniform(size=(5, 3))
    B = rng.uniform(size=(5, 5))
    B = B + B.T
    g, lo, lk = sv.coagulation_rates(B, f)
    for c in range(3):
        g1, lo1, lk1 = sv.coagulation_rates(B, f[:, c])
        assert np.allclose(g[:, c], g1) and np.allclose(lo[:, c], lo1)
        assert lk[c] == pytest.approx(lk1)


def test_domination():
    rep = domination_run(n=16, T=0.02)
    assert rep.passed


def test_normal_ratio():
    assert sv.normal_ratio_check(diffusivity_power(1.0, -0.5, 10))


def test_normal_density_normalized():
    assert sv.normal_density(np.zeros((1, 3)), 1.0)[0] == pytest.approx((2 * math.pi) ** -1.5)
