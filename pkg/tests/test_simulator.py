import numpy as np
import pytest

from smolkin.experiments import (_free_run, cell_list_check, determinism_check,
                                 free_motion_check, free_space_params)
from smolkin.params import DomainSpec, torus_params
from smolkin.sim.cells import CellIndex, brute_force_pairs
from smolkin.sim.encounter import EncounterPolicy
from smolkin.sim.run import AliveObserver, MassObserver, run
from smolkin.sim.state import SimState
from smolkin.sim.stepper import StepPolicy, Stepper
from smolkin.sim.torus import run_encounter, survival_curve

T = 2.0 ** -5


def test_no_interaction_keeps_everyone_alive():
    rec = run_encounter(torus_params(300, 0.0), T, seed=1)
    assert np.all(np.isinf(rec.death_time))
    assert rec.events == []
    assert rec.survival([0.0, T]).tolist() == [1.0, 1.0]


def test_zero_horizon():
    rec = run_encounter(torus_params(100, 8.0), 0.0, seed=2, snapshot_times=(0.0,))
    assert rec.survival(0.0)[0] == 1.0
    assert rec.snapshots[0].n_alive == 100


def test_annihilation_counts():
    rec = run_encounter(torus_params(500, 8.0), T, seed=3)
    n_dead = int(np.isfinite(rec.death_time).sum())
    assert n_dead == 2 * len(rec.events)
    assert np.all(np.diff(rec.alive_count(np.linspace(0, T, 9))) <= 0)
    assert all(0 < e.time <= T for e in rec.events)


def test_coagulation_conserves_mass():
    rec = run_encounter(torus_params(500, 8.0), T, seed=4, annihilation=False)
    alive = np.isinf(rec.death_time)
    assert rec.final_mass[alive].sum() == 500
    assert int((~alive).sum()) == len(rec.events)


def test_tracer_is_a_particle_in_the_ensemble():
    recs = [run_encounter(torus_params(200, 8.0), T, seed=s) for s in range(4)]
    c = survival_curve(recs, [0.0, T])
    assert c.h[0] == 1.0 and c.tracer[0] == 1.0
    assert 0 <= c.tracer[1] <= 1


def test_single_particle():
    rec = _free_run(5, free_space_params(1, 2.0), 0.01)
    assert rec.events == [] and rec.final.n_alive == 1


def test_engine_is_deterministic():
    a = run_encounter(torus_params(300, 8.0), T, seed=7)
    b = run_encounter(torus_params(300, 8.0), T, seed=7)
    assert np.array_equal(a.death_time, b.death_time)
    assert [e.row() for e in a.events] == [e.row() for e in b.events]


def test_encounter_time_grid_guard():
    with pytest.raises(ValueError):
        run_encounter(torus_params(50, 8.0), 0.3 * EncounterPolicy().coarse_dt, seed=0)


def test_stepper_free_space_mass_conserved():
    p = free_space_params(40, 2.0)
    rec = run(p, DomainSpec("free_space"), 0.01, StepPolicy(), [MassObserver([0.0, 0.01])], seed=1)
    m0 = rec.initial.alive_mass
    assert rec.final.alive_mass == m0
    vals = [r["value"] for r in rec.records()]
    assert vals[0] == vals[-1] == m0


def test_stepper_zero_alpha():
    p = free_space_params(30, 0.0)
    rec = run(p, DomainSpec("free_space"), 0.005, StepPolicy(), [AliveObserver([0.005])], seed=2)
    assert rec.final.n_alive == 30 and rec.events == []


def test_stepper_repeatable():
    p = free_space_params(20, 2.0)
    a = _free_run(11, p, 0.01)
    b = _free_run(11, p, 0.01)
    assert np.array_equal(a.final.positions, b.final.positions)
    assert a.events == b.events


def test_stepper_steps_in_place():
    st = SimState.fresh(np.zeros((2, 3)) + [[0.0, 0, 0], [10.0, 0, 0]], np.array([1, 1]), seed=3)
    p = free_space_params(2, 0.0)
    Stepper(p).advance(st, 5)
    assert st.step_index == 5 and st.n_alive == 2


def test_cells_match_brute_force():
    assert cell_list_check(20, seed=9) == 0


def test_cells_small_example():
    pos = np.array([[0.0, 0, 0], [0.05, 0, 0], [0.98, 0, 0], [0.5, 0.5, 0.5]])
    alive = np.ones(4, bool)
    # 0-2 and 1-2 are only close through the periodic boundary
    got = {tuple(p) for p in CellIndex(pos, alive, 0.08, True, 1.0).pairs(0.08).tolist()}
    assert got == {(0, 1), (0, 2), (1, 2)}
    assert got == {tuple(p) for p in brute_force_pairs(pos, alive, 0.08, True).tolist()}
    free = {tuple(p) for p in brute_force_pairs(pos, alive, 0.08, False).tolist()}
    assert free == {(0, 1)}


def test_free_motion_variance():
    for chk in free_motion_check(n=2000, n_steps=50, seed=1):
        assert abs(chk.z) <= 4


def test_determinism_across_workers():
    assert determinism_check(seed=1, n_replicas=2)
