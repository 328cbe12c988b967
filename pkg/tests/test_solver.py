import math

import numpy as np
import pytest

from hfujita.analytic import CutoffSpec
from hfujita.hgeom import ScalarField, UniformGrid, interior_slice
from hfujita.solver import (BLOW_UP, BY_HORIZON, DECAYING, DiagnosticsRow, InitialData, PdeParams,
                            RunRecord, SolverState, StepControl, SupportError, build_initial, classify,
                            kaplan_inequality_check, ode_bound, run, step, weak_residual)


def small_grid(N=9, L=(2.0, 2.0, 4.0)):
    return UniformGrid(L, (N, N, N))


# initial data

def test_zero_bump():
    f = build_initial(InitialData("bump", 0.0, 1.0), small_grid())
    assert np.all(f.values == 0.0)


def test_poly_decay_values():
    g = UniformGrid((2.0, 2.0, 2.0), (5, 5, 5))
    f = build_initial(InitialData("poly_decay", epsilon=1.0, gamma=2.0), g).values
    assert f[2, 2, 2] == 1.0          # origin
    assert f[3, 2, 2] == 0.5          # (1, 0, 0) has |eta|_H = 1
    assert f[0, 2, 2] == 0.0          # boundary node


def test_poly_decay_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        InitialData("poly_decay", gamma=0.0)


def test_bump_vanishes_on_boundary_and_is_nonnegative():
    g = small_grid()
    f = build_initial(InitialData("bump", 2.0, 1.5), g).values
    assert np.all(f >= 0)
    assert not np.any(f[~g.active_mask()])


def test_params_ranges():
    with pytest.raises(ValueError):
        PdeParams.porous(0.5, 2.0)
    with pytest.raises(ValueError):
        PdeParams.porous(1.0, 1.0)
    with pytest.raises(ValueError):
        PdeParams.degenerate(-0.1, 2.0)


# single steps

def _state(params, values, grid, **kw):
    return SolverState.start(params, ScalarField(grid, values), StepControl(**kw))


def test_zero_is_fixed_point():
    g = small_grid()
    for p in (PdeParams.porous(2, 3), PdeParams.degenerate(0.5, 2)):
        st = step(_state(p, np.zeros(g.shape), g), 1e-3)
        assert np.all(st.values == 0.0)


def test_constant_evolves_by_reaction_in_interior():
    g = small_grid()
    c, dt = 0.5, 1e-3
    v = np.where(g.active_mask(), c, 0.0)
    st = step(_state(PdeParams.degenerate(0.5, 2.0), v, g), dt)
    sl = interior_slice(g, 2)
    assert np.allclose(st.values[sl], c + dt * c**2, rtol=0, atol=1e-15)


def test_single_cell_bump_hand_oracle():
    g = UniformGrid((1.0, 1.0, 1.0), (5, 5, 5))
    hx, hy, ht = g.spacings
    v = np.zeros(g.shape)
    v[2, 2, 2] = a = 0.7
    dt = 1e-3
    st = step(_state(PdeParams.porous(1, 2), v, g), dt)
    want = np.zeros(g.shape)
    want[2, 2, 2] = a + dt * (-(2 / hx**2 + 2 / hy**2) * a + a * a)
    want[1, 2, 2] = want[3, 2, 2] = dt * a / hx**2
    want[2, 1, 2] = want[2, 3, 2] = dt * a / hy**2
    assert np.allclose(st.values, want, rtol=1e-14, atol=1e-15)


def test_clamp_records_negativity():
    g = small_grid()
    v = np.zeros(g.shape)
    v[4, 4, 4] = 1.0
    st = _state(PdeParams.porous(1, 2), v, g)
    hx, hy, _ = g.spacings
    step(st, 2.0 / (2 / hx**2 + 2 / hy**2))  # overshoots the centre node
    assert np.all(st.values >= 0) and st.clamp_l1 > 0


def test_nonnegative_input_required():
    g = small_grid()
    with pytest.raises(ValueError):
        _state(PdeParams.porous(1, 2), -np.ones(g.shape), g)


# runs

def test_zero_amplitude_run_decays_trivially():
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 0.0), small_grid(), StepControl(t_max=0.1))
    assert rec.classification == DECAYING
    assert all(r.sup_norm == 0 for r in rec.rows)


def test_run_rows_on_cadence_and_deterministic():
    g = small_grid(11)
    args = (PdeParams.porous(1.5, 2.5), InitialData("bump", 1.0, 1.5), g, StepControl(t_max=0.2, output_dt=0.01))
    a = run(*args)
    b = run(*args)
    ts = np.array([r.t for r in a.rows])
    assert np.all(np.diff(ts) > 0)
    assert np.allclose(ts, np.arange(len(ts)) * 0.01, atol=1e-12)
    assert a.rows == b.rows
    assert all(r.sup_norm >= 0 and r.mass >= 0 for r in a.rows)


def test_large_data_blows_up():
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 20.0, 1.5), small_grid(11), StepControl(t_max=5.0))
    assert rec.classification == BLOW_UP
    assert rec.rows[-1].sup_norm >= 1e8 and 0 < rec.t_star < 5


def test_blow_up_time_monotone_in_amplitude():
    g = small_grid(11)
    times = []
    for amp in (10.0, 20.0, 40.0):
        rec = run(PdeParams.porous(1, 2), InitialData("bump", amp, 1.5), g, StepControl(t_max=5.0))
        assert rec.classification == BLOW_UP
        times.append(rec.t_star)
    assert times[0] >= times[1] >= times[2]


def test_symmetric_data_stays_symmetric():
    g = UniformGrid((2.0, 2.0, 4.0), (13, 13, 13))
    rng = np.random.default_rng(0)
    v = rng.uniform(0, 1, g.shape)
    v = v + v[::-1, ::-1, :]
    v = v + v[:, ::-1, ::-1]
    st = _state(PdeParams.porous(2, 3), v, g)
    for _ in range(5):
        step(st)
        w = st.values
        assert np.max(np.abs(w - w[::-1, ::-1, :])) <= 1e-12
        assert np.max(np.abs(w - w[:, ::-1, ::-1])) <= 1e-12


def test_quench_functional_recorded_for_positive_data():
    from hfujita.eigen import principal_eigenpair
    g = UniformGrid((1.3, 1.3, 1.3), (13, 13, 13))
    pair = principal_eigenpair(1.0, g)
    rec = run(PdeParams.degenerate(2.0, 4.0), InitialData("gaussian", 0.5, 2.0), g,
              StepControl(t_max=0.01, output_dt=0.001), eigenpair=pair)
    assert rec.rows[0].y_quench is not None and rec.rows[0].y_quench > 0
    assert rec.rows[0].y_lambda > 0


# classification

def _rec(sups):
    rows = [DiagnosticsRow(float(i), 0.1, s, 1.0, 1.0, None, 0.0) for i, s in enumerate(sups)]
    return RunRecord(PdeParams.porous(1, 2), None, small_grid(), StepControl(), rows)


def test_classify_rules():
    assert classify(_rec([1.0] * 9 + [1e9])) == BLOW_UP
    assert classify(_rec(np.linspace(1, 0.1, 12))) == DECAYING
    assert classify(_rec([1.0, 2.0] * 6)) == BY_HORIZON
    with pytest.raises(ValueError):
        classify(_rec([1.0] * 5))


# weak form and eigen inequality

def test_weak_residual_zero_solution():
    g = small_grid(13, (3.0, 3.0, 9.0))
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 0.0), g, StepControl(t_max=0.1), store_frames=True)
    assert weak_residual(rec, CutoffSpec(scale_R=2.0)) == 0.0


def test_weak_residual_support_check():
    g = small_grid(13, (3.0, 3.0, 9.0))
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 1.0), g, StepControl(t_max=0.01), store_frames=True)
    with pytest.raises(SupportError):
        weak_residual(rec, CutoffSpec(scale_R=3.0))


def test_weak_residual_small_on_smooth_run():
    g = UniformGrid((3.0, 3.0, 9.0), (25, 25, 25))
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 1.0, 1.5), g,
              StepControl(t_max=0.05, output_dt=0.0025), store_frames=True)
    psi = CutoffSpec(scale_R=2.5)
    scale = abs(sum(np.sum(f[1]) for f in rec.frames[:1])) * g.cell_volume
    assert weak_residual(rec, psi) < 0.05 * scale


def test_kaplan_zero_solution():
    from hfujita.eigen import principal_eigenpair
    g = UniformGrid((1.3, 1.3, 1.3), (13, 13, 13))
    pair = principal_eigenpair(1.0, g)
    rec = run(PdeParams.porous(1, 2), InitialData("bump", 0.0), g, StepControl(t_max=0.01), store_frames=True)
    assert kaplan_inequality_check(rec, pair) == 0.0


# ODE bounds

def test_ode_bound_examples():
    b = ode_bound(PdeParams.porous(2, 4), 2.0, lambda1=1.0)
    assert b.condition_met and math.isclose(b.t_star_bound, 0.5)
    assert math.isclose(b.constants["c3"], math.sqrt(2))
    b = ode_bound(PdeParams.porous(1, 2), 24.0)
    assert b.constants["lambda"] == 12 and math.isclose(b.t_star_bound, 1 / 12)
    b = ode_bound(PdeParams.porous(2, 2), 4.0)
    assert math.isclose(b.t_star_bound, 2 * 4.0 ** (-1))
    b = ode_bound(PdeParams.degenerate(2, 4), 0.1, lambda1=1.0)
    assert math.isclose(b.constants["c0"], 0.5) and math.isclose(b.constants["c1"], 2.0)
    assert math.isclose(b.t_star_bound, 0.125)
    lam = 0.1
    b = ode_bound(PdeParams.degenerate(1, 3), 0.5, lambda1=lam)
    assert math.isclose(b.constants["c2"], -math.log(2 * lam))
    assert math.isclose(b.t_star_bound, math.exp(-math.log(2 * lam)) / lam)


def test_ode_bound_condition_failed():
    b = ode_bound(PdeParams.porous(2, 4), 1.0, lambda1=1.0)
    assert not b.condition_met and b.t_star_bound is None
    b = ode_bound(PdeParams.porous(1, 2), 5.0)
    assert not b.condition_met and b.t_star_bound is None
    b = ode_bound(PdeParams.degenerate(2, 4), 0.6, lambda1=1.0)
    assert not b.condition_met and b.t_star_bound is None


# truncation flags

def test_boundary_band_flags():
    g = small_grid(11)
    quiet = run(PdeParams.porous(1, 2), InitialData("bump", 0.5, 0.8), g, StepControl(t_max=0.01))
    assert "initial_mass_near_boundary" not in quiet.flags
    wide = run(PdeParams.porous(1, 2), InitialData("gaussian", 1.0, 3.0), g, StepControl(t_max=0.01))
    assert "initial_mass_near_boundary" in wide.flags
    assert "boundary_band_mass_exceeds_1e-6" in wide.flags
    spread = run(PdeParams.porous(1, 2, reaction=False), InitialData("bump", 1.0, 1.0), g, StepControl(t_max=2.0))
    assert "initial_mass_near_boundary" not in spread.flags
    assert "boundary_band_mass_exceeds_1e-6" in spread.flags
