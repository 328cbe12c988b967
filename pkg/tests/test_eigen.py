import numpy as np
import pytest

from hfujita.eigen import (EigenConvergenceError, EigenPair, assemble_operator, ball_grid,
                           box_grid_for, decay_consistency, decay_factor_lambda, hopf_boundary_check,
                           principal_eigenpair)
from hfujita.hgeom import GridError, ScalarField, UniformGrid, apply_d_h
from hfujita.solver import InitialData, PdeParams, StepControl, run


@pytest.fixture(scope="module")
def pair():
    return principal_eigenpair(1.0, ball_grid(1.0, 21))


def test_assembled_matrix_is_the_stencil():
    g = ball_grid(1.0, 11)
    A, idx = assemble_operator(g)
    rng = np.random.default_rng(0)
    v = np.zeros(g.shape)
    v.ravel()[idx] = rng.normal(size=idx.size)
    want = apply_d_h(v, g).ravel()[idx]
    assert np.allclose(A @ v.ravel()[idx], want, rtol=1e-13, atol=1e-10)
    assert abs(A - A.T).max() <= 1e-9 * abs(A).max()


def test_pair_invariants(pair):
    g = pair.Lambda.grid
    L = pair.Lambda.values
    mask = g.active_mask()
    assert pair.lambda1 > 0
    assert abs(pair.Lambda.integral() - 1.0) <= 1e-6
    assert np.all(L[mask] > 0) and np.all(L[~mask] == 0)
    assert pair.residual <= 1e-6


def test_decay_factor_agrees_with_rayleigh_quotient(pair):
    assert np.isclose(decay_factor_lambda(pair, 0.05), pair.lambda1, rtol=1e-5)


def test_hopf_sign(pair):
    rep = hopf_boundary_check(pair)
    assert rep.ok and rep.boundary_nodes > 0 and rep.min_inward_slope > 0


def test_hopf_negative_control(pair):
    flipped = EigenPair(pair.lambda1, ScalarField(pair.Lambda.grid, -pair.Lambda.values), 0.0, 1.0)
    rep = hopf_boundary_check(flipped)
    # every boundary-adjacent (node, direction) pair is violated once the sign flips
    assert rep.violations == _directions(pair)
    with pytest.raises(AssertionError):
        hopf_boundary_check(flipped, raise_on_violation=True)


def _directions(pair):
    g = pair.Lambda.grid
    mask = g.active_mask()
    count = 0
    for k in range(mask.ndim):
        for s in (1, -1):
            nb = np.roll(mask, s, axis=k)
            edge = [slice(None)] * mask.ndim
            edge[k] = 0 if s == 1 else -1
            nb[tuple(edge)] = False
            count += int(np.sum(mask & ~nb))
    return count


def test_hopf_constant_field_passes(pair):
    g = pair.Lambda.grid
    const = EigenPair(1.0, ScalarField(g, np.where(g.active_mask(), 1.0, 0.0)), 0.0, 1.0)
    assert hopf_boundary_check(const).ok


def test_dilation_scaling_is_exact_on_scaled_grid(pair):
    big = principal_eigenpair(2.0, pair.Lambda.grid.scaled(2.0))
    assert np.isclose(big.lambda1 * 4.0 / pair.lambda1, 1.0, rtol=1e-8)


def test_decay_consistency_seeded_with_eigenfunction(pair):
    rec = run(PdeParams.porous(1, 2, reaction=False), pair.Lambda, pair.Lambda.grid,
              StepControl(t_max=0.2, output_dt=0.01))
    assert decay_consistency(pair, rec) <= 0.02


def test_decay_consistency_errors(pair):
    g = pair.Lambda.grid
    zero = run(PdeParams.porous(1, 2, reaction=False), InitialData("bump", 0.0), g, StepControl(t_max=0.05))
    with pytest.raises(ValueError):
        decay_consistency(pair, zero)
    react = run(PdeParams.porous(1, 2), pair.Lambda, g, StepControl(t_max=0.01))
    with pytest.raises(ValueError):
        decay_consistency(pair, react)
    box = run(PdeParams.porous(1, 2, reaction=False), ScalarField(box_grid_for(pair), pair.Lambda.values),
              box_grid_for(pair), StepControl(t_max=0.05))
    with pytest.raises(ValueError):
        decay_consistency(pair, box)


def test_ball_must_fit():
    with pytest.raises(GridError):
        principal_eigenpair(1.0, UniformGrid((1.0, 1.0, 1.0), (11, 11, 11)))


def test_non_convergence_reported():
    with pytest.raises(EigenConvergenceError):
        principal_eigenpair(1.0, ball_grid(1.0, 9), tol=1e-30, max_sweeps=3)
