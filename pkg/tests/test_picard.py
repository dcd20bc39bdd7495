import numpy as np
import pytest

from neuralstencil.grid import BoundaryConditions, make_grid
from neuralstencil.linsolve import SolverFailure
from neuralstencil.micronet import MicroNet, param_count
from neuralstencil.picard import picard_forward, initial_guess, CONVERGE
from neuralstencil.datagen import solve_poisson
from neuralstencil.verification import flux_row_provider


def constant_net(row):
    theta = np.zeros(param_count([3, 4, 3]))
    theta[-3:] = row
    return MicroNet([3, 4, 3], theta=theta)


def dirichlet_bc(grid, left=0.0, right=1.0):
    vals = np.zeros(grid.ncells)
    vals[0], vals[-1] = left, right
    return BoundaryConditions(grid, vals)


def test_linear_problem_converges_in_one_step(rng):
    g = make_grid(1, [12], 1.0 / 11.0)
    bc = dirichlet_bc(g)
    net = constant_net([-1.0, 2.0, -1.0])
    x0 = rng.uniform(-0.1, 0.1, g.ncells)
    traj = picard_forward(net, np.zeros(g.ncells), bc, x0, depth=3)
    assert traj.steps == 3
    assert np.allclose(traj.xs[1], traj.xs[-1], atol=1e-12)
    assert traj.residuals[1] < 1e-10
    assert traj.residuals[2] < 1e-10


def test_nonlinear_matches_classical_picard_step_for_step(rng):
    g = make_grid(1, [14], 1.0 / 13.0)
    bc = dirichlet_bc(g, 0.0, 1.0)
    b = np.zeros(g.ncells)
    x0 = np.zeros(g.ncells)
    traj = picard_forward(flux_row_provider(g, "one_plus_x2"), b, bc, x0,
                          depth=6)
    _, iterates = solve_poisson(g, "one_plus_x2", b, bc, tol=0.0, max_iter=6,
                                x0=x0, return_trajectory=True)
    for ours, ref in zip(traj.xs[1:], iterates):
        assert np.linalg.norm(ours - ref, np.inf) <= 1e-10


def test_converge_mode_nonlinear_reaches_epsilon():
    g = make_grid(1, [16], 1.0 / 15.0)
    bc = dirichlet_bc(g, -0.5, 1.0)
    traj = picard_forward(flux_row_provider(g, "one_plus_x2"),
                          np.zeros(g.ncells), bc, np.zeros(g.ncells),
                          depth=30, epsilon=1e-8, mode=CONVERGE)
    assert traj.converged
    assert traj.residuals[-1] <= 1e-8


def test_constant_stencil_iterates_identical_from_step_one(rng):
    g = make_grid(1, [10], 1.0)
    bc = dirichlet_bc(g)
    net = constant_net([-1.0, 2.0, -1.0])
    traj = picard_forward(net, np.zeros(10), bc,
                          rng.uniform(-0.1, 0.1, 10), depth=4)
    for xn in traj.xs[2:]:
        assert np.array_equal(xn, traj.xs[1]) or \
            np.linalg.norm(xn - traj.xs[1], np.inf) < 1e-13


def test_trajectory_determinism():
    g = make_grid(1, [10], 1.0)
    bc = dirichlet_bc(g)
    net = MicroNet([3, 4, 3], seed=21)
    x0 = initial_guess(g, bc, seed=5)
    t1 = picard_forward(net, np.zeros(10), bc, x0, depth=2)
    t2 = picard_forward(net, np.zeros(10), bc, x0, depth=2)
    for a, b in zip(t1.xs, t2.xs):
        assert np.array_equal(a, b)


def test_converge_idempotence_at_fixed_point():
    g = make_grid(1, [16], 1.0 / 15.0)
    bc = dirichlet_bc(g, -0.5, 1.0)
    provider = flux_row_provider(g, "one_plus_x2")
    final = picard_forward(provider, np.zeros(g.ncells), bc,
                           np.zeros(g.ncells), depth=50, epsilon=1e-13,
                           mode=CONVERGE).final
    again = picard_forward(provider, np.zeros(g.ncells), bc, final,
                           depth=50, epsilon=1e-8, mode=CONVERGE)
    assert again.converged
    assert again.steps == 1


def test_initial_guess_seeded_and_bounded():
    g = make_grid(1, [20], 1.0)
    bc = dirichlet_bc(g, 0.3, -0.7)
    a = initial_guess(g, bc, seed=9)
    b = initial_guess(g, bc, seed=9)
    c = initial_guess(g, bc, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a[0] == 0.3 and a[-1] == -0.7
    assert np.max(np.abs(a[g.interior_idx])) <= 0.1


def test_solver_failure_reports_step_index():
    g = make_grid(1, [8], 1.0)
    bc = dirichlet_bc(g)
    zero_rows = constant_net([0.0, 0.0, 0.0])
    with pytest.raises(SolverFailure, match="step 0"):
        picard_forward(zero_rows, np.zeros(8), bc, np.zeros(8), depth=2)


def test_fixed_mode_runs_exactly_depth_steps():
    g = make_grid(1, [10], 1.0)
    bc = dirichlet_bc(g)
    net = constant_net([-1.0, 2.0, -1.0])
    traj = picard_forward(net, np.zeros(10), bc, np.zeros(10), depth=5)
    assert traj.steps == 5 and len(traj.xs) == 6


def test_bad_arguments_rejected():
    g = make_grid(1, [10], 1.0)
    bc = dirichlet_bc(g)
    net = constant_net([-1.0, 2.0, -1.0])
    with pytest.raises(ValueError):
        picard_forward(net, np.zeros(10), bc, np.zeros(10), depth=0)
    with pytest.raises(ValueError):
        picard_forward(net, np.zeros(10), bc, np.zeros(10), depth=2,
                       epsilon=0.0)
    with pytest.raises(ValueError):
        picard_forward(net, np.zeros(10), bc, np.full(10, np.nan), depth=2)
