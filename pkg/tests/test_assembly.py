import numpy as np
import pytest

from neuralstencil.assembly import (assemble, assemble_rhs,
                                    operator_derivatives,
                                    apply_dAdx_transposed,
                                    apply_dAdtheta_transposed)
from neuralstencil.grid import (BoundaryConditions, make_grid,
                                DIRICHLET, NEUMANN)
from neuralstencil.micronet import MicroNet, param_count


def const_provider(row):
    row = np.asarray(row, dtype=float)
    return lambda values, positions: np.tile(row, (len(values), 1))


def zero_bc(grid):
    return BoundaryConditions(grid, np.zeros(grid.ncells))


def constant_net(layer_sizes, row):
    """Net with zero weights whose output bias equals the requested row."""
    theta = np.zeros(param_count(layer_sizes))
    theta[-layer_sizes[-1]:] = row
    return MicroNet(layer_sizes, theta=theta)


def test_constant_stencil_gives_tridiagonal_rows():
    g = make_grid(1, [10], 0.5)
    net = constant_net([3, 4, 3], [-1.0, 2.0, -1.0])
    A = assemble(net, np.zeros(10), g, zero_bc(g))
    D = A.to_dense()
    for i in g.interior_idx:
        row = np.zeros(10)
        row[i - 1:i + 2] = [-1.0, 2.0, -1.0]
        assert np.array_equal(D[i], row)
    assert D[0, 0] == 1.0 and D[9, 9] == 1.0


def test_cross_constant_stencil_gives_5point_laplacian_rows():
    g = make_grid(2, [6, 6], 1.0, footprint="cross")
    A = assemble(const_provider([-1, -1, 4, -1, -1]), np.zeros(36), g, zero_bc(g))
    D = A.to_dense()
    i = g.flat_index((2, 3))
    row = np.zeros(36)
    row[i] = 4.0
    for j in (i - 6, i - 1, i + 1, i + 6):
        row[j] = -1.0
    assert np.array_equal(D[i], row)


def test_zero_net_rows_and_identity_boundary():
    g = make_grid(1, [8], 1.0)
    net = constant_net([3, 4, 3], [0.0, 0.0, 0.0])
    D = assemble(net, np.zeros(8), g, zero_bc(g)).to_dense()
    assert np.allclose(D[g.interior_idx], 0.0)
    assert D[0, 0] == 1.0 and D[7, 7] == 1.0


def test_assemble_rejects_nonfinite_state():
    g = make_grid(1, [8], 1.0)
    x = np.zeros(8)
    x[3] = np.inf
    with pytest.raises(ValueError):
        assemble(const_provider([0, 1, 0]), x, g, zero_bc(g))


def test_assemble_is_pure():
    g = make_grid(1, [9], 0.25)
    net = MicroNet([3, 4, 3], seed=4)
    x = np.linspace(-1, 1, 9)
    A1 = assemble(net, x, g, zero_bc(g))
    A2 = assemble(net, x, g, zero_bc(g))
    assert np.array_equal(A1.vals, A2.vals)
    assert np.array_equal(A1.cols, A2.cols)


def test_quadratic_exactness_of_scaled_laplacian_rows():
    # exact FD identity: (-(p-h)^2 + 2p^2 - (p+h)^2)/h^2 = -2
    g = make_grid(1, [12], 1.0 / 11.0)
    h2 = g.cell_size ** 2
    A = assemble(const_provider(np.array([-1.0, 2.0, -1.0]) / h2),
                 np.zeros(12), g, zero_bc(g))
    p = g.positions()[:, 0]
    out = A.matvec(p ** 2)
    assert np.max(np.abs(out[g.interior_idx] - (-2.0))) < 1e-10


def test_assemble_rhs_zero_everything():
    g = make_grid(1, [8], 1.0)
    assert np.array_equal(assemble_rhs(np.zeros(8), zero_bc(g)), np.zeros(8))


def test_assemble_rhs_dirichlet_endpoints():
    g = make_grid(1, [8], 1.0)
    vals = np.zeros(8)
    vals[0], vals[7] = 0.0, 1.0
    rhs = assemble_rhs(np.zeros(8), BoundaryConditions(g, vals))
    assert rhs[7] == 1.0 and rhs[0] == 0.0
    assert np.allclose(rhs[1:7], 0.0)


def test_neumann_rows_zero_flux():
    g = make_grid(1, [8], 0.5, [NEUMANN, DIRICHLET])
    bc = zero_bc(g)
    A = assemble(const_provider([0, 1, 0]), np.zeros(8), g, bc)
    D = A.to_dense()
    assert D[0, 0] == 2.0 and D[0, 1] == -2.0   # (x_0 - x_1)/h with h=0.5
    assert assemble_rhs(np.zeros(8), bc)[0] == 0.0


def test_pinned_cell_gets_identity_row():
    g = make_grid(1, [9], 1.0)
    vals = np.zeros(9)
    vals[4] = 2.5
    bc = BoundaryConditions(g, vals, pins=[4])
    A = assemble(const_provider([-1, 2, -1]), np.zeros(9), g, bc)
    D = A.to_dense()
    row = np.zeros(9)
    row[4] = 1.0
    assert np.array_equal(D[4], row)
    assert assemble_rhs(np.zeros(9), bc)[4] == 2.5


def test_operator_derivatives_linear_net_constant_jacobian(rng):
    g = make_grid(1, [10], 1.0)
    W = rng.normal(size=(3, 3))
    net = MicroNet([3, 3], theta=np.concatenate([W.ravel(), np.zeros(3)]))
    derivs = operator_derivatives(net, rng.normal(size=10), g, zero_bc(g))
    for J in derivs.dC_dx:
        assert np.allclose(J, W)


def test_operator_derivatives_zero_net_bias_block():
    g = make_grid(1, [8], 1.0)
    net = constant_net([3, 3], [0, 0, 0])
    derivs = operator_derivatives(net, np.zeros(8), g, zero_bc(g))
    assert np.allclose(derivs.dC_dx, 0.0)
    assert np.allclose(derivs.dC_dtheta[:, :, :9], 0.0)
    for J in derivs.dC_dtheta:
        assert np.allclose(J[:, 9:], np.eye(3))


def test_operator_derivatives_zeroth_order_matches_assemble(rng):
    g = make_grid(2, [5, 5], 0.25)
    net = MicroNet([9, 4, 9], seed=8)
    x = rng.normal(size=25)
    A = assemble(net, x, g, zero_bc(g))
    derivs = operator_derivatives(net, x, g, zero_bc(g))
    assert np.array_equal(A.vals, derivs.rows)


def test_assembled_rows_directional_derivative_matches_fd(rng):
    g = make_grid(1, [9], 1.0)
    net = MicroNet([3, 5, 3], seed=9)
    x = rng.normal(size=9) * 0.3
    d = rng.normal(size=9)
    h = 1e-7
    Ap = assemble(net, x + h * d, g, zero_bc(g)).vals
    Am = assemble(net, x - h * d, g, zero_bc(g)).vals
    fd = (Ap - Am) / (2 * h)
    derivs = operator_derivatives(net, x, g, zero_bc(g))
    # analytic directional derivative of each row
    drows = np.einsum("mjl,ml->mj", derivs.dC_dx, d[derivs.cols])
    assert np.max(np.abs(fd - drows)) < 1e-6 * max(1.0, np.max(np.abs(fd)))


def _fd_dAdx_transposed(net, g, bc, x, x_next, w, h=1e-7):
    """Dense FD oracle for w^T d(A(x) x_next)/dx."""
    v = np.zeros(len(x))
    for k in range(len(x)):
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        Fp = assemble(net, xp, g, bc).matvec(x_next)
        Fm = assemble(net, xm, g, bc).matvec(x_next)
        v[k] = w @ ((Fp - Fm) / (2 * h))
    return v


def _fd_dAdtheta_transposed(net, g, bc, x, x_next, w, h=1e-7):
    gvec = np.zeros(net.n_params)
    for k in range(net.n_params):
        tp = net.theta.copy(); tp[k] += h
        tm = net.theta.copy(); tm[k] -= h
        Fp = assemble(net.with_theta(tp), x, g, bc).matvec(x_next)
        Fm = assemble(net.with_theta(tm), x, g, bc).matvec(x_next)
        gvec[k] = w @ ((Fp - Fm) / (2 * h))
    return gvec


def test_apply_dAdx_transposed_constant_net_is_zero(rng):
    g = make_grid(1, [8], 1.0)
    net = constant_net([3, 4, 3], [-1, 2, -1])
    derivs = operator_derivatives(net, rng.normal(size=8), g, zero_bc(g))
    out = apply_dAdx_transposed(derivs, rng.normal(size=8), rng.normal(size=8))
    assert np.allclose(out, 0.0)


def test_apply_dAdx_transposed_single_interior_cell(rng):
    # 1x1 interior: scalar chain rule by hand
    g = make_grid(1, [3], 1.0)
    net = MicroNet([3, 3], seed=1)
    x = rng.normal(size=3)
    x_next = rng.normal(size=3)
    w = rng.normal(size=3)
    derivs = operator_derivatives(net, x, g, zero_bc(g))
    out = apply_dAdx_transposed(derivs, x_next, w)
    J = derivs.dC_dx[0]          # (3, 3): d row / d (x_0, x_1, x_2)
    expect = w[1] * (J.T @ x_next)
    assert np.allclose(out, expect)


@pytest.mark.parametrize("make", [
    lambda: (make_grid(1, [7], 0.5), MicroNet([3, 4, 3], seed=3)),
    lambda: (make_grid(2, [5, 5], 0.5), MicroNet([9, 4, 9], seed=5)),
    lambda: (make_grid(2, [5, 5], 0.5, footprint="cross"),
             MicroNet([5, 4, 5], seed=6)),
])
def test_apply_dAdx_transposed_matches_dense_fd(make, rng):
    g, net = make()
    bc = zero_bc(g)
    x = rng.normal(size=g.ncells) * 0.4
    x_next = rng.normal(size=g.ncells)
    w = rng.normal(size=g.ncells)
    derivs = operator_derivatives(net, x, g, bc)
    got = apply_dAdx_transposed(derivs, x_next, w)
    want = _fd_dAdx_transposed(net, g, bc, x, x_next, w)
    assert np.max(np.abs(got - want)) <= 1e-6 * max(1.0, np.max(np.abs(want)))


def test_apply_dAdtheta_transposed_zero_weight_vector(rng):
    g = make_grid(1, [8], 1.0)
    net = MicroNet([3, 4, 3], seed=2)
    derivs = operator_derivatives(net, rng.normal(size=8), g, zero_bc(g))
    out = apply_dAdtheta_transposed(derivs, rng.normal(size=8), np.zeros(8))
    assert np.allclose(out, 0.0)


@pytest.mark.parametrize("make", [
    lambda: (make_grid(1, [7], 0.5), MicroNet([3, 4, 3], seed=13)),
    lambda: (make_grid(2, [5, 5], 0.5), MicroNet([9, 4, 9], seed=15)),
])
def test_apply_dAdtheta_transposed_matches_dense_fd(make, rng):
    g, net = make()
    bc = zero_bc(g)
    x = rng.normal(size=g.ncells) * 0.4
    x_next = rng.normal(size=g.ncells)
    w = rng.normal(size=g.ncells)
    derivs = operator_derivatives(net, x, g, bc)
    got = apply_dAdtheta_transposed(derivs, x_next, w)
    want = _fd_dAdtheta_transposed(net, g, bc, x, x_next, w)
    assert np.max(np.abs(got - want)) <= 1e-6 * max(1.0, np.max(np.abs(want)))


def test_net_input_size_mismatch_is_rejected():
    g = make_grid(2, [5, 5], 0.5)           # full footprint: 9 inputs
    net = MicroNet([5, 4, 5], seed=0)       # cross-sized net
    with pytest.raises(ValueError):
        assemble(net, np.zeros(25), g, zero_bc(g))
