"""Reverse-mode parameter gradient through the unrolled fixed-point solve.

Differentiating A(x_i, theta) x_{i+1} = rhs gives
    d x_{i+1} / d(.) = -A^{-1} (dA/d(.)) x_{i+1},
so each layer costs one transposed solve: with upstream gradient w_{i+1},
lambda = A_i^{-T} w_{i+1}, the theta contribution is
-lambda^T (dA/dtheta) x_{i+1} and the gradient passed down is
-lambda^T (dA/dx_i) x_{i+1}. Fixed rows (identity, one-sided) contribute
nothing. This is the vector-valued restructuring of the layerwise chain rule;
the finite-difference sweeps in the test suite arbitrate its correctness.
"""

import numpy as np

from .assembly import apply_dAdx_transposed, apply_dAdtheta_transposed
from .linsolve import solve_transpose, SolverFailure
from .picard import picard_forward


def backward(net, trajectory, dL_dxN):
    """Accumulate dL/dtheta through all layers of a trajectory."""
    if trajectory.derivs is None:
        raise ValueError("trajectory was run without derivatives")
    dL_dxN = np.asarray(dL_dxN, dtype=float)
    n = trajectory.steps
    g = np.zeros(net.n_params)
    w = dL_dxN.copy()
    for i in range(n - 1, -1, -1):
        A_i = trajectory.matrices[i]
        D_i = trajectory.derivs[i]
        x_next = trajectory.xs[i + 1]
        try:
            lam = solve_transpose(A_i, w)
        except SolverFailure as e:
            raise SolverFailure(f"adjoint layer {i}: {e}",
                                residual=e.residual) from e
        g += apply_dAdtheta_transposed(D_i, x_next, -lam)
        w = apply_dAdx_transposed(D_i, x_next, -lam)
    return g


def _mse_and_grad(pred, target):
    diff = pred - target
    n = diff.size
    return float(diff @ diff) / n, 2.0 * diff / n


def _loss(net, samples, depth, x0s):
    total = 0.0
    for sample, x0 in zip(samples, x0s):
        traj = picard_forward(net, sample.b, sample.bc, x0, depth)
        total += _mse_and_grad(traj.final, sample.target)[0]
    return total / len(samples)


def grad_check(net, samples, depth, h, x0s=None):
    """Max relative error between the adjoint gradient and central differences.

    Sweeps every parameter, so keep the net small (<= a few hundred params).
    """
    samples = list(samples)
    if x0s is None:
        x0s = [np.zeros(s.bc.grid.ncells) for s in samples]
        for x0, s in zip(x0s, samples):
            from .picard import _enforce_prescribed
            _enforce_prescribed(x0, s.bc.grid, s.bc)
    g_adj = np.zeros(net.n_params)
    for sample, x0 in zip(samples, x0s):
        traj = picard_forward(net, sample.b, sample.bc, x0, depth,
                              with_derivatives=True)
        _, dL = _mse_and_grad(traj.final, sample.target)
        g_adj += backward(net, traj, dL) / len(samples)

    theta = net.theta.copy()
    g_fd = np.zeros(net.n_params)
    for j in range(net.n_params):
        tp = theta.copy(); tp[j] += h
        tm = theta.copy(); tm[j] -= h
        lp = _loss(net.with_theta(tp), samples, depth, x0s)
        lm = _loss(net.with_theta(tm), samples, depth, x0s)
        g_fd[j] = (lp - lm) / (2.0 * h)
    denom = np.maximum(1.0, np.abs(g_fd))
    return float(np.max(np.abs(g_adj - g_fd) / denom))
