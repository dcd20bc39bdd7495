"""Forward fixed-point loop: repeatedly solve the operator frozen at the last iterate.

Training unrolls a fixed number of steps (so the backward pass sees a fixed
computation graph); inference iterates until the sup-norm update drops below
epsilon or a cap is hit. For training the per-step matrices and row Jacobians
are retained for the adjoint pass.
"""

import numpy as np

from .assembly import assemble, assemble_rhs, operator_derivatives
from .linsolve import solve, SolverFailure
from .micronet import MicroNet
from .seeding import substream

FIXED = "fixed"
CONVERGE = "converge"


class Trajectory:
    """Iterates x_0..x_N with per-step operators retained for the backward pass."""

    def __init__(self, xs, residuals, matrices, derivs, mode, converged):
        self.xs = xs
        self.residuals = residuals
        self.matrices = matrices
        self.derivs = derivs
        self.mode = mode
        self.converged = converged

    @property
    def steps(self):
        return len(self.matrices)

    @property
    def final(self):
        return self.xs[-1]


def initial_guess(grid, bc, seed, index=0):
    """Seeded uniform start in +-0.1 with prescribed cells set to their values."""
    rng = substream(seed, "x0", index)
    x0 = rng.uniform(-0.1, 0.1, size=grid.ncells)
    _enforce_prescribed(x0, grid, bc)
    return x0


def _enforce_prescribed(x, grid, bc):
    for b, kind in zip(grid.boundary_idx, grid.boundary_kind):
        if kind == "dirichlet":
            x[b] = bc.values[b]
    if len(bc.pins):
        x[bc.pins] = bc.values[bc.pins]


def picard_forward(source, b, bc, x0, depth, epsilon=1e-8, mode=FIXED,
                   with_derivatives=False, backend=None):
    """Iterate x_{n+1} = A(x_n)^{-1} rhs with b held fixed across steps.

    mode="fixed": exactly `depth` steps (the training unroll).
    mode="converge": stop once ||x_n - x_{n-1}||_inf <= epsilon, cap `depth`.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if mode not in (FIXED, CONVERGE):
        raise ValueError(f"unknown mode {mode!r}")
    grid = bc.grid
    x = np.array(x0, dtype=float)
    if x.shape != (grid.ncells,):
        raise ValueError("x0 shape does not match grid")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 contains non-finite values")
    rhs = assemble_rhs(b, bc)
    xs = [x.copy()]
    residuals, matrices, derivs = [], [], []
    converged = None if mode == FIXED else False
    for step in range(depth):
        A = assemble(source, x, grid, bc)
        if with_derivatives:
            if not isinstance(source, MicroNet):
                raise TypeError("derivatives require a MicroNet source")
            derivs.append(operator_derivatives(source, x, grid, bc))
        try:
            x_next = solve(A, rhs, backend=backend)
        except SolverFailure as e:
            raise SolverFailure(f"Picard step {step}: {e}",
                                residual=e.residual) from e
        if not np.all(np.isfinite(x_next)):
            raise SolverFailure(f"Picard step {step}: non-finite iterate")
        residuals.append(float(np.linalg.norm(x_next - x, np.inf)))
        matrices.append(A)
        xs.append(x_next.copy())
        x = x_next
        if mode == CONVERGE and residuals[-1] <= epsilon:
            converged = True
            break
    return Trajectory(xs, residuals, matrices,
                      derivs if with_derivatives else None, mode, converged)
