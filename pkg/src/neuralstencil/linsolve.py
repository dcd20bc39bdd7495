"""Direct and iterative solves for the row-structured operator and its transpose.

Default backend is a pivoted direct factorization (dense below _DENSE_LIMIT
unknowns, sparse LU above; both deterministic). A hand-rolled BiCGSTAB is
selectable for larger systems. Every solve is checked against the residual
contract and raises SolverFailure (carrying the residual) instead of
returning a bad solution. Factorizations are cached on the matrix, so the
transposed solves of the backward pass reuse the forward factorization.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

_DENSE_LIMIT = 1100
RESIDUAL_RTOL = 1e-10


class SolverFailure(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def _factorize(A, backend):
    if A._fact is not None and A._fact[0] == backend:
        return A._fact[1]
    try:
        if backend == "dense":
            fact = sla.lu_factor(A.to_dense())
        else:
            fact = spla.splu(A.csr.tocsc())
    except (ValueError, RuntimeError) as e:
        raise SolverFailure(f"factorization failed: {e}") from e
    A._fact = (backend, fact)
    return fact


def _direct_solve(A, rhs, backend, transpose):
    fact = _factorize(A, backend)
    if backend == "dense":
        return sla.lu_solve(fact, rhs, trans=1 if transpose else 0)
    return fact.solve(rhs, trans="T" if transpose else "N")


def _bicgstab(matvec, b, tol=1e-12, maxiter=None):
    n = len(b)
    if maxiter is None:
        maxiter = 10 * n
    x = np.zeros(n)
    r = b - matvec(x)
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    bnorm = max(1.0, np.linalg.norm(b, np.inf))
    for _ in range(maxiter):
        if np.linalg.norm(r, np.inf) <= tol * bnorm:
            return x
        rho_new = rhat @ r
        if abs(rho_new) < 1e-300:
            raise SolverFailure("BiCGSTAB breakdown (rho ~ 0)")
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = matvec(p)
        denom = rhat @ v
        if abs(denom) < 1e-300:
            raise SolverFailure("BiCGSTAB breakdown (rhat.v ~ 0)")
        alpha = rho / denom
        s = r - alpha * v
        t = matvec(s)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x = x + alpha * p + omega * s
        r = s - omega * t
        if omega == 0.0:
            raise SolverFailure("BiCGSTAB breakdown (omega = 0)")
    if np.linalg.norm(r, np.inf) <= tol * bnorm:
        return x
    raise SolverFailure("BiCGSTAB did not converge",
                        residual=float(np.linalg.norm(r, np.inf)))


def _solve_checked(A, rhs, backend, transpose):
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (A.n,):
        raise ValueError(f"rhs must have shape ({A.n},)")
    apply_op = A.rmatvec if transpose else A.matvec
    if backend == "bicgstab":
        x = _bicgstab(apply_op, rhs)
    else:
        x = _direct_solve(A, rhs, backend, transpose)
        # one round of iterative refinement keeps poorly scaled trained
        # systems inside the residual contract
        for _ in range(2):
            r = rhs - apply_op(x)
            if not np.all(np.isfinite(r)):
                break
            if np.linalg.norm(r, np.inf) <= RESIDUAL_RTOL * max(1.0, np.linalg.norm(rhs, np.inf)):
                break
            x = x + _direct_solve(A, r, backend, transpose)
    if not np.all(np.isfinite(x)):
        raise SolverFailure("solver produced non-finite values")
    resid = float(np.linalg.norm(rhs - apply_op(x), np.inf))
    tol = RESIDUAL_RTOL * max(1.0, float(np.linalg.norm(rhs, np.inf)))
    if resid > tol:
        raise SolverFailure(
            f"residual {resid:.3e} above tolerance {tol:.3e} "
            "(singular or severely ill-conditioned system)", residual=resid)
    return x


def default_backend(n):
    return "dense" if n <= _DENSE_LIMIT else "sparse"


def solve(A, rhs, backend=None):
    """Solve A x = rhs to the residual contract; deterministic given inputs."""
    return _solve_checked(A, rhs, backend or default_backend(A.n), transpose=False)


def solve_transpose(A, rhs, backend=None):
    """Solve A^T x = rhs, reusing A's cached factorization when direct."""
    return _solve_checked(A, rhs, backend or default_backend(A.n), transpose=True)
