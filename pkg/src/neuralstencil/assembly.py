"""Row-structured global operator built by evaluating the stencil network per cell.

Full-system form: the matrix is ncells x ncells. Interior cells get one row
each from the network (or any row provider); Dirichlet boundary cells and
pinned cells get identity rows; Neumann boundary cells get first-order
one-sided difference rows. The right-hand side pairs with this layout.
"""

import numpy as np
import scipy.sparse as sp

from .grid import Field, NEUMANN, DIRICHLET
from .micronet import MicroNet, build_inputs, input_size


def _field_values(x):
    return x.values if isinstance(x, Field) else np.asarray(x, dtype=float)


def _net_row_cells(grid, bc):
    """Cells whose rows come from the row provider: interior minus pins."""
    if len(bc.pins) == 0:
        return grid.interior_idx
    keep = ~np.isin(grid.interior_idx, bc.pins)
    return grid.interior_idx[keep]


def _row_inputs(source, xv, grid, rows_idx, cols):
    values = xv[cols]
    positions = None
    needs_pos = isinstance(source, MicroNet) and source.input_mode != "values"
    if needs_pos or not isinstance(source, MicroNet):
        positions = grid.positions()[cols]  # (m, k, rank)
    if isinstance(source, MicroNet):
        expected = input_size(grid.footprint.size, grid.rank, source.input_mode)
        if source.in_size != expected:
            raise ValueError(
                f"net input size {source.in_size} does not match footprint "
                f"{grid.footprint.size} with mode {source.input_mode!r} "
                f"(expected {expected})")
        return build_inputs(values, positions, source.input_mode), values, positions
    return None, values, positions


class RowMatrix:
    """Sparse operator stored as (column indices, stencil values) per net row."""

    def __init__(self, grid, bc, rows_idx, cols, vals):
        k = grid.footprint.size
        if cols.shape != vals.shape or cols.shape[1] != k:
            raise ValueError("row storage shape mismatch")
        if not np.all(np.isfinite(vals)):
            raise ValueError("stencil values must be finite")
        self.grid = grid
        self.bc = bc
        self.rows_idx = rows_idx
        self.cols = cols
        self.vals = vals
        self.n = grid.ncells
        self.shape = (self.n, self.n)
        self._csr = None
        self._fact = None  # linsolve attaches its factorization here

    def _fixed_entries(self):
        """(row, col, val) triplets of the non-learned rows."""
        grid, bc = self.grid, self.bc
        rows, cols, vals = [], [], []
        inv_h = 1.0 / grid.cell_size
        for b, kind in zip(grid.boundary_idx, grid.boundary_kind):
            if kind == DIRICHLET:
                rows.append(b); cols.append(b); vals.append(1.0)
            else:  # one-sided outward difference (x_b - x_inward)/h
                nb = grid.inward_neighbor(b)
                rows += [b, b]; cols += [b, nb]; vals += [inv_h, -inv_h]
        for p in bc.pins:
            rows.append(p); cols.append(p); vals.append(1.0)
        return rows, cols, vals

    @property
    def csr(self):
        if self._csr is None:
            fr, fc, fv = self._fixed_entries()
            m = len(self.rows_idx)
            k = self.cols.shape[1]
            r = np.concatenate([np.repeat(self.rows_idx, k), fr])
            c = np.concatenate([self.cols.ravel(), fc])
            v = np.concatenate([self.vals.ravel(), fv])
            self._csr = sp.csr_matrix((v, (r, c)), shape=self.shape)
        return self._csr

    def matvec(self, x):
        return self.csr @ x

    def rmatvec(self, w):
        return self.csr.T @ w

    def to_dense(self):
        return self.csr.toarray()


class OperatorDerivatives:
    """Per net row: d(row)/d(neighborhood values) and d(row)/d(theta)."""

    def __init__(self, rows_idx, cols, rows, dC_dx, dC_dtheta):
        self.rows_idx = rows_idx
        self.cols = cols
        self.rows = rows          # row values at the evaluation point
        self.dC_dx = dC_dx        # (m, k_out, k_vals)
        self.dC_dtheta = dC_dtheta  # (m, k_out, n_params)


def assemble(source, x, grid, bc):
    """Build the operator at linearization point x.

    source is a MicroNet, or any callable (values, positions) -> rows taking
    gathered neighborhood values (m, k) and positions (m, k, rank).
    """
    xv = _field_values(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("linearization point contains non-finite values")
    rows_idx = _net_row_cells(grid, bc)
    table = grid.neighborhood_table()
    if len(bc.pins):
        keep = ~np.isin(grid.interior_idx, bc.pins)
        table = table[keep]
    inputs, values, positions = _row_inputs(source, xv, grid, rows_idx, table)
    if isinstance(source, MicroNet):
        vals = source.forward_batch(inputs)
    else:
        vals = np.asarray(source(values, positions), dtype=float)
    return RowMatrix(grid, bc, rows_idx, table, vals)


def assemble_rhs(b, bc):
    """Right-hand side matching the full-system row layout."""
    grid = bc.grid
    bv = _field_values(b)
    if bv.shape != (grid.ncells,):
        raise ValueError(f"rhs field must have shape ({grid.ncells},)")
    rhs = np.zeros(grid.ncells)
    rows_idx = _net_row_cells(grid, bc)
    rhs[rows_idx] = bv[rows_idx]
    rhs[grid.boundary_idx] = bc.values[grid.boundary_idx]
    if len(bc.pins):
        rhs[bc.pins] = bc.values[bc.pins]
    return rhs


def operator_derivatives(net, x, grid, bc):
    """Row Jacobians at the same inputs assemble() uses."""
    if not isinstance(net, MicroNet):
        raise TypeError("operator derivatives need a MicroNet row source")
    xv = _field_values(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("linearization point contains non-finite values")
    rows_idx = _net_row_cells(grid, bc)
    table = grid.neighborhood_table()
    if len(bc.pins):
        keep = ~np.isin(grid.interior_idx, bc.pins)
        table = table[keep]
    inputs, _, _ = _row_inputs(net, xv, grid, rows_idx, table)
    rows = net.forward_batch(inputs)
    k = grid.footprint.size
    # value-dependence only: position inputs do not vary with x
    dC_dx = net.jacobian_input_batch(inputs)[:, :, :k]
    dC_dtheta = net.jacobian_params_batch(inputs)
    return OperatorDerivatives(rows_idx, table, rows, dC_dx, dC_dtheta)


def apply_dAdx_transposed(derivs, x_next, w):
    """v with v = w^T d(A x_next)/dx, accumulated through the sparse rows.

    Row i contributes w_i * (dC_i/dx)^T * x_next|footprint, scattered to the
    footprint cells of row i. Fixed rows contribute nothing (x-independent).
    """
    xn = np.asarray(x_next)[derivs.cols]                  # (m, k)
    t = np.einsum("mjl,mj->ml", derivs.dC_dx, xn)         # (m, k_vals)
    out = np.zeros(len(x_next))
    np.add.at(out, derivs.cols, np.asarray(w)[derivs.rows_idx][:, None] * t)
    return out


def apply_dAdtheta_transposed(derivs, x_next, w):
    """Gradient over theta: sum_i w_i * (dC_i/dtheta)^T * x_next|footprint."""
    xn = np.asarray(x_next)[derivs.cols]
    return np.einsum("mjp,mj,m->p", derivs.dC_dtheta, xn,
                     np.asarray(w)[derivs.rows_idx])
