"""Uniform structured grids: boundary bookkeeping and local neighborhood extraction.

Cells are nodes of a uniform 1D or 2D lattice, indexed row-major. The outermost
layer of cells is the boundary; everything else is interior. Positions are
physical coordinates (origin + index * cell_size), not integer indices.
"""

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# Footprint flattening orders. Row-major over offsets, center included; the
# same order is used by neighborhood(), gather(), assembly and the network
# input construction, so the three never disagree on which entry is which.
OFFSETS_1D = ((-1,), (0,), (1,))
OFFSETS_2D_FULL = tuple((du, dv) for du in (-1, 0, 1) for dv in (-1, 0, 1))
OFFSETS_2D_CROSS = ((-1, 0), (0, -1), (0, 0), (0, 1), (1, 0))


class Footprint:
    """Fixed set of index offsets defining the neighborhood of an interior cell."""

    def __init__(self, offsets):
        offsets = tuple(tuple(o) for o in offsets)
        if len(set(offsets)) != len(offsets):
            raise ValueError("footprint offsets must be distinct")
        zero = tuple([0] * len(offsets[0]))
        if zero not in offsets:
            raise ValueError("footprint must include the zero offset")
        self.offsets = offsets
        self.size = len(offsets)
        self.center = offsets.index(zero)

    @staticmethod
    def for_rank(rank, kind="full"):
        if rank == 1:
            return Footprint(OFFSETS_1D)
        if kind == "full":
            return Footprint(OFFSETS_2D_FULL)
        if kind == "cross":
            return Footprint(OFFSETS_2D_CROSS)
        raise ValueError(f"unknown footprint kind {kind!r}")


class Grid:
    """Uniform 1D/2D lattice with one-cell-thick boundary layer.

    Parameters
    ----------
    rank : 1 or 2
    shape : tuple of cell counts per axis, each >= 3
    cell_size : uniform spacing between cells, > 0
    boundary_kind : "dirichlet", "neumann", or a sequence with one entry per
        boundary cell (in boundary_idx order)
    origin : physical coordinate of cell (0,...,0)
    footprint : "full" (3 points in 1D, 3x3 in 2D) or "cross" (5-point, 2D only)
    """

    def __init__(self, rank, shape, cell_size, boundary_kind=DIRICHLET,
                 origin=None, footprint="full"):
        if rank not in (1, 2):
            raise ValueError(f"rank must be 1 or 2, got {rank}")
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        if len(shape) != rank:
            raise ValueError(f"shape {shape} does not match rank {rank}")
        if any(n < 3 for n in shape):
            raise ValueError(f"every shape component must be >= 3, got {shape}")
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        self.rank = rank
        self.shape = shape
        self.cell_size = float(cell_size)
        self.origin = tuple(float(v) for v in (origin or [0.0] * rank))
        self.ncells = int(np.prod(shape))
        self.footprint = Footprint.for_rank(rank, footprint)

        idx = np.arange(self.ncells)
        if rank == 1:
            onb = (idx == 0) | (idx == shape[0] - 1)
        else:
            iu, iv = np.divmod(idx, shape[1])
            onb = (iu == 0) | (iu == shape[0] - 1) | (iv == 0) | (iv == shape[1] - 1)
        self.boundary_mask = onb
        self.interior_idx = idx[~onb]
        self.boundary_idx = idx[onb]

        if isinstance(boundary_kind, str):
            kinds = [boundary_kind] * len(self.boundary_idx)
        else:
            kinds = list(boundary_kind)
            if len(kinds) != len(self.boundary_idx):
                raise ValueError("boundary_kind sequence length must equal the "
                                 f"boundary cell count {len(self.boundary_idx)}")
        for k in kinds:
            if k not in (DIRICHLET, NEUMANN):
                raise ValueError(f"unknown boundary kind {k!r}")
        self.boundary_kind = np.array(kinds, dtype=object)

    def multi_index(self, i):
        if self.rank == 1:
            return (i,)
        return divmod(i, self.shape[1])

    def flat_index(self, mi):
        if self.rank == 1:
            return int(mi[0])
        return int(mi[0]) * self.shape[1] + int(mi[1])

    def positions(self):
        """Physical coordinates of every cell, shape (ncells, rank)."""
        if self.rank == 1:
            p = self.origin[0] + self.cell_size * np.arange(self.shape[0])
            return p[:, None]
        iu, iv = np.divmod(np.arange(self.ncells), self.shape[1])
        return np.column_stack([self.origin[0] + self.cell_size * iu,
                                self.origin[1] + self.cell_size * iv])

    def is_interior(self, i):
        return not self.boundary_mask[i]

    def inward_neighbor(self, b):
        """Nearest inward cell of a boundary cell (diagonal at corners)."""
        mi = list(self.multi_index(b))
        for a in range(self.rank):
            if mi[a] == 0:
                mi[a] = 1
            elif mi[a] == self.shape[a] - 1:
                mi[a] -= 1
        return self.flat_index(mi)

    def neighborhood_table(self):
        """Footprint cell indices for every interior cell, shape (n_int, k).

        Row order follows interior_idx; column order is the footprint
        flattening order.
        """
        offs = np.array(self.footprint.offsets)  # (k, rank)
        if self.rank == 1:
            return self.interior_idx[:, None] + offs[:, 0][None, :]
        iu, iv = np.divmod(self.interior_idx, self.shape[1])
        nu = iu[:, None] + offs[:, 0][None, :]
        nv = iv[:, None] + offs[:, 1][None, :]
        return nu * self.shape[1] + nv


def make_grid(rank, shape, cell_size, boundary_kind=DIRICHLET, **kw):
    """Build a Grid; rejects shapes < 3 and nonpositive cell_size."""
    return Grid(rank, shape, cell_size, boundary_kind, **kw)


def neighborhood(grid, cell_index):
    """Footprint cell indices of an interior cell, in flattening order."""
    if grid.boundary_mask[cell_index]:
        raise ValueError(f"cell {cell_index} is a boundary cell")
    offs = grid.footprint.offsets
    mi = grid.multi_index(cell_index)
    return [grid.flat_index(tuple(m + d for m, d in zip(mi, o))) for o in offs]


def gather(field, cell_index):
    """Field values on the footprint of an interior cell, in flattening order."""
    values = field.values if isinstance(field, Field) else np.asarray(field)
    grid = field.grid if isinstance(field, Field) else None
    if grid is None:
        raise ValueError("gather needs a Field (carries its grid)")
    return values[neighborhood(grid, cell_index)]


class Field:
    """Per-cell values on a grid; one column per channel, scalar by default."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            if values.size != grid.ncells:
                raise ValueError(f"expected {grid.ncells} values, got {values.size}")
        elif values.ndim == 2:
            if values.shape[0] != grid.ncells:
                raise ValueError(f"expected {grid.ncells} rows, got {values.shape[0]}")
        else:
            raise ValueError("field values must be 1D or 2D")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    @property
    def channels(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def copy(self):
        return Field(self.grid, self.values.copy())


class BoundaryConditions:
    """Prescribed values on boundary cells, plus optional pinned interior cells.

    values[i] means: the Dirichlet value at Dirichlet cells, the prescribed
    outward normal difference (x_b - x_inward)/cell_size at Neumann cells.
    Entries at interior cells are ignored unless the cell is pinned; a pinned
    cell gets an identity row at values[i], like an interior Dirichlet cell.
    """

    def __init__(self, grid, values, pins=()):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.ncells,):
            raise ValueError(f"bc values must have shape ({grid.ncells},)")
        self.grid = grid
        self.values = values
        self.pins = np.array(sorted(int(p) for p in pins), dtype=int)
        for p in self.pins:
            if grid.boundary_mask[p]:
                raise ValueError(f"pin {p} is a boundary cell; use boundary_kind")

    @staticmethod
    def dirichlet_from(field_values, grid, pins=(), pin_values=()):
        v = np.zeros(grid.ncells)
        v[grid.boundary_idx] = np.asarray(field_values)[grid.boundary_idx]
        for p, pv in zip(pins, pin_values):
            v[p] = pv
        return BoundaryConditions(grid, v, pins)

    def fixed_rows(self):
        """Indices of cells whose system row is not produced by the stencil net."""
        return np.concatenate([self.grid.boundary_idx, self.pins])
