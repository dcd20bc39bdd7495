"""Classical finite-difference generators: training data and equivalence oracles.

Sign convention throughout: discrete operator rows use the positive-center
form, e.g. (-1, 2, -1)/dp^2 in 1D, so a manufactured right-hand side is
b = rows(target). The learned operator sees only (b, boundary, target)
triples and absorbs whatever scale and sign the convention implies.

The steady solvers here build their matrices by direct slicing and solve
them densely with numpy, independent of the assembly/linsolve path they are
used to check.
"""

from dataclasses import dataclass

import numpy as np

from .grid import Field, BoundaryConditions, DIRICHLET, NEUMANN
from .assembly import assemble, assemble_rhs
from .linsolve import solve
from .picard import picard_forward, CONVERGE
from .cases import get_case, CaseConfig
from .seeding import substream


# -- coefficient and target laws ----------------------------------------

def alpha_values(law, x, positions):
    """Per-cell diffusion coefficient for a named law."""
    if law == "one":
        return np.ones(len(positions))
    if law == "abs_pi_p":
        return 1.0 + np.abs(np.pi * positions[:, 0])
    if law == "one_plus_x2":
        return 1.0 + x ** 2
    if law == "nonlinear_abs_sin":
        return 1.0 + np.abs(x) + np.sin(0.001 * np.abs(x))
    raise ValueError(f"unknown alpha law {law!r}")


def target_values(law, a, positions):
    p = positions
    if law == "quadratic":
        return (a * p[:, 0]) ** 2
    if law == "sine":
        return np.sin(a * p[:, 0])
    if law == "cubic2d":
        return (a * p[:, 0]) ** 3 + a * p[:, 1] ** 2
    if law == "sine2d":
        return np.sin(a * p[:, 0] + a * p[:, 1])
    raise ValueError(f"unknown target law {law!r}")


def boundary_values(law, a, positions):
    p = positions
    if law == "helm_reciprocal":
        return -a / (p[:, 0] ** 2 + p[:, 1] ** 2)
    if law == "helm_sine":
        return a * np.sin(0.02 * p[:, 0] + 0.02 * p[:, 1])
    raise ValueError(f"unknown boundary law {law!r}")


# -- discrete operators (slicing form, independent of assembly) ----------

def neg_laplacian_apply(grid, x):
    """Positive-center Laplacian rows applied to x; zero at boundary cells."""
    h2 = grid.cell_size ** 2
    out = np.zeros(grid.ncells)
    if grid.rank == 1:
        v = x
        out[1:-1] = (-v[:-2] + 2.0 * v[1:-1] - v[2:]) / h2
    else:
        X = x.reshape(grid.shape)
        O = np.zeros(grid.shape)
        O[1:-1, 1:-1] = (4.0 * X[1:-1, 1:-1] - X[:-2, 1:-1] - X[2:, 1:-1]
                         - X[1:-1, :-2] - X[1:-1, 2:]) / h2
        out = O.ravel()
    return out


def bc_from_target(grid, target, pins=(), pin_values=()):
    """Boundary values read off a target field, honoring each cell's kind."""
    vals = np.zeros(grid.ncells)
    h = grid.cell_size
    for b, kind in zip(grid.boundary_idx, grid.boundary_kind):
        if kind == DIRICHLET:
            vals[b] = target[b]
        else:
            vals[b] = (target[b] - target[grid.inward_neighbor(b)]) / h
    for p, pv in zip(pins, pin_values):
        vals[p] = pv
    return BoundaryConditions(grid, vals, pins)


def _dense_system(grid, bc, interior_rows):
    """Full-system dense matrix from a per-interior-row callback."""
    n = grid.ncells
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    h = grid.cell_size
    for b, kind in zip(grid.boundary_idx, grid.boundary_kind):
        if kind == DIRICHLET:
            M[b, b] = 1.0
        else:
            M[b, b] = 1.0 / h
            M[b, grid.inward_neighbor(b)] = -1.0 / h
        rhs[b] = bc.values[b]
    for p in bc.pins:
        M[p, p] = 1.0
        rhs[p] = bc.values[p]
    interior_rows(M, rhs)
    return M, rhs


def _flux_rows(grid, alpha, b, skip=()):
    """Callback filling positive-center flux-form rows with face averages."""
    h2 = grid.cell_size ** 2

    def fill(M, rhs):
        if grid.rank == 1:
            for i in grid.interior_idx:
                if i in skip:
                    continue
                aL = 0.5 * (alpha[i - 1] + alpha[i])
                aR = 0.5 * (alpha[i] + alpha[i + 1])
                M[i, i - 1] = -aL / h2
                M[i, i] = (aL + aR) / h2
                M[i, i + 1] = -aR / h2
                rhs[i] = b[i]
        else:
            n1 = grid.shape[1]
            for i in grid.interior_idx:
                if i in skip:
                    continue
                nb = (i - n1, i - 1, i + 1, i + n1)
                faces = [0.5 * (alpha[i] + alpha[j]) for j in nb]
                M[i, i] = sum(faces) / h2
                for j, fa in zip(nb, faces):
                    M[i, j] = -fa / h2
                rhs[i] = b[i]
    return fill


def solve_poisson(grid, alpha_law, b, bc, tol=1e-12, max_iter=200,
                  x0=None, return_trajectory=False):
    """Flux-form diffusion solve; classical Picard when alpha depends on x.

    tol=0 runs exactly max_iter sweeps (useful for step-for-step comparison).
    """
    positions = grid.positions()
    b = np.asarray(b, dtype=float)
    x = np.zeros(grid.ncells) if x0 is None else np.array(x0, dtype=float)
    nonlinear = alpha_law in ("one_plus_x2", "nonlinear_abs_sin")
    iterates = []
    delta = np.inf
    for it in range(max_iter):
        alpha = alpha_values(alpha_law, x, positions)
        M, rhs = _dense_system(grid, bc, _flux_rows(grid, alpha, b))
        x_new = np.linalg.solve(M, rhs)
        iterates.append(x_new.copy())
        delta = np.linalg.norm(x_new - x, np.inf)
        x = x_new
        if not nonlinear or delta <= tol:
            break
    if nonlinear and tol > 0 and delta > tol:
        raise RuntimeError(f"classical Picard did not converge in {max_iter} "
                           "iterations")
    field = Field(grid, x)
    return (field, iterates) if return_trajectory else field


def solve_helmholtz(grid, bc):
    """Single linear solve of the 5-point Laplacian plus identity term."""
    h2 = grid.cell_size ** 2

    def fill(M, rhs):
        n1 = grid.shape[1] if grid.rank == 2 else None
        for i in grid.interior_idx:
            nb = (i - 1, i + 1) if grid.rank == 1 else (i - n1, i - 1, i + 1, i + n1)
            M[i, i] = len(nb) / h2 - 1.0
            for j in nb:
                M[i, j] = -1.0 / h2
            rhs[i] = 0.0

    M, rhs = _dense_system(grid, bc, fill)
    try:
        x = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as e:
        raise RuntimeError(f"singular Helmholtz system (resonant grid): {e}")
    resid = np.linalg.norm(M @ x - rhs, np.inf)
    if resid > 1e-8 * max(1.0, np.linalg.norm(rhs, np.inf)):
        raise RuntimeError(f"near-singular Helmholtz system, residual {resid:.2e}")
    return Field(grid, x)


# -- wave equation (explicit leapfrog) ------------------------------------

def default_wave_source(t):
    return np.sin(60.0 * t)


def step_wave(x_prev, x_curr, dt, source_law, frame_index):
    """Leapfrog update; the produced frame's center cell is overwritten with
    the source value at its own time frame_index*dt."""
    grid = x_curr.grid
    if dt > grid.cell_size / np.sqrt(2.0):
        raise ValueError(f"dt={dt} violates the CFL bound "
                         f"{grid.cell_size / np.sqrt(2.0)}")
    xp = x_prev.values if isinstance(x_prev, Field) else np.asarray(x_prev)
    xc = x_curr.values
    lap = -neg_laplacian_apply(grid, xc)
    x_next = np.zeros(grid.ncells)
    ii = grid.interior_idx
    x_next[ii] = 2.0 * xc[ii] - xp[ii] + dt * dt * lap[ii]
    center = (grid.shape[0] // 2) * grid.shape[1] + grid.shape[1] // 2
    x_next[center] = source_law(frame_index * dt)
    return Field(grid, x_next)


def wave_frames(case, n_frames, source_law=default_wave_source):
    """Frames 0..n_frames from rest (frame 0 is all zero)."""
    grid = case.build_grid()
    frames = [Field(grid, np.zeros(grid.ncells))]
    prev = Field(grid, np.zeros(grid.ncells))
    for n in range(1, n_frames + 1):
        nxt = step_wave(prev, frames[-1], case.dt, source_law, n)
        prev = frames[-1]
        frames.append(nxt)
    return frames


def wave_energy(x_prev, x_curr, dt):
    """Conserved leapfrog energy of the homogeneous wave update."""
    grid = x_curr.grid
    v = (x_curr.values - x_prev.values) / dt
    lap = -neg_laplacian_apply(grid, x_curr.values)
    return 0.5 * float(v @ v) - 0.5 * float(x_prev.values @ lap)


# -- incompressible flow with a learned/classical projection --------------

def advect_semilagrangian(vel, dt):
    """Backtrace each cell and bilinearly sample; clamps to the domain box."""
    grid = vel.grid
    pos = grid.positions()
    back = pos - dt * vel.values
    h = grid.cell_size
    out = np.zeros_like(vel.values)
    fi = (back - np.array(grid.origin)) / h
    if grid.rank != 2:
        raise ValueError("flow stepping is 2D only")
    n0, n1 = grid.shape
    i0 = np.clip(np.floor(fi[:, 0]).astype(int), 0, n0 - 2)
    j0 = np.clip(np.floor(fi[:, 1]).astype(int), 0, n1 - 2)
    wu = np.clip(fi[:, 0] - i0, 0.0, 1.0)
    wv = np.clip(fi[:, 1] - j0, 0.0, 1.0)
    V = vel.values.reshape(n0, n1, 2)
    for c in range(2):
        out[:, c] = ((1 - wu) * (1 - wv) * V[i0, j0, c]
                     + wu * (1 - wv) * V[i0 + 1, j0, c]
                     + (1 - wu) * wv * V[i0, j0 + 1, c]
                     + wu * wv * V[i0 + 1, j0 + 1, c])
    return Field(grid, out)


def divergence(grid, vel_values):
    """Backward-difference divergence; defined where west/south neighbors exist."""
    n0, n1 = grid.shape
    U = vel_values.reshape(n0, n1, 2)
    div = np.zeros((n0, n1))
    div[1:, 1:] = ((U[1:, 1:, 0] - U[:-1, 1:, 0])
                   + (U[1:, 1:, 1] - U[1:, :-1, 1])) / grid.cell_size
    return div.ravel()


def grad_forward(grid, phi):
    """Forward-difference gradient; defined where east/north neighbors exist."""
    n0, n1 = grid.shape
    P = phi.reshape(n0, n1)
    g = np.zeros((n0, n1, 2))
    g[:-1, :, 0] = (P[1:, :] - P[:-1, :]) / grid.cell_size
    g[:, :-1, 1] = (P[:, 1:] - P[:, :-1]) / grid.cell_size
    return g.reshape(-1, 2)


def ns_pressure_bc(grid):
    return BoundaryConditions(grid, np.zeros(grid.ncells))


def cross_laplacian_provider(grid):
    """Constant positive-center 5-point rows in cross flattening order."""
    h2 = grid.cell_size ** 2
    row = np.array([-1.0, -1.0, 4.0, -1.0, -1.0]) / h2

    def provider(values, positions):
        return np.tile(row, (len(values), 1))
    return provider


def classical_projection(grid, bc=None):
    """Direct pressure solve with the composite div(grad) 5-point operator."""
    bc = bc or ns_pressure_bc(grid)
    A = assemble(cross_laplacian_provider(grid), np.zeros(grid.ncells), grid, bc)

    def provider(rhs_interior):
        return solve(A, assemble_rhs(rhs_interior, bc))
    return provider


def learned_projection(net, grid, bc=None, epsilon=1e-8, cap=50):
    """Projection provider backed by the trained operator in converge mode."""
    bc = bc or ns_pressure_bc(grid)

    def provider(rhs_interior):
        x0 = np.zeros(grid.ncells)
        traj = picard_forward(net, rhs_interior, bc, x0, cap,
                              epsilon=epsilon, mode=CONVERGE)
        return traj.final
    return provider


def ns_step(velocity, dt, body_force=None, projection_provider=None,
            inflow_patch=None):
    """Semi-Lagrangian advection, forcing, then pressure projection.

    Returns (new velocity Field, info dict with the pre-projection rhs and
    the pressure), so dataset generation can record the projection pair.
    """
    grid = velocity.grid
    star = advect_semilagrangian(velocity, dt)
    if body_force is not None:
        star = Field(grid, star.values + dt * np.asarray(body_force))
    if inflow_patch is not None:
        (r0, c0, size, uu, vv) = inflow_patch
        V = star.values.reshape(grid.shape[0], grid.shape[1], 2)
        V[r0:r0 + size, c0:c0 + size, 0] = uu
        V[r0:r0 + size, c0:c0 + size, 1] = vv
        star = Field(grid, V.reshape(-1, 2))
    if projection_provider is None:
        projection_provider = classical_projection(grid)
    rhs = -divergence(grid, star.values)  # positive-center rows
    phi = projection_provider(rhs)
    vnew = star.values - grad_forward(grid, phi)
    return Field(grid, vnew), {"rhs": rhs, "pressure": phi, "star": star}


DEFAULT_INFLOW = (2, 2, 3, 1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))


def simulate_ns(case, n_steps, projection_provider=None):
    """Run the flow from rest; yields per-frame (velocity, info)."""
    grid = case.build_grid()
    if projection_provider is None:
        projection_provider = classical_projection(grid)
    vel = Field(grid, np.zeros((grid.ncells, 2)))
    frames = []
    for _ in range(n_steps):
        vel, info = ns_step(vel, case.dt, projection_provider=projection_provider,
                            inflow_patch=DEFAULT_INFLOW)
        frames.append((vel, info))
    return grid, frames


# -- noise ----------------------------------------------------------------

def add_noise(field, scale, seed, index=0):
    """Uniform noise in +-(scale * max|field|), seeded."""
    if not 0.0 <= scale <= 0.35:
        raise ValueError("noise scale must be within [0, 0.35]")
    if scale == 0.0:
        return field.copy()
    rng = substream(seed, "noise", index)
    amp = scale * np.max(np.abs(field.values))
    return Field(field.grid, field.values
                 + rng.uniform(-amp, amp, size=field.values.shape))


# -- datasets --------------------------------------------------------------

@dataclass
class Sample:
    b: np.ndarray
    bc: BoundaryConditions
    target: np.ndarray
    clean: np.ndarray


@dataclass
class Dataset:
    case: CaseConfig
    grid: object
    samples: list


def _draw_distinct(rng, lo, hi, n, taken=()):
    vals = []
    taken = set(float(t) for t in taken)
    while len(vals) < n:
        a = float(rng.uniform(lo, hi))
        if a not in taken:
            taken.add(a)
            vals.append(a)
    return vals


def _steady_sample(case, grid, a, rng):
    """One (b, bc, clean target) triple for a steady case."""
    positions = grid.positions()
    eq = case.equation
    if eq.startswith("poisson1d_sine") or eq in ("poisson1d_quadratic",
                                                 "poisson2d_cubic",
                                                 "poisson2d_sine"):
        target = target_values(case.target_law, a, positions)
        b = neg_laplacian_apply(grid, target)
        bc = bc_from_target(grid, target)
    elif eq == "poisson1d_neumann":
        # zero-RHS Laplace: a is the ramp slope, the anchor value is drawn too
        anchor = float(rng.uniform(-1.0, 1.0))
        target = anchor + a * (positions[:, 0] - positions[-1, 0])
        b = np.zeros(grid.ncells)
        bc = bc_from_target(grid, target)
    elif eq in ("poisson1d_varying", "poisson1d_nonlinear"):
        vals = np.zeros(grid.ncells)
        vals[grid.boundary_idx] = rng.uniform(-1.0, 1.0, len(grid.boundary_idx))
        vals[grid.boundary_idx[0]] = a  # keep samples distinct through a
        bc = BoundaryConditions(grid, vals)
        b = np.zeros(grid.ncells)
        target = solve_poisson(grid, case.alpha_law, b, bc).values
    elif eq in ("helmholtz_reciprocal", "helmholtz_sine"):
        vals = np.zeros(grid.ncells)
        vals[grid.boundary_idx] = boundary_values(
            case.boundary_law, a, positions[grid.boundary_idx])
        bc = BoundaryConditions(grid, vals)
        b = np.zeros(grid.ncells)
        target = solve_helmholtz(grid, bc).values
    else:
        raise ValueError(f"no steady sample recipe for {eq!r}")
    return b, bc, target


def generate_samples(case, n, stream, taken_a=()):
    """Steady-case samples with distinct coefficients from a named substream."""
    grid = case.build_grid()
    samples = []
    rng0 = substream(case.seed, stream)
    a_values = _draw_distinct(rng0, case.a_range[0], case.a_range[1], n, taken_a)
    for i, a in enumerate(a_values):
        rng = substream(case.seed, stream, i + 1)
        b, bc, clean = _steady_sample(case, grid, a, rng)
        target = clean
        if case.noise > 0 and stream == "data":
            target = add_noise(Field(grid, clean), case.noise, case.seed,
                               index=i).values
        samples.append(Sample(b=b, bc=bc, target=target, clean=clean))
    return grid, samples, a_values


def _wave_dataset(case):
    grid = case.build_grid()
    frames = wave_frames(case, case.n_frames)
    pins = case.pin_cells()
    samples = []
    for n in range(1, case.n_frames + 1):
        prev2 = frames[n - 2].values if n >= 2 else np.zeros(grid.ncells)
        b = 2.0 * frames[n - 1].values - prev2
        target = frames[n].values
        bc = bc_from_target(grid, target, pins=pins,
                            pin_values=[target[p] for p in pins])
        samples.append(Sample(b=b, bc=bc, target=target, clean=target))
    return Dataset(case, grid, samples)


def _ns_dataset(case):
    grid, frames = simulate_ns(case, case.n_frames)
    bc = ns_pressure_bc(grid)
    samples = []
    for _, info in frames:
        samples.append(Sample(b=info["rhs"], bc=bc,
                              target=info["pressure"], clean=info["pressure"]))
    return Dataset(case, grid, samples)


def make_dataset(case):
    case.validate()
    if case.equation == "wave2d":
        return _wave_dataset(case)
    if case.equation == "ns_projection":
        return _ns_dataset(case)
    grid, samples, _ = generate_samples(case, case.n_train, "data")
    return Dataset(case, grid, samples)


def make_test_samples(case, n_tests):
    """Fresh clean cases with coefficients disjoint from the training draw."""
    rng0 = substream(case.seed, "data")
    train_a = _draw_distinct(rng0, case.a_range[0], case.a_range[1], case.n_train)
    grid, samples, _ = generate_samples(case, n_tests, "test", taken_a=train_a)
    return grid, samples


# -- rollout twins (learned operator vs classical generator) ---------------

def rollout_wave(net, case, source_law=default_wave_source):
    """Predict frames n_frames+1 .. n_frames+n_rollout with the trained
    operator, feeding back its own predictions; returns per-frame MSE against
    the classical leapfrog frames, plus both frame sets."""
    n_total = case.n_frames + case.n_rollout
    frames = wave_frames(case, n_total, source_law)
    grid = frames[0].grid
    pins = case.pin_cells()
    preds = {n: frames[n].values for n in range(case.n_frames + 1)}
    mses = []
    for n in range(case.n_frames + 1, n_total + 1):
        b = 2.0 * preds[n - 1] - preds[n - 2]
        vals = np.zeros(grid.ncells)
        for p in pins:
            vals[p] = source_law(n * case.dt)
        bc = BoundaryConditions(grid, vals, pins)
        x0 = np.zeros(grid.ncells)
        for p in pins:
            x0[p] = vals[p]
        traj = picard_forward(net, b, bc, x0, 50, epsilon=1e-8, mode=CONVERGE)
        preds[n] = traj.final
        diff = preds[n] - frames[n].values
        mses.append(float(diff @ diff) / grid.ncells)
    return mses, preds, frames


def rollout_ns(net, case):
    """Step the flow with the learned projection alongside the classical one.

    Returns (per-frame velocity MSE over the rollout window, per-frame
    post-projection divergence of the classical run, learned frames,
    classical frames).
    """
    n_total = case.n_frames + case.n_rollout
    grid = case.build_grid()
    bc = ns_pressure_bc(grid)
    classical = classical_projection(grid, bc)
    learned = learned_projection(net, grid, bc)
    vel_c = Field(grid, np.zeros((grid.ncells, 2)))
    vel_l = Field(grid, np.zeros((grid.ncells, 2)))
    mses, divs = [], []
    frames_l, frames_c = [], []
    for frame in range(1, n_total + 1):
        vel_c, _ = ns_step(vel_c, case.dt, projection_provider=classical,
                           inflow_patch=DEFAULT_INFLOW)
        vel_l, _ = ns_step(vel_l, case.dt, projection_provider=learned,
                           inflow_patch=DEFAULT_INFLOW)
        divs.append(float(np.max(np.abs(
            divergence(grid, vel_c.values)[grid.interior_idx]))))
        if frame > case.n_frames:
            diff = (vel_l.values - vel_c.values).ravel()
            mses.append(float(diff @ diff) / diff.size)
            frames_l.append(vel_l)
            frames_c.append(vel_c)
    return mses, divs, frames_l, frames_c


# -- dataset file format (bit-exact text) ----------------------------------

def _fmt(values):
    return " ".join(f"{v:.17g}" for v in np.asarray(values).ravel())


def save_dataset(ds, path):
    case = ds.case
    shape = "x".join(str(n) for n in case.shape)
    lines = [f"grid={case.rank}:{shape}", "channels=1",
             f"samples={len(ds.samples)}", f"case={case.equation}"]
    for s in ds.samples:
        lines += ["b:", _fmt(s.b), "bc:", _fmt(s.bc.values),
                  "target:", _fmt(s.target), "clean:", _fmt(s.clean)]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path, case=None):
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    header = dict(ln.split("=", 1) for ln in lines[:4])
    tag = header["case"]
    rank, shape = header["grid"].split(":")
    shape = tuple(int(t) for t in shape.split("x"))
    if case is None:
        case = get_case(tag)
    if case.equation != tag or case.shape != shape:
        raise ValueError(f"dataset {path} was generated for case {tag} "
                         f"on grid {shape}, got config for {case.equation} "
                         f"{case.shape}")
    grid = case.build_grid()
    pins = case.pin_cells()
    n_samples = int(header["samples"])
    body = lines[4:]
    samples = []
    for k in range(n_samples):
        block = body[8 * k: 8 * (k + 1)]
        fields = {}
        for label_line, value_line in zip(block[::2], block[1::2]):
            fields[label_line.rstrip(":")] = np.array(
                [float(t) for t in value_line.split()])
        bc = BoundaryConditions(grid, fields["bc"], pins=pins)
        samples.append(Sample(b=fields["b"], bc=bc, target=fields["target"],
                              clean=fields["clean"]))
    return Dataset(case, grid, samples)
