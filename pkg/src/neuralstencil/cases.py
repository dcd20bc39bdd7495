"""Experiment recipes: one CaseConfig per supported equation setup.

The registry records, per case, the grid, physical domain, coefficient and
target laws, sample counts, unroll depth, network architecture and the
architecture's parameter count. Flat key=value config files (dotted keys)
override registry defaults.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid, DIRICHLET, NEUMANN
from .micronet import param_count, input_size, VALUES, VALUES_POSITION


class ConfigError(ValueError):
    pass


ALPHA_LAWS = ("one", "abs_pi_p", "one_plus_x2", "nonlinear_abs_sin")
TARGET_LAWS = ("quadratic", "sine", "ramp", "cubic2d", "sine2d", "solve")
BOUNDARY_LAWS = ("from_target", "random_values", "helm_reciprocal", "helm_sine",
                 "zero")


@dataclass
class CaseConfig:
    equation: str
    shape: tuple
    domain: tuple                 # ((lo, hi), ...) per axis
    net_layers: tuple
    table_params: int
    footprint: str = "full"
    input_mode: str = VALUES
    alpha_law: str = "one"
    target_law: str = "solve"
    boundary_law: str = "from_target"
    a_range: tuple = (0.5, 2.0)
    noise: float = 0.0
    n_train: int = 4
    n_test: int = 16
    depth: int = 2
    seed: int = 0
    dt: float = None
    n_frames: int = None          # training frames (time-dependent cases)
    n_rollout: int = None         # prediction frames (time-dependent cases)
    train_tolerance: float = 1e-12
    max_rounds: int = 10
    handoff_jitter: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def rank(self):
        return len(self.shape)

    @property
    def cell_size(self):
        sizes = [(hi - lo) / (n - 1) for (lo, hi), n in zip(self.domain, self.shape)]
        if len(sizes) == 2 and abs(sizes[0] - sizes[1]) > 1e-12 * abs(sizes[0]):
            raise ConfigError("domain/shape imply unequal cell sizes per axis")
        return sizes[0]

    @property
    def time_dependent(self):
        return self.equation in ("wave2d", "ns_projection")

    def build_grid(self):
        origin = tuple(lo for lo, _ in self.domain)
        kinds = self._boundary_kinds()
        return Grid(self.rank, self.shape, self.cell_size, kinds,
                    origin=origin, footprint=self.footprint)

    def _boundary_kinds(self):
        if self.equation == "poisson1d_neumann":
            # left endpoint carries the prescribed normal difference, right
            # endpoint anchors the value
            return [NEUMANN, DIRICHLET]
        if self.equation == "ns_projection":
            # pressure: homogeneous Neumann walls, one corner anchored
            n_b = 2 * (self.shape[0] + self.shape[1]) - 4
            tmp = Grid(self.rank, self.shape, self.cell_size, DIRICHLET,
                       footprint=self.footprint)
            kinds = [NEUMANN] * n_b
            kinds[list(tmp.boundary_idx).index(0)] = DIRICHLET
            return kinds
        return DIRICHLET

    def pin_cells(self):
        """Interior cells carrying identity rows (the wave source cell)."""
        if self.equation == "wave2d":
            center = (self.shape[0] // 2) * self.shape[1] + self.shape[1] // 2
            return (center,)
        return ()

    def validate(self):
        if self.equation not in REGISTRY:
            raise ConfigError(f"case.equation: unknown tag {self.equation!r}")
        if self.rank not in (1, 2):
            raise ConfigError("grid.shape: rank must be 1 or 2")
        if any(n < 3 for n in self.shape):
            raise ConfigError("grid.shape: every component must be >= 3")
        if self.footprint not in ("full", "cross"):
            raise ConfigError(f"net.footprint: unknown kind {self.footprint!r}")
        if self.footprint == "cross" and self.rank == 1:
            raise ConfigError("net.footprint: cross footprint is 2D only")
        if self.input_mode not in (VALUES, VALUES_POSITION):
            raise ConfigError(f"net.input_mode: unknown mode {self.input_mode!r}")
        if self.alpha_law not in ALPHA_LAWS:
            raise ConfigError(f"case.alpha_law: unknown law {self.alpha_law!r}")
        if self.target_law not in TARGET_LAWS:
            raise ConfigError(f"case.target_law: unknown law {self.target_law!r}")
        if self.boundary_law not in BOUNDARY_LAWS:
            raise ConfigError(f"case.boundary_law: unknown law {self.boundary_law!r}")
        if not 0.0 <= self.noise <= 0.35:
            raise ConfigError("case.noise: must be within [0, 0.35]")
        if self.n_train < 1 or self.depth < 1:
            raise ConfigError("case.samples and train.depth_N must be >= 1")
        k = 3 if self.rank == 1 else (9 if self.footprint == "full" else 5)
        if self.net_layers[0] != input_size(k, self.rank, self.input_mode):
            raise ConfigError(
                f"net.layers: first layer must be "
                f"{input_size(k, self.rank, self.input_mode)} for this footprint "
                f"and input mode, got {self.net_layers[0]}")
        if self.net_layers[-1] != k:
            raise ConfigError(f"net.layers: last layer must be {k}")
        if param_count(self.net_layers) != self.table_params:
            raise ConfigError(
                f"net.layers: {self.net_layers} has "
                f"{param_count(self.net_layers)} parameters, expected "
                f"{self.table_params}")
        if self.a_range[0] >= self.a_range[1]:
            raise ConfigError("case.a_range: lo must be below hi")
        if self.equation == "wave2d":
            if self.dt is None or not self.dt <= self.cell_size / np.sqrt(2.0):
                raise ConfigError("data.dt: violates the CFL bound dp/sqrt(2)")
        if self.time_dependent and (self.n_frames is None or self.n_rollout is None):
            raise ConfigError("data.frames and data.rollout required for "
                              "time-dependent cases")
        return self


def _c(**kw):
    return CaseConfig(**kw)


REGISTRY = {
    # 1D Poisson, quadratic target (ap)^2 on 128 cells
    "poisson1d_quadratic": _c(
        equation="poisson1d_quadratic", shape=(128,), domain=((0.0, 1.0),),
        net_layers=(3, 4, 3), table_params=31, target_law="quadratic",
        a_range=(0.5, 2.0), n_train=4),
    # zero-RHS Laplace with a prescribed end slope (Neumann) and an anchor
    "poisson1d_neumann": _c(
        equation="poisson1d_neumann", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(3, 4, 3), table_params=31, target_law="ramp",
        a_range=(-2.0, 2.0), n_train=4),
    "poisson1d_sine": _c(
        equation="poisson1d_sine", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(3, 4, 3), table_params=31, target_law="sine",
        a_range=(1.0, 4.0), n_train=2),
    "poisson1d_sine_noisy15": _c(
        equation="poisson1d_sine_noisy15", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(3, 4, 3), table_params=31, target_law="sine",
        a_range=(1.0, 4.0), n_train=2, noise=0.15, train_tolerance=2e-3),
    "poisson1d_sine_noisy35": _c(
        equation="poisson1d_sine_noisy35", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(3, 4, 3), table_params=31, target_law="sine",
        a_range=(1.0, 4.0), n_train=2, noise=0.35, train_tolerance=2e-2),
    # spatially varying coefficient 1+|pi p|, positions fed to the net
    "poisson1d_varying": _c(
        equation="poisson1d_varying", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(6, 6, 3, 6, 3), table_params=108, alpha_law="abs_pi_p",
        input_mode=VALUES_POSITION, boundary_law="random_values",
        a_range=(-1.0, 1.0), n_train=4, train_tolerance=1e-10),
    # nonlinear coefficient 1+|x|+sin(0.001|x|), five Picard layers
    "poisson1d_nonlinear": _c(
        equation="poisson1d_nonlinear", shape=(32,), domain=((0.0, 1.0),),
        net_layers=(3, 6, 3), table_params=45, alpha_law="nonlinear_abs_sin",
        boundary_law="random_values", a_range=(-1.0, 1.0), n_train=4,
        depth=5, train_tolerance=1e-9),
    "poisson2d_cubic": _c(
        equation="poisson2d_cubic", shape=(32, 32),
        domain=((0.0, 1.0), (0.0, 1.0)), net_layers=(9, 16, 6, 9),
        table_params=325, target_law="cubic2d", a_range=(0.5, 1.5), n_train=4),
    "poisson2d_sine": _c(
        equation="poisson2d_sine", shape=(32, 32),
        domain=((0.0, 1.0), (0.0, 1.0)), net_layers=(9, 14, 6, 9),
        table_params=293, target_law="sine2d", a_range=(0.5, 2.0), n_train=4),
    # Helmholtz, reciprocal boundary law; domain avoids the origin singularity
    "helmholtz_reciprocal": _c(
        equation="helmholtz_reciprocal", shape=(32, 32),
        domain=((1.0, 2.0), (1.0, 2.0)), net_layers=(5, 5, 3, 5),
        table_params=68, footprint="cross", boundary_law="helm_reciprocal",
        a_range=(0.5, 2.0), n_train=4),
    "helmholtz_sine": _c(
        equation="helmholtz_sine", shape=(32, 32),
        domain=((0.0, 1.0), (0.0, 1.0)), net_layers=(5, 5, 3, 5),
        table_params=68, footprint="cross", boundary_law="helm_sine",
        a_range=(0.5, 2.0), n_train=4),
    # time-dependent wave with a forced center cell; dt = 0.1 dp keeps the
    # sin(60 t) source resolved (~30 frames/period) within the CFL bound
    "wave2d": _c(
        equation="wave2d", shape=(49, 49), domain=((0.0, 1.0), (0.0, 1.0)),
        net_layers=(5, 5, 3, 5), table_params=68, footprint="cross",
        boundary_law="zero", n_train=6, n_test=42, n_frames=6, n_rollout=42,
        dt=0.1 / 48.0, train_tolerance=1e-10, max_rounds=6),
    # learned pressure projection inside the incompressible-flow stepper
    "ns_projection": _c(
        equation="ns_projection", shape=(32, 32),
        domain=((0.0, 1.0), (0.0, 1.0)), net_layers=(5, 5, 2, 5, 5),
        table_params=87, footprint="cross", boundary_law="zero",
        n_train=6, n_test=50, n_frames=6, n_rollout=50, dt=0.05,
        train_tolerance=1e-14, max_rounds=6),
}

TABLE_PARAM_COUNTS = (31, 108, 45, 325, 293, 68, 87)


def get_case(tag, **overrides):
    if tag not in REGISTRY:
        raise ConfigError(f"case.equation: unknown tag {tag!r}")
    case = replace(REGISTRY[tag], **overrides) if overrides else REGISTRY[tag]
    return case.validate()


def parse_config_text(text):
    """Flat key=value lines with dotted keys; '#' starts a comment."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


_INT_TUPLE = lambda v: tuple(int(t) for t in v.replace("x", ",").split(","))

_KEYMAP = {
    "case.equation": ("equation", str),
    "case.noise": ("noise", float),
    "case.samples": ("n_train", int),
    "case.tests": ("n_test", int),
    "case.alpha_law": ("alpha_law", str),
    "case.target_law": ("target_law", str),
    "case.boundary_law": ("boundary_law", str),
    "case.a_lo": ("_a_lo", float),
    "case.a_hi": ("_a_hi", float),
    "grid.shape": ("shape", _INT_TUPLE),
    "net.layers": ("net_layers", _INT_TUPLE),
    "net.input_mode": ("input_mode", str),
    "net.footprint": ("footprint", str),
    "net.params": ("table_params", int),
    "train.depth_N": ("depth", int),
    "train.seed": ("seed", int),
    "train.tolerance": ("train_tolerance", float),
    "train.max_rounds": ("max_rounds", int),
    "train.jitter": ("handoff_jitter", lambda v: v.lower() in ("1", "true", "yes")),
    "data.dt": ("dt", float),
    "data.frames": ("n_frames", int),
    "data.rollout": ("n_rollout", int),
}


def case_from_entries(entries):
    if "case.equation" not in entries:
        raise ConfigError("case.equation: missing")
    overrides = {}
    for key, value in entries.items():
        if key not in _KEYMAP:
            raise ConfigError(f"{key}: unknown configuration key")
        name, conv = _KEYMAP[key]
        try:
            overrides[name] = conv(value)
        except (ValueError, TypeError):
            raise ConfigError(f"{key}: cannot parse value {value!r}")
    tag = overrides.pop("equation")
    a_lo = overrides.pop("_a_lo", None)
    a_hi = overrides.pop("_a_hi", None)
    if a_lo is not None or a_hi is not None:
        base = REGISTRY.get(tag)
        if base is None:
            raise ConfigError(f"case.equation: unknown tag {tag!r}")
        overrides["a_range"] = (a_lo if a_lo is not None else base.a_range[0],
                                a_hi if a_hi is not None else base.a_range[1])
    return get_case(tag, **overrides)


def load_config(path):
    with open(path) as f:
        return case_from_entries(parse_config_text(f.read()))
