"""Learn the hidden local operator of a PDE from a few observed solutions.

A tiny shared network maps each interior cell's neighborhood to that cell's
stencil row; the assembled operator is iterated in a fixed-point loop to
predict solutions, and trained end to end with adjoint gradients.
"""

from .grid import (Grid, Field, Footprint, BoundaryConditions, make_grid,
                   neighborhood, gather, DIRICHLET, NEUMANN)
from .micronet import (MicroNet, net_forward, net_jacobian_input,
                       net_jacobian_params, init_params, param_count)
from .assembly import (RowMatrix, OperatorDerivatives, assemble, assemble_rhs,
                       operator_derivatives, apply_dAdx_transposed,
                       apply_dAdtheta_transposed)
from .linsolve import solve, solve_transpose, SolverFailure
from .picard import Trajectory, picard_forward, initial_guess
from .adjoint import backward, grad_check
from .cases import CaseConfig, ConfigError, get_case, load_config, REGISTRY
from .datagen import (Dataset, Sample, make_dataset, make_test_samples,
                      save_dataset, load_dataset, solve_poisson,
                      solve_helmholtz, step_wave, ns_step, add_noise)
from .trainer import (OptState, TrainResult, loss_mse, adam_step,
                      quasinewton_stage, train, write_history_csv)
from .verification import (check_stencil_recovery, check_picard_equivalence,
                           run_optimizer_ablation, write_report)

__version__ = "0.1.0"
