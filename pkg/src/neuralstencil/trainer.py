"""Loss, optimizers and the hybrid training loop.

The schedule alternates a fast limited-memory quasi-Newton stage with a
robust Adam stage until the loss reaches the case tolerance or the round cap
is hit. The quasi-Newton stage replaces the interior-point package the
original schedule used: the problem is unconstrained, so a two-loop L-BFGS
with Armijo backtracking keeps the fast-stage/robust-stage structure without
the constraint machinery.
"""

from dataclasses import dataclass, field

import numpy as np

from .adjoint import backward
from .linsolve import SolverFailure
from .micronet import MicroNet, init_params
from .picard import picard_forward, initial_guess
from .seeding import substream

ADAM_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LBFGS_MEMORY = 10
ARMIJO_C = 1e-4


def loss_mse(predictions, targets):
    """Mean over samples and cells of squared error, plus per-field gradients."""
    if len(predictions) != len(targets):
        raise ValueError("prediction/target count mismatch")
    count = 0
    for p, t in zip(predictions, targets):
        p, t = np.asarray(p), np.asarray(t)
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
        count += p.size
    total = 0.0
    grads = []
    for p, t in zip(predictions, targets):
        d = np.asarray(p) - np.asarray(t)
        total += float(d.ravel() @ d.ravel())
        grads.append(2.0 * d / count)
    return total / count, grads


@dataclass
class OptState:
    n_params: int
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: np.ndarray = None
    v: np.ndarray = None
    step: int = 0
    memory: int = LBFGS_MEMORY
    s_pairs: list = field(default_factory=list)   # (s, y) quasi-Newton memory
    stage: str = "quasi-newton"
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)


def adam_step(theta, g, state):
    """Standard Adam update with bias correction."""
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    mhat = state.m / (1 - state.beta1 ** state.step)
    vhat = state.v / (1 - state.beta2 ** state.step)
    return theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def _two_loop(g, pairs):
    """L-BFGS two-loop recursion with the standard initial scaling."""
    q = g.copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if pairs:
        s, y = pairs[-1]
        q *= (s @ y) / (y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def quasinewton_stage(theta, loss_and_grad, max_iters=200, tol=1e-12,
                      memory=LBFGS_MEMORY, history=None, step_offset=0):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    Returns (theta_best, info). info["line_search_failed"] flags a stage that
    should hand off to Adam.
    """
    f, g = loss_and_grad(theta)
    if not np.isfinite(f):
        return theta, {"final_loss": f, "iters": 0, "line_search_failed": True,
                       "converged": False}
    best_f, best_theta = f, theta.copy()
    pairs = []
    info = {"line_search_failed": False, "converged": False}
    it = 0
    for it in range(1, max_iters + 1):
        if history is not None:
            history.append((step_offset + it, "quasi-newton", f))
        if f <= tol or np.linalg.norm(g, np.inf) <= tol:
            info["converged"] = True
            break
        d = -_two_loop(g, pairs)
        gd = g @ d
        if gd >= 0:
            d, gd = -g, -(g @ g)
        alpha = 1.0
        accepted = False
        for _ in range(60):
            f_new, g_new = loss_and_grad(theta + alpha * d)
            if np.isfinite(f_new) and f_new <= f + ARMIJO_C * alpha * gd:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            info["line_search_failed"] = True
            break
        s = alpha * d
        y = g_new - g
        if s @ y > 1e-30:
            pairs.append((s, y))
            if len(pairs) > memory:
                pairs.pop(0)
        theta = theta + s
        f, g = f_new, g_new
        if f < best_f:
            best_f, best_theta = f, theta.copy()
    info["final_loss"] = best_f
    info["iters"] = it
    return best_theta, info


def adam_stage(theta, loss_and_grad, state, max_iters=2000, tol=1e-12,
               ma_window=50, history=None, step_offset=0):
    """Adam until the tolerance, the cap, or a stalled 50-step moving average."""
    losses = []
    best_f, best_theta = np.inf, theta.copy()
    for it in range(1, max_iters + 1):
        f, g = loss_and_grad(theta)
        if not np.isfinite(f):
            break
        losses.append(f)
        if history is not None:
            history.append((step_offset + it, "adam", f))
        if f < best_f:
            best_f, best_theta = f, theta.copy()
        if f <= tol:
            break
        if it % ma_window == 0 and it >= 2 * ma_window:
            recent = np.mean(losses[-ma_window:])
            previous = np.mean(losses[-2 * ma_window:-ma_window])
            if not recent < previous:
                break
        theta = adam_step(theta, g, state)
    return best_theta, {"final_loss": best_f, "iters": len(losses)}


@dataclass
class TrainResult:
    net: MicroNet
    history: list          # (global_step, stage, loss)
    converged: bool
    final_loss: float
    n_evals: int


def make_loss_and_grad(net_template, dataset, depth, seed, counter=None,
                       grad_hook=None):
    """Callable theta -> (loss, grad) over the dataset via the adjoint pass.

    Solver failures surface as (inf, None) so line searches can back off.
    The same per-sample starting iterates are reused for every evaluation,
    keeping the objective deterministic.
    """
    grid = dataset.grid
    x0s = [initial_guess(grid, s.bc, seed, index=i)
           for i, s in enumerate(dataset.samples)]
    targets = [s.target for s in dataset.samples]

    def loss_and_grad(theta, need_grad=True):
        if counter is not None:
            counter[0] += 1
        net = net_template.with_theta(theta)
        try:
            trajs = [picard_forward(net, s.b, s.bc, x0, depth,
                                    with_derivatives=need_grad)
                     for s, x0 in zip(dataset.samples, x0s)]
        except (SolverFailure, ValueError):
            return np.inf, None
        loss, grads = loss_mse([t.final for t in trajs], targets)
        if not need_grad:
            return loss, None
        g = np.zeros(net.n_params)
        try:
            for traj, dL in zip(trajs, grads):
                g += backward(net, traj, dL)
        except SolverFailure:
            return np.inf, None
        if grad_hook is not None:
            grad_hook(theta, loss, g)
        return loss, g

    return loss_and_grad, x0s


def train(case, dataset, seed=None, max_evals=None, grad_hook=None):
    """Hybrid quasi-Newton/Adam training at the case's unroll depth."""
    seed = case.seed if seed is None else seed
    init_rng_seed = substream(seed, "init").integers(2 ** 31)
    net = MicroNet(case.net_layers, input_mode=case.input_mode,
                   seed=init_rng_seed)
    counter = [0]
    loss_and_grad, _ = make_loss_and_grad(net, dataset, case.depth, seed,
                                          counter=counter, grad_hook=grad_hook)

    def fg(theta):
        if max_evals is not None and counter[0] >= max_evals:
            raise _BudgetExhausted()
        return loss_and_grad(theta)

    theta = net.theta.copy()
    state = OptState(net.n_params)
    history = []
    tol = case.train_tolerance
    jitter_rng = substream(seed, "init", 1)
    final_loss = np.inf
    try:
        for _ in range(case.max_rounds):
            round_start = final_loss
            state.stage = "quasi-newton"
            theta, info = quasinewton_stage(
                theta, fg, max_iters=200, tol=tol,
                history=history, step_offset=len(history))
            final_loss = info["final_loss"]
            if final_loss <= tol:
                break
            if case.handoff_jitter:
                theta = theta + 1e-3 * jitter_rng.standard_normal(len(theta))
            state.stage = "adam"
            theta, info = adam_stage(
                theta, fg, state, max_iters=2000, tol=tol,
                history=history, step_offset=len(history))
            final_loss = info["final_loss"]
            if final_loss <= tol:
                break
            if (np.isfinite(round_start)
                    and round_start - final_loss < max(1e-16, 1e-9 * final_loss)):
                break
    except _BudgetExhausted:
        pass
    state.loss_history = [h[2] for h in history]
    converged = bool(final_loss <= tol)
    return TrainResult(net=net.with_theta(theta), history=history,
                       converged=converged, final_loss=float(final_loss),
                       n_evals=counter[0])


class _BudgetExhausted(Exception):
    pass


def write_history_csv(history, path):
    with open(path, "w") as f:
        f.write("global_step,stage,loss\n")
        for step, stage, loss in history:
            f.write(f"{step},{stage},{loss:.17g}\n")
