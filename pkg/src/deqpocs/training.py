"""Training and inference for the equilibrium interpolation operator.

Training solves, per sample, the fixed point ``x* = P(net(x*))`` of the
consistency operator composed with the data-consistency projection, scores
it with a squared-Frobenius k-space loss against the fully sampled truth,
and backpropagates through the equilibrium with the implicit-function
adjoint: ``v = (I - J^T)^{-1} g`` is found by the (provably convergent,
certificate-backed) iteration ``v <- g + J^T v``, after which one
parameter-side reverse product of the composed operator yields the
gradient. Parameters are updated with bias-corrected Adam on their real
parameterization and re-projected onto the certified-contractive set after
every step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .network import (
    ConsistencyNetParams,
    certified_lipschitz,
    forward,
    forward_with_trace,
    init_params,
    jacobian_vjp,
    normalize_params,
    pack_params,
    param_vjp,
    require_contractive,
    unpack_params,
)
from .rng import RandomStream
from .sampling import Measurement, mask_complement_multiply, project_data_consistency
from .solvers import FixedPointResult, anderson_solve, picard_solve
from .tensors import frob


@dataclass(frozen=True)
class SolverSettings:
    method: str = "anderson"  # "picard" or "anderson"
    tol: float = 1e-5
    max_iter: int | None = None  # None: sized from the certificate
    anderson_memory: int = 5
    anderson_beta: float = 1.0
    anderson_ridge: float = 1e-4


INFERENCE_SOLVER = SolverSettings(tol=1e-5)
TRAIN_FORWARD_SOLVER = SolverSettings(tol=1e-4)


def make_pocs_operator(params: ConsistencyNetParams, meas: Measurement):
    """The iteration map: consistency operator followed by the projection."""

    def T(x: np.ndarray) -> np.ndarray:
        return project_data_consistency(forward(params, x), meas.mask, meas)

    return T


def auto_max_iter(tol_eff: float, contraction: float, method: str) -> int:
    if contraction <= 0:
        return 50
    need = math.log(max(tol_eff, 1e-300) / 10.0) / math.log(contraction)
    cap = int(min(max(need + 25, 50), 20000))
    return cap if method == "picard" else max(cap // 2, 50)


def solve_equilibrium(
    params: ConsistencyNetParams,
    meas: Measurement,
    x0: np.ndarray | None = None,
    settings: SolverSettings = INFERENCE_SOLVER,
    contraction: float | None = None,
) -> FixedPointResult:
    """Solve ``x = P(net(x))`` from ``x0`` (default: the measurement).

    When the contraction bound L is known, the solver stop threshold is
    tightened to ``tol * (1 - L)`` so the returned iterate is within
    ``tol * max(1, ||x||)`` of the exact fixed point — this is what makes
    solutions from different initializations provably agree to ``10 * tol``.
    """
    if x0 is None:
        x0 = meas.y
    T = make_pocs_operator(params, meas)
    tol_eff = settings.tol if contraction is None else settings.tol * (1.0 - contraction)
    max_iter = settings.max_iter
    if max_iter is None:
        max_iter = auto_max_iter(tol_eff, contraction if contraction else 0.5, settings.method)
    if settings.method == "picard":
        return picard_solve(T, x0, tol=tol_eff, max_iter=max_iter)
    return anderson_solve(
        T,
        x0,
        m=settings.anderson_memory,
        tol=tol_eff,
        max_iter=max_iter,
        beta=settings.anderson_beta,
        ridge=settings.anderson_ridge,
    )


def reconstruct(
    params: ConsistencyNetParams,
    meas: Measurement,
    x0: np.ndarray | None = None,
    settings: SolverSettings = INFERENCE_SOLVER,
) -> FixedPointResult:
    """Inference: equilibrium of the trained operator under the measurement.

    Requires a valid contraction certificate (< 1); the unique fixed point
    is then independent of ``x0`` up to solver tolerance.
    """
    cert = certified_lipschitz(params)
    require_contractive(cert)
    return solve_equilibrium(params, meas, x0, settings, contraction=cert.contraction_bound)


def zero_fill(meas: Measurement) -> np.ndarray:
    """No-learning baseline: the measurement itself (zeros off the mask)."""
    return meas.y


# ---------------------------------------------------------------------------
# Implicit (equilibrium) backward pass
# ---------------------------------------------------------------------------

def implicit_backward(
    params: ConsistencyNetParams,
    x_fixed: np.ndarray,
    meas: Measurement,
    grad_loss: np.ndarray,
    tol: float = 1e-4,
    max_iter: int = 200,
    return_iterations: bool = False,
):
    """Parameter gradient of a loss evaluated at the equilibrium point.

    Solves the adjoint equation ``v = g + J^T v`` where ``J`` is the
    Jacobian of the projected operator at ``x_fixed`` (the projection
    contributes the sampled-set complement, the network contributes its
    reverse-mode product on a cached trace), then returns the parameter
    cotangent of one application. With a certificate L < 1 the adjoint
    iteration converges geometrically; hitting ``max_iter`` first only
    warns and returns the best available iterate.
    """
    _, traces = forward_with_trace(params, x_fixed)
    g = np.asarray(grad_loss, dtype=np.complex128)
    v = g.copy()
    iterations = 0
    for _ in range(max_iter):
        v_new = g + jacobian_vjp(params, traces, mask_complement_multiply(v, meas.mask))
        step = frob(v_new - v)
        v = v_new
        iterations += 1
        if step <= tol * max(1.0, frob(v)):
            break
    else:
        warnings.warn(
            f"adjoint fixed-point iteration did not reach tol={tol} in {max_iter} steps",
            RuntimeWarning,
        )
    grad = param_vjp(params, traces, mask_complement_multiply(v, meas.mask))
    if return_iterations:
        return grad, iterations
    return grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    values: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def init(cls, values: np.ndarray) -> "AdamState":
        return cls(
            values=values.astype(np.float64, copy=True),
            m=np.zeros_like(values, dtype=np.float64),
            v=np.zeros_like(values, dtype=np.float64),
        )


def adam_step(
    state: AdamState,
    grads: np.ndarray,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update on a flat real parameter vector."""
    if grads.shape != state.values.shape:
        raise TrainingError("gradient shape does not match parameter vector")
    if not np.all(np.isfinite(grads)):
        raise TrainingError(f"non-finite gradients at step {state.step + 1}")
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    values = state.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(values=values, m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    variant: str = "kspace"
    blocks: int = 10
    features: int = 8
    init_seed: int = 0
    shuffle_seed: int = 0
    forward_solver: SolverSettings = field(default=TRAIN_FORWARD_SOLVER)
    backward_tol: float = 1e-4
    backward_max_iter: int = 300

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise TrainingError("learning rate must be positive")


@dataclass
class TrainReport:
    epoch_mean_loss: list[float] = field(default_factory=list)
    epoch_mean_fwd_iters: list[float] = field(default_factory=list)
    epoch_mean_bwd_iters: list[float] = field(default_factory=list)
    epoch_certificate: list[float] = field(default_factory=list)
    step_certificates: list[float] = field(default_factory=list)
    final_train_residual: float = float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,mean_fwd_iters,mean_bwd_iters,L"]
        for e in range(len(self.epoch_mean_loss)):
            lines.append(
                f"{e},{self.epoch_mean_loss[e]:.17g},{self.epoch_mean_fwd_iters[e]:.17g},"
                f"{self.epoch_mean_bwd_iters[e]:.17g},{self.epoch_certificate[e]:.17g}"
            )
        lines.append(f"final_train_residual,{self.final_train_residual:.17g},,,")
        return "\n".join(lines) + "\n"


def train(
    dataset: list[tuple[np.ndarray, Measurement]],
    config: TrainConfig = TrainConfig(),
    params: ConsistencyNetParams | None = None,
    progress=None,
) -> tuple[ConsistencyNetParams, TrainReport]:
    """Equilibrium training over ``(full k-space, measurement)`` pairs.

    Per epoch the sample order is reshuffled from the seeded stream; per
    sample the forward equilibrium is solved, the squared-Frobenius k-space
    loss and its implicit gradient are computed, and one Adam step plus the
    contractive projection is applied. The report logs per-epoch means and
    the certificate after every step; the final entry is the mean
    equilibrium residual of the trained operator over the training set.
    """
    if not dataset:
        raise TrainingError("training dataset is empty")
    shapes = {x.shape for x, _ in dataset}
    if len(shapes) != 1:
        raise TrainingError(f"all samples must share one shape, got {shapes}")
    H, W, nc = next(iter(shapes))
    if params is None:
        params = init_params(
            config.variant,
            config.blocks,
            config.features,
            nc,
            seed=config.init_seed,
            grid=(H, W),
        )
    state = AdamState.init(pack_params(params))
    order_stream = RandomStream(config.shuffle_seed)
    report = TrainReport()
    cert = certified_lipschitz(params)
    for epoch in range(config.epochs):
        order = list(range(len(dataset)))
        order_stream.shuffle(order)
        losses, fwd_iters, bwd_iters = [], [], []
        for m in order:
            x_full, meas = dataset[m]
            try:
                result = solve_equilibrium(
                    params,
                    meas,
                    settings=config.forward_solver,
                    contraction=cert.contraction_bound,
                )
                diff = result.solution - x_full
                loss = frob(diff) ** 2
                grad, n_bwd = implicit_backward(
                    params,
                    result.solution,
                    meas,
                    2.0 * diff,
                    tol=config.backward_tol,
                    max_iter=config.backward_max_iter,
                    return_iterations=True,
                )
            except Exception as exc:
                raise TrainingError(f"solve failed at epoch {epoch}, sample {m}: {exc}") from exc
            state = adam_step(
                state,
                grad,
                lr=config.learning_rate,
                beta1=config.beta1,
                beta2=config.beta2,
                eps=config.adam_eps,
            )
            params = normalize_params(unpack_params(params, state.values))
            state.values = pack_params(params)  # keep moments aligned post-projection
            cert = certified_lipschitz(params)
            report.step_certificates.append(cert.contraction_bound)
            losses.append(loss)
            fwd_iters.append(result.iterations)
            bwd_iters.append(n_bwd)
        report.epoch_mean_loss.append(float(np.mean(losses)))
        report.epoch_mean_fwd_iters.append(float(np.mean(fwd_iters)))
        report.epoch_mean_bwd_iters.append(float(np.mean(bwd_iters)))
        report.epoch_certificate.append(cert.contraction_bound)
        if progress is not None:
            progress(epoch, report)
    residuals = []
    for x_full, meas in dataset:
        result = solve_equilibrium(
            params, meas, settings=config.forward_solver, contraction=cert.contraction_bound
        )
        residuals.append(frob(result.solution - x_full))
    report.final_train_residual = float(np.mean(residuals))
    return params, report
