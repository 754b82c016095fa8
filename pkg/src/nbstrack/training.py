"""Controller optimization by backprop-through-time, and the alpha sweep.

The training loss discretizes the tracking cost integral over a short
horizon (stage cost summed over post-step states times dt) plus the
curvature regularizer relu(lambda_max(alpha I - Hess Phi(0))), whose
subgradient uses the top eigenvector outer product.  Gradients flow through
the full rollout: the integrator, the plant terms, and the derivative
computations inside the control law.  Training itself runs without
disturbance; disturbances enter at evaluation time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .blocks import make_damping, make_potential
from .controller import NbsController, ReferenceTrajectory, sincos_reference
from .errors import NonFiniteLoss, SchemaError
from .harness import PlantTruth, SimConfig, closed_loop_trajectory, metrics, rollout
from .optim import AdamState, adam_step, decayed_lr
from .plants import ArmModel, DisturbanceModel, PlanarArm

STAGE_COSTS = {
    "z1sq": lambda z1, u: ad.dot(z1, z1),
}


@dataclass
class TrainConfig:
    horizon: float = 1.0
    dt: float = 0.01
    epochs: int = 200
    lr0: float = 1e-3
    lr_decay: float = 0.99
    alpha: float | None = None
    stage_cost: str = "z1sq"
    q0: np.ndarray | None = None
    qd0: np.ndarray | None = None
    control_mode: str = "stage"

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < self.dt:
            raise SchemaError("need dt > 0 and horizon >= dt")
        if self.epochs < 0 or self.lr0 <= 0 or not 0 < self.lr_decay <= 1:
            raise SchemaError("bad optimizer constants")
        if self.stage_cost not in STAGE_COSTS:
            raise SchemaError(f"unknown stage cost {self.stage_cost!r}")


def curvature_regularizer(controller: NbsController, alpha: float):
    """relu(lambda_max(alpha I - Hess Phi(0)))."""
    n = controller.phi.dim
    h0 = controller.phi.hessian_at(np.zeros(n))
    gap = ad.sub(alpha * np.eye(n), h0)
    return ad.relu(ad.eig_max(gap))


def bptt_loss(params, controller, truth, ref, tcfg: TrainConfig):
    """Differentiable rollout cost for a parameter list."""
    ctrl = controller.with_params(list(params))
    n = truth.n
    q0 = np.zeros(n) if tcfg.q0 is None else np.asarray(tcfg.q0, dtype=float)
    qd0 = np.zeros(n) if tcfg.qd0 is None else np.asarray(tcfg.qd0, dtype=float)
    n_steps = round(tcfg.horizon / tcfg.dt)
    times, states, controls = closed_loop_trajectory(
        truth,
        ctrl,
        ref,
        tcfg.dt,
        n_steps,
        np.concatenate([q0, qd0]),
        tau_d=None,
        control_mode=tcfg.control_mode,
    )
    cost_fn = STAGE_COSTS[tcfg.stage_cost]
    total = None
    for k in range(1, len(times)):
        z1 = ad.sub(states[k][:n], ref.qd(times[k]))
        term = cost_fn(z1, controls[k])
        total = term if total is None else ad.add(total, term)
    total = ad.mul(tcfg.dt, total)
    if tcfg.alpha is not None:
        total = ad.add(total, curvature_regularizer(ctrl, tcfg.alpha))
    return total


def train_controller(
    truth,
    controller: NbsController,
    ref: ReferenceTrajectory,
    tcfg: TrainConfig,
    seed: int = 0,
    param_mask: list | None = None,
    callback=None,
) -> tuple[NbsController, list]:
    """Adam on the potential and damping parameters; returns the trained
    controller and the per-epoch loss curve (monotone trend expected, not
    enforced).  param_mask, when given, freezes the arrays flagged False."""
    params = controller.params()
    if param_mask is not None and len(param_mask) != len(params):
        raise SchemaError("param_mask length must match the parameter list")
    state = AdamState.init(params)
    curve = []
    for epoch in range(tcfg.epochs):
        loss, grads = ad.value_and_multigrad(
            lambda *ps: bptt_loss(ps, controller, truth, ref, tcfg), params
        )
        loss = float(loss)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}")
        curve.append(loss)
        if param_mask is not None:
            grads = [
                g if keep else np.zeros_like(g) for g, keep in zip(grads, param_mask)
            ]
        params, state = adam_step(params, grads, state, decayed_lr(tcfg.lr0, tcfg.lr_decay, epoch))
        if callback is not None:
            callback(epoch, loss)
    return controller.with_params(params), curve


# ---------------------------------------------------------------------------
# Alpha sweep (Theorem 3 / Fig. 5 experiment).
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    alpha: float
    steady_state_error: float
    bound: float


def theorem3_bound(alpha: float, d: float) -> float:
    """d / (2 alpha^2): the tracking error set radius under the curvature
    premise Hess Phi(0) >= alpha I and damping D >= I/2."""
    return d / (2.0 * alpha * alpha)


def default_alpha_grid(count: int = 40, low: float = 0.2, high: float = 2.0) -> np.ndarray:
    """Uniform grid on (low, high]: low is excluded, high included."""
    step = (high - low) / count
    return low + step * np.arange(1, count + 1)


@dataclass
class SweepSpec:
    arm: PlanarArm
    tau_d: np.ndarray
    tcfg: TrainConfig
    eval_horizon: float = 100.0
    eval_dt: float = 0.01
    ridge: float = 0.5
    damping_m: float = 0.001
    s_matrix: np.ndarray | None = None
    psi_widths: tuple = (32, 32, 32)
    d_widths: tuple = (32, 32)
    base_seed: int = 0


def _sweep_one(args) -> SweepRow:
    spec, alpha, seed = args
    arm = spec.arm
    n = arm.n
    rng = np.random.default_rng(seed)
    phi = make_potential(n, rng, widths=spec.psi_widths, s_matrix=spec.s_matrix)
    damping = make_damping(n, rng, widths=spec.d_widths, m=spec.damping_m, ridge=spec.ridge)
    ctrl = NbsController(phi=phi, damping=damping, model=ArmModel(arm))
    truth = PlantTruth(arm)
    ref = sincos_reference(n)
    tcfg = replace(spec.tcfg, alpha=alpha)
    trained, _ = train_controller(truth, ctrl, ref, tcfg, seed=seed)
    scfg = SimConfig(
        dt=spec.eval_dt,
        horizon=spec.eval_horizon,
        disturbance=DisturbanceModel(tau=spec.tau_d),
        seed=seed,
    )
    log = rollout(truth, trained, ref, scfg)
    report = metrics(log)
    d = float(np.dot(spec.tau_d, spec.tau_d))
    return SweepRow(
        alpha=float(alpha),
        steady_state_error=report.steady_state_error,
        bound=theorem3_bound(alpha, d),
    )


def alpha_sweep(spec: SweepSpec, alphas: np.ndarray, jobs: int = 1) -> list:
    """Train + evaluate per alpha; deterministic per-alpha seeds regardless
    of worker count."""
    tasks = [(spec, float(a), spec.base_seed + i) for i, a in enumerate(alphas)]
    if jobs <= 1:
        return [_sweep_one(t) for t in tasks]
    with get_context("spawn").Pool(processes=jobs) as pool:
        return list(pool.map(_sweep_one, tasks))


def save_sweep_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "steady", "bound"])
        for row in rows:
            writer.writerow(
                [f"{row.alpha:.17g}", f"{row.steady_state_error:.17g}", f"{row.bound:.17g}"]
            )


def load_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["alpha", "steady", "bound"]:
            raise SchemaError(f"{path}: unexpected sweep header {header}")
        return [
            SweepRow(float(a), float(s), float(b)) for a, s, b in reader
        ]
