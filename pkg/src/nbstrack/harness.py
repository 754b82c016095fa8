"""Closed-loop simulation, rollout logs, and tracking metrics.

One trajectory function serves both evaluation and training: it integrates
the closed loop with RK4 and works identically on raw arrays (logging runs)
and on autodiff boxes (backprop-through-time).  By default the control law
is re-evaluated at every RK4 stage, matching the continuous-time analysis;
a zero-order-hold mode computes it once per step instead.

When the controller's model handle is the exact plant being simulated, the
stage evaluation shares M, C, G between the control law and the forward
dynamics instead of recomputing them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .controller import NbsController, PidBaseline, ReferenceTrajectory
from .errors import HorizonTooShort, NonFinite, SchemaError
from .plants import ArmModel, DisturbanceModel, PlanarArm, forward_dynamics, mass_matrix
from .lnn import LnnModel, predict_accel, mass_hat


@dataclass
class SimConfig:
    dt: float = 0.01
    horizon: float = 100.0
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    q0: np.ndarray | None = None
    qd0: np.ndarray | None = None
    seed: int = 0
    control_mode: str = "stage"  # "stage" or "zoh"

    def __post_init__(self):
        if self.dt <= 0:
            raise SchemaError(f"dt must be positive, got {self.dt}")
        if self.horizon < self.dt:
            raise SchemaError("horizon must cover at least one step")
        if self.control_mode not in ("stage", "zoh"):
            raise SchemaError(f"unknown control_mode {self.control_mode!r}")


class PlantTruth:
    """Simulation ground truth backed by the analytic plant."""

    def __init__(self, arm: PlanarArm):
        self.arm = arm
        self.n = arm.n

    def accel(self, q, qdot, u, tau_d=None):
        return forward_dynamics(self.arm, q, qdot, u, tau_d)

    def mass(self, q, qdot):
        return mass_matrix(self.arm, q)


class LnnTruth:
    """Simulation ground truth backed by a learned Lagrangian."""

    def __init__(self, net):
        self.net = net
        self.n = net.n

    def accel(self, q, qdot, u, tau_d=None):
        rhs = u if tau_d is None else ad.add(u, tau_d)
        return predict_accel(self.net, q, qdot, rhs)

    def mass(self, q, qdot):
        return mass_hat(self.net, q, qdot)


def _controller_shares_plant(truth, controller) -> bool:
    return (
        isinstance(truth, PlantTruth)
        and isinstance(controller, NbsController)
        and isinstance(controller.model, ArmModel)
        and controller.model.arm is truth.arm
    )


def closed_loop_trajectory(
    truth,
    controller,
    ref: ReferenceTrajectory,
    dt: float,
    n_steps: int,
    y0,
    tau_d=None,
    control_mode: str = "stage",
):
    """Integrate the closed loop; returns (times, states, controls).

    states[k] is the stacked [q; qd] at t_k (length n_steps + 1); controls[k]
    is the torque the controller commands at (t_k, states[k]), also evaluated
    at the final state for completeness.  Values stay boxed when the
    controller parameters or initial state are boxed.
    """
    n = truth.n
    is_pid = isinstance(controller, PidBaseline)
    fused = _controller_shares_plant(truth, controller)
    states = [y0]
    controls = []
    times = [0.0]
    y = y0
    t = 0.0

    def control_at(tt, yy):
        if is_pid:
            return controller.control(yy[:n], yy[n:], ref, tt, dt)
        return controller.control(yy[:n], yy[n:], ref, tt)

    for _ in range(n_steps):
        u_first = [None]

        if is_pid or control_mode == "zoh":
            u_held = control_at(t, y)
            u_first[0] = u_held

            def field(tt, yy):
                return ad.concatenate(
                    yy[n:], truth.accel(yy[:n], yy[n:], u_held, tau_d), axis=0
                )

        elif fused:

            def field(tt, yy):
                q, qd = yy[:n], yy[n:]
                m, c, g = controller.model.terms(q, qd)
                u = controller.control_from_terms(m, c, g, q, qd, ref, tt)
                if u_first[0] is None:
                    u_first[0] = u
                rhs = ad.sub(ad.sub(u, ad.matvec(c, qd)), g)
                if tau_d is not None:
                    rhs = ad.add(rhs, tau_d)
                return ad.concatenate(qd, ad.solve_psd(m, rhs), axis=0)

        else:

            def field(tt, yy):
                u = control_at(tt, yy)
                if u_first[0] is None:
                    u_first[0] = u
                return ad.concatenate(
                    yy[n:], truth.accel(yy[:n], yy[n:], u, tau_d), axis=0
                )

        # Classical RK4 with the control law inside the stage evaluations.
        k1 = field(t, y)
        k2 = field(t + 0.5 * dt, ad.add(y, ad.mul(0.5 * dt, k1)))
        k3 = field(t + 0.5 * dt, ad.add(y, ad.mul(0.5 * dt, k2)))
        k4 = field(t + dt, ad.add(y, ad.mul(dt, k3)))
        incr = ad.add(ad.add(k1, ad.mul(2.0, k2)), ad.add(ad.mul(2.0, k3), k4))
        y = ad.add(y, ad.mul(dt / 6.0, incr))
        raw = ad.val(y)
        if not np.all(np.isfinite(raw)):
            raise NonFinite(f"closed loop diverged at step {len(states)} (t={t:.3f})")
        controls.append(u_first[0])
        t += dt
        times.append(t)
        states.append(y)
    controls.append(control_at(t, y))
    return np.array(times), states, controls


@dataclass
class RolloutLog:
    """Per-step time series of the closed loop (plain float arrays)."""

    t: np.ndarray
    q: np.ndarray
    qd_ref: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    u: np.ndarray
    z1sq: np.ndarray
    v: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def to_csv(self, path) -> None:
        n = self.n
        header = (
            ["t"]
            + [f"q_{i}" for i in range(n)]
            + [f"qd_{i}" for i in range(n)]
            + [f"z1_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(n)]
            + ["z1sq", "V"]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self)):
                row = [
                    self.t[k],
                    *self.q[k],
                    *self.qd_ref[k],
                    *self.z1[k],
                    *self.u[k],
                    self.z1sq[k],
                    self.v[k],
                ]
                writer.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path) -> "RolloutLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(x) for x in row] for row in reader])
        n = (len(header) - 3) // 4
        expected = (
            ["t"]
            + [f"q_{i}" for i in range(n)]
            + [f"qd_{i}" for i in range(n)]
            + [f"z1_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(n)]
            + ["z1sq", "V"]
        )
        if header != expected:
            raise SchemaError(f"{path}: unexpected rollout header {header}")
        q = rows[:, 1 : 1 + n]
        return cls(
            t=rows[:, 0],
            q=q,
            qd_ref=rows[:, 1 + n : 1 + 2 * n],
            z1=rows[:, 1 + 2 * n : 1 + 3 * n],
            z2=np.full_like(q, np.nan),  # not part of the file schema
            u=rows[:, 1 + 3 * n : 1 + 4 * n],
            z1sq=rows[:, 1 + 4 * n],
            v=rows[:, 2 + 4 * n],
        )


def rollout(truth, controller, ref: ReferenceTrajectory, cfg: SimConfig) -> RolloutLog:
    """Run the closed loop and log every step."""
    n = truth.n
    q0 = np.zeros(n) if cfg.q0 is None else np.asarray(cfg.q0, dtype=float)
    qd0 = np.zeros(n) if cfg.qd0 is None else np.asarray(cfg.qd0, dtype=float)
    if isinstance(controller, PidBaseline):
        controller.reset()
    n_steps = round(cfg.horizon / cfg.dt)
    tau = cfg.disturbance.tau
    times, states, controls = closed_loop_trajectory(
        truth,
        controller,
        ref,
        cfg.dt,
        n_steps,
        np.concatenate([q0, qd0]),
        tau_d=None if tau is None else np.asarray(tau, dtype=float),
        control_mode=cfg.control_mode,
    )
    k_rows = len(times)
    q = np.zeros((k_rows, n))
    qd_ref = np.zeros((k_rows, n))
    z1 = np.zeros((k_rows, n))
    z2 = np.zeros((k_rows, n))
    u_log = np.zeros((k_rows, n))
    z1sq = np.zeros(k_rows)
    v = np.full(k_rows, np.nan)
    has_phi = isinstance(controller, NbsController)
    for k, (t, y, u) in enumerate(zip(times, states, controls)):
        y = np.asarray(ad.val(y), dtype=float)
        q[k] = y[:n]
        qd_ref[k] = ref.qd(t)
        z1[k] = q[k] - qd_ref[k]
        u_log[k] = np.asarray(ad.val(u), dtype=float)
        z1sq[k] = float(z1[k] @ z1[k])
        if has_phi:
            gp = np.asarray(ad.val(controller.phi.grad(z1[k])), dtype=float)
            z2[k] = y[n:] - ref.qd_dot(t) + gp
            m = np.asarray(ad.val(controller.model.mass(q[k], y[n:])), dtype=float)
            v[k] = float(ad.val(controller.phi.value(z1[k]))) + 0.5 * z2[k] @ m @ z2[k]
        else:
            z2[k] = y[n:] - ref.qd_dot(t)
    return RolloutLog(t=times, q=q, qd_ref=qd_ref, z1=z1, z2=z2, u=u_log, z1sq=z1sq, v=v)


@dataclass
class MetricsReport:
    steady_state_error: float
    convergence_time: float | None
    converged: bool
    horizon: float

    def to_dict(self) -> dict:
        return {
            "steady_state_error": self.steady_state_error,
            "convergence_time": self.convergence_time,
            "converged": self.converged,
            "horizon": self.horizon,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


CONVERGENCE_THRESHOLD = 0.01
STEADY_WINDOW = 30.0
MIN_METRIC_HORIZON = 100.0


def metrics(log: RolloutLog) -> MetricsReport:
    """Steady-state error over the last 30 s and last-crossing convergence time.

    The convergence time is the first instant after which ||z1||^2 stays
    below 0.01, i.e. the grid point following the last excursion.
    """
    horizon = float(log.t[-1])
    if horizon < MIN_METRIC_HORIZON - 1e-9:
        raise HorizonTooShort(
            f"steady-state metric needs >= {MIN_METRIC_HORIZON} s, got {horizon} s"
        )
    tail = log.t >= horizon - STEADY_WINDOW
    steady = float(np.max(log.z1sq[tail]))
    above = np.nonzero(log.z1sq >= CONVERGENCE_THRESHOLD)[0]
    if above.size == 0:
        return MetricsReport(steady, 0.0, True, horizon)
    last = int(above[-1])
    if last == len(log) - 1:
        return MetricsReport(steady, None, False, horizon)
    return MetricsReport(steady, float(log.t[last + 1]), True, horizon)
