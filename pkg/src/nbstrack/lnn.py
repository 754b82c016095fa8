"""Learned Lagrangian dynamics with a convex-in-velocity kinetic part.

The Lagrangian is L(q, qd) = L_T(q, qd) + 0.5*eps_m*||qd||^2 - L_V(q) with
L_T a partially input-convex network (context q, convex input qd) and L_V a
plain MLP.  Convexity makes the velocity Hessian PSD; the small quadratic
augmentation turns that into a positive definite certificate M >= eps_m*I,
which plain convexity alone cannot give.

Model terms for control are extracted exactly as the Euler-Lagrange
algebra dictates: M = d2L/dqd2, Mdot = the q-directional derivative of M
along qd, C = Mdot - Mdot^T/2, G = -dL/dq + Mdot^T qd / 2.  This pair
satisfies C qd + G = Mdot qd - dL/dq identically and keeps Mdot - 2C
exactly skew-symmetric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch, NonFiniteLoss
from .nets import Mlp, Picnn, make_mlp, make_picnn
from .numerics import OdeState, rk4_step
from .optim import AdamState, adam_step, decayed_lr
from .plants import PlanarArm, forward_dynamics


@dataclass
class LagrangianNet:
    kinetic: Picnn
    potential: Mlp
    eps_m: float = 1e-3

    @property
    def n(self) -> int:
        return self.kinetic.in_dim

    def lagrangian(self, q, qdot):
        if ad._shape_of(q)[-1] != self.n:
            raise DimensionMismatch(f"expected dim {self.n}, got {ad._shape_of(q)}")
        batched = len(ad._shape_of(q)) > 1
        kin = self.kinetic.forward(q, qdot)
        aug_axis = 1 if batched else None
        aug = ad.mul(0.5 * self.eps_m, ad.sum_(ad.mul(qdot, qdot), axis=aug_axis))
        pot = self.potential.forward(q)
        pot = pot[:, 0] if batched else pot[0]
        return ad.sub(ad.add(kin, aug), pot)

    def params(self) -> list:
        return self.kinetic.params() + self.potential.params()

    def with_params(self, params: list) -> "LagrangianNet":
        n_kin = len(self.kinetic.params())
        return replace(
            self,
            kinetic=self.kinetic.with_params(params[:n_kin]),
            potential=self.potential.with_params(params[n_kin:]),
        )


def make_lnn(
    n: int,
    rng: np.random.Generator,
    widths: tuple = (32, 32, 32),
    eps_m: float = 1e-3,
) -> LagrangianNet:
    kinetic = make_picnn(n, n, widths, rng, activation="softplus")
    potential = make_mlp(n, widths, 1, rng, "softplus", "linear")
    return LagrangianNet(kinetic=kinetic, potential=potential, eps_m=eps_m)


# ---------------------------------------------------------------------------
# Single-state extraction (duck-typed over anything with .lagrangian(q, qd)).
# ---------------------------------------------------------------------------


def mass_hat(net, q, qdot):
    """M = d2 L / dqd2, symmetric, >= eps_m * I for LagrangianNet."""
    return ad.hessian(lambda qd: net.lagrangian(q, qd), qdot)


def mdot_hat(net, q, qdot):
    """q-directional derivative of M along qd (the qd slot of M held fixed)."""
    return ad.hessian_directional(
        lambda qq, qd: net.lagrangian(qq, qd), q, qdot, qdot
    )


def coriolis_hat(net, q, qdot, mdot=None):
    md = mdot_hat(net, q, qdot) if mdot is None else mdot
    return ad.sub(md, ad.mul(0.5, ad.transpose(md)))


def gravity_hat(net, q, qdot, mdot=None):
    md = mdot_hat(net, q, qdot) if mdot is None else mdot
    dl_dq = ad.grad(lambda qq: net.lagrangian(qq, qdot), q)
    return ad.add(ad.neg(dl_dq), ad.mul(0.5, ad.matvec(ad.transpose(md), qdot)))


def predict_accel(net, q, qdot, u):
    """Euler-Lagrange inversion: qdd = M^{-1} [u + dL/dq - (d2L/dq dqd) qd]."""
    m = mass_hat(net, q, qdot)
    dl_dq = ad.grad(lambda qq: net.lagrangian(qq, qdot), q)
    # (d2L/dq dqd) qd: directional derivative of dL/dqd along qd in q.
    _, mixed = ad.jvp(
        lambda qq: ad.grad(lambda qd: net.lagrangian(qq, qd), qdot), [q], [qdot]
    )
    rhs = ad.sub(ad.add(u, dl_dq), mixed)
    return ad.solve_psd(m, rhs)


class LnnModel:
    """Learned-model handle for the controller: (M, C, G) from a Lagrangian."""

    def __init__(self, net):
        self.net = net

    def terms(self, q, qdot):
        """Fused extraction: the velocity Hessian and its q-directional
        derivative come from one dual pass over a row-tiled gradient batch
        (primal = M, tangent = Mdot), cross-checked against the single-state
        ops in the tests."""
        net = self.net
        n = ad._shape_of(q)[0]
        q_rows = ad.broadcast_to(ad.reshape(q, newshape=(1, n)), shape=(n, n))
        qd_rows = ad.broadcast_to(ad.reshape(qdot, newshape=(1, n)), shape=(n, n))
        eye = np.eye(n)

        def hess_rows(q_tiled):
            def grad_sum(qd_tiled):
                return ad.value_and_multigrad(
                    lambda z: ad.sum_(net.lagrangian(q_tiled, z)), [qd_tiled]
                )[1][0]

            _, rows = ad.jvp(grad_sum, [qd_rows], [eye])
            return rows

        m_rows, md_rows = ad.jvp(hess_rows, [q_rows], [qd_rows])
        m = ad.mul(0.5, ad.add(m_rows, ad.transpose(m_rows)))
        md = md_rows
        c = ad.sub(md, ad.mul(0.5, ad.transpose(md)))
        dl_dq = ad.value_and_multigrad(
            lambda qq: net.lagrangian(qq, qdot), [q]
        )[1][0]
        g = ad.add(ad.neg(dl_dq), ad.mul(0.5, ad.matvec(ad.transpose(md), qdot)))
        return m, c, g

    def accel(self, q, qdot, u, tau_d=None):
        rhs = u if tau_d is None else ad.add(u, tau_d)
        return predict_accel(self.net, q, qdot, rhs)

    def mass(self, q, qdot):
        return mass_hat(self.net, q, qdot)

    def params(self) -> list:
        return self.net.params()

    def with_params(self, params: list) -> "LnnModel":
        return LnnModel(self.net.with_params(params))


@dataclass
class TrueLagrangian:
    """The analytic Lagrangian of a planar arm, for handle-equivalence tests."""

    arm: PlanarArm

    def lagrangian(self, q, qdot):
        from .plants import kinetic_energy, potential_energy

        if len(ad._shape_of(q)) > 1:
            # The plant energies are single-state; loop the (few) rows.
            rows = [
                self.lagrangian(q[i], qdot[i]) for i in range(ad._shape_of(q)[0])
            ]
            return ad.stack(*rows, axis=0)
        return ad.sub(kinetic_energy(self.arm, q, qdot), potential_energy(self.arm, q))


# ---------------------------------------------------------------------------
# Batched acceleration prediction (training hot path).
# ---------------------------------------------------------------------------


def batch_predict_accel(net, q_b, qd_b, u_b):
    """Vectorized Euler-Lagrange inversion over rows of (B, n) arrays.

    The velocity Hessian of every sample comes from one forward-over-reverse
    pass by tiling each row n times with unit tangent directions, so the
    taped operation count is independent of the batch size.
    """
    bsz, n = q_b.shape
    lagr = net.lagrangian

    dl_dq = ad.value_and_multigrad(
        lambda qq: ad.sum_(lagr(qq, qd_b)), [q_b]
    )[1][0]

    def grad_qd(qq):
        return ad.value_and_multigrad(lambda z: ad.sum_(lagr(qq, z)), [qd_b])[1][0]

    _, mixed = ad.jvp(grad_qd, [q_b], [qd_b])

    q_t = np.repeat(q_b, n, axis=0)
    qd_t = np.repeat(qd_b, n, axis=0)
    tangents = np.tile(np.eye(n), (bsz, 1))

    def grad_qd_tiled(z):
        return ad.value_and_multigrad(lambda zz: ad.sum_(lagr(q_t, zz)), [z])[1][0]

    _, hess_rows = ad.jvp(grad_qd_tiled, [qd_t], [tangents])
    mass = ad.reshape(hess_rows, newshape=(bsz, n, n))
    mass = ad.mul(0.5, ad.add(mass, ad.transpose(mass)))

    rhs = ad.sub(ad.add(u_b, dl_dq), mixed)
    return ad.bsolve_psd(mass, rhs)


def batch_mass_hat(net, q_b, qd_b):
    bsz, n = q_b.shape
    q_t = np.repeat(q_b, n, axis=0)
    qd_t = np.repeat(qd_b, n, axis=0)
    tangents = np.tile(np.eye(n), (bsz, 1))

    def grad_qd_tiled(z):
        return ad.value_and_multigrad(
            lambda zz: ad.sum_(net.lagrangian(q_t, zz)), [z]
        )[1][0]

    _, hess_rows = ad.jvp(grad_qd_tiled, [qd_t], [tangents])
    mass = ad.reshape(hess_rows, newshape=(bsz, n, n))
    return ad.mul(0.5, ad.add(mass, ad.transpose(mass)))


# ---------------------------------------------------------------------------
# Datasets.
# ---------------------------------------------------------------------------


@dataclass
class LnnDataset:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    u: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def subset(self, idx) -> "LnnDataset":
        return LnnDataset(self.t[idx], self.q[idx], self.qd[idx], self.qdd[idx], self.u[idx])

    def save_csv(self, path) -> None:
        n = self.n
        header = (
            ["t"]
            + [f"q_{i}" for i in range(n)]
            + [f"qd_{i}" for i in range(n)]
            + [f"qdd_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(n)]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k in range(len(self)):
                row = [self.t[k], *self.q[k], *self.qd[k], *self.qdd[k], *self.u[k]]
                writer.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def load_csv(cls, path) -> "LnnDataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(x) for x in row] for row in reader])
        n = (len(header) - 1) // 4
        expected = (
            ["t"]
            + [f"q_{i}" for i in range(n)]
            + [f"qd_{i}" for i in range(n)]
            + [f"qdd_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(n)]
        )
        if header != expected:
            from .errors import SchemaError

            raise SchemaError(f"{path}: unexpected dataset header {header}")
        return cls(
            t=rows[:, 0],
            q=rows[:, 1 : 1 + n],
            qd=rows[:, 1 + n : 1 + 2 * n],
            qdd=rows[:, 1 + 2 * n : 1 + 3 * n],
            u=rows[:, 1 + 3 * n :],
        )


def generate_free_motion(
    arm: PlanarArm,
    n_samples: int,
    dt: float = 1e-3,
    q0: np.ndarray | None = None,
    qd0: np.ndarray | None = None,
) -> LnnDataset:
    """Free-fall trajectory data (u = 0) with exact acceleration labels."""
    n = arm.n
    q0 = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float)
    qd0 = np.zeros(n) if qd0 is None else np.asarray(qd0, dtype=float)
    zero_u = np.zeros(n)

    def field(t, y):
        return np.concatenate([y[n:], forward_dynamics(arm, y[:n], y[n:], zero_u)])

    state = OdeState(0.0, np.concatenate([q0, qd0]))
    ts = np.zeros(n_samples)
    qs = np.zeros((n_samples, n))
    qds = np.zeros((n_samples, n))
    qdds = np.zeros((n_samples, n))
    for k in range(n_samples):
        ts[k] = state.t
        qs[k] = state.y[:n]
        qds[k] = state.y[n:]
        qdds[k] = forward_dynamics(arm, qs[k], qds[k], zero_u)
        state = rk4_step(field, state, dt)
    return LnnDataset(t=ts, q=qs, qd=qds, qdd=qdds, u=np.zeros((n_samples, n)))


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


def acceleration_mse(net, data: LnnDataset, batch: int = 256) -> float:
    """Mean squared acceleration error over a dataset (unweighted)."""
    total = 0.0
    for start in range(0, len(data), batch):
        sl = slice(start, min(start + batch, len(data)))
        pred = batch_predict_accel(net, data.q[sl], data.qd[sl], data.u[sl])
        total += float(np.sum((np.asarray(pred) - data.qdd[sl]) ** 2))
    return total / (len(data) * data.n)


def train_lnn(
    dataset: LnnDataset,
    net: LagrangianNet,
    q_weight: np.ndarray | None = None,
    epochs: int = 200,
    batch: int = 10,
    lr0: float = 1e-3,
    lr_decay: float = 0.99,
    seed: int = 0,
) -> tuple[LagrangianNet, list]:
    """Minimize sum (qdd_hat - qdd)^T Q (qdd_hat - qdd) with Adam.

    Returns the trained net and the per-epoch mean training loss curve.
    """
    n = dataset.n
    q_w = np.eye(n) if q_weight is None else np.asarray(q_weight, dtype=float)
    if not np.allclose(q_w, q_w.T) or np.any(np.linalg.eigvalsh(q_w) <= 0):
        raise ValueError("Q must be symmetric positive definite")
    if len(dataset) == 0:
        raise ValueError("empty dataset")

    rng = np.random.default_rng(seed)
    params = net.params()
    state = AdamState.init(params)
    curve = []

    def batch_loss(params_list, q_b, qd_b, qdd_b, u_b):
        model = net.with_params(params_list)
        pred = batch_predict_accel(model, q_b, qd_b, u_b)
        err = ad.sub(pred, qdd_b)
        return ad.sum_(ad.mul(err, ad.matmul(err, q_w)))

    n_samples = len(dataset)
    for epoch in range(epochs):
        lr = decayed_lr(lr0, lr_decay, epoch)
        order = rng.permutation(n_samples)
        epoch_loss = 0.0
        for start in range(0, n_samples, batch):
            idx = order[start : start + batch]
            loss, grads = ad.value_and_multigrad(
                lambda *ps: batch_loss(
                    list(ps), dataset.q[idx], dataset.qd[idx], dataset.qdd[idx], dataset.u[idx]
                ),
                params,
            )
            loss = float(loss)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite LNN loss at epoch {epoch}, sample offset {start}"
                )
            epoch_loss += loss
            params, state = adam_step(params, grads, state, lr)
        curve.append(epoch_loss / n_samples)
    return net.with_params(params), curve
