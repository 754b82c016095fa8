"""Ground-truth dynamics: planar n-link arms with point masses at link ends.

The inertia matrix comes from the point-mass position Jacobians, gravity is
the gradient of the height potential, and the Coriolis matrix uses the
Christoffel-symbol factorization, which simultaneously reproduces the
Euler-Lagrange dynamics and keeps Mdot - 2C skew-symmetric.  Everything is
written with autodiff primitives so closed-loop training can differentiate
straight through the model terms.

Note the gravity sign: with L = T - V the equations of motion carry
G = +dV/dq on the left-hand side of M qdd + C qd + G = u; a two-link arm
released from rest must fall, which pins the sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import SchemaError


@dataclass(frozen=True)
class PlanarArm:
    """Point masses at the ends of rigid massless links."""

    masses: np.ndarray
    lengths: np.ndarray
    gravity: float = 9.8

    def __post_init__(self):
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=float))
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))
        if self.masses.shape != self.lengths.shape or self.masses.ndim != 1:
            raise SchemaError("masses and lengths must be 1D arrays of equal length")
        if len(self.masses) < 1 or np.any(self.masses <= 0) or np.any(self.lengths <= 0):
            raise SchemaError("need n >= 1 links with positive masses and lengths")

    @property
    def n(self) -> int:
        return len(self.masses)


@dataclass
class DisturbanceModel:
    """Constant torque disturbance (or none)."""

    tau: np.ndarray | None = None

    @property
    def bound(self) -> float:
        """d with ||tau_d||^2 <= d."""
        if self.tau is None:
            return 0.0
        return float(np.dot(self.tau, self.tau))

    def torque(self, n: int) -> np.ndarray:
        return np.zeros(n) if self.tau is None else np.asarray(self.tau, dtype=float)


def two_link_arm() -> PlanarArm:
    return PlanarArm(masses=[1.0, 1.0], lengths=[1.0, 1.0])


def three_link_arm() -> PlanarArm:
    return PlanarArm(masses=[1.0, 1.0, 1.0], lengths=[1.0, 1.0, 1.0])


def _link_trig(arm: PlanarArm, q):
    """Per-link l_i*sin(theta_i), l_i*cos(theta_i) with cumulative angles."""
    n = arm.n
    sins, coss = [], []
    acc = None
    for i in range(n):
        acc = q[i] if acc is None else ad.add(acc, q[i])
        sins.append(ad.mul(arm.lengths[i], ad.sin(acc)))
        coss.append(ad.mul(arm.lengths[i], ad.cos(acc)))
    return sins, coss


def _jacobian_columns(arm: PlanarArm, q):
    """cols[j][k] = d p_j / d q_k as an (sx, cx) pair, for k <= j.

    p_j is the position of point mass j; the column is the suffix sum of the
    per-link tangent vectors (-l_i sin, l_i cos) over i = k..j.
    """
    n = arm.n
    sins, coss = _link_trig(arm, q)
    cols = [[None] * n for _ in range(n)]
    for j in range(n):
        sx, cx = ad.neg(sins[j]), coss[j]
        cols[j][j] = (sx, cx)
        for k in range(j - 1, -1, -1):
            prev = cols[j][k + 1]
            cols[j][k] = (ad.sub(prev[0], sins[k]), ad.add(prev[1], coss[k]))
    return cols, sins, coss


def mass_matrix(arm: PlanarArm, q):
    """M(q) = sum_i m_i J_i(q)^T J_i(q); symmetric positive definite."""
    n = arm.n
    cols, _, _ = _jacobian_columns(arm, q)
    entries = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            acc = None
            for j in range(l, n):
                ck, cl = cols[j][k], cols[j][l]
                term = ad.mul(
                    arm.masses[j],
                    ad.add(ad.mul(ck[0], cl[0]), ad.mul(ck[1], cl[1])),
                )
                acc = term if acc is None else ad.add(acc, term)
            entries[k][l] = acc
            entries[l][k] = acc
    rows = [ad.stack(*entries[k], axis=0) for k in range(n)]
    return ad.stack(*rows, axis=0)


def potential_energy(arm: PlanarArm, q):
    """V(q) = g * sum_j m_j y_j with y_j the height of point mass j."""
    sins, _ = _link_trig(arm, q)
    total = None
    height = None
    for j in range(arm.n):
        height = sins[j] if height is None else ad.add(height, sins[j])
        term = ad.mul(arm.masses[j], height)
        total = term if total is None else ad.add(total, term)
    return ad.mul(arm.gravity, total)


def kinetic_energy(arm: PlanarArm, q, qdot):
    m = mass_matrix(arm, q)
    return ad.mul(0.5, ad.dot(qdot, ad.matvec(m, qdot)))


def total_energy(arm: PlanarArm, q, qdot):
    return ad.add(kinetic_energy(arm, q, qdot), potential_energy(arm, q))


def gravity(arm: PlanarArm, q):
    """G(q) = +dV/dq (see module docstring for the sign)."""
    n = arm.n
    _, coss = _link_trig(arm, q)
    # dV/dq_k = g * sum_{j>=k} m_j * sum_{i=k..j} l_i cos(theta_i)
    suffix_mass = np.concatenate([np.cumsum(arm.masses[::-1])[::-1], [0.0]])
    comps = []
    for k in range(n):
        acc = None
        for i in range(k, n):
            term = ad.mul(suffix_mass[i], coss[i])
            acc = term if acc is None else ad.add(acc, term)
        comps.append(ad.mul(arm.gravity, acc))
    return ad.stack(*comps, axis=0)


def mass_jacobian(arm: PlanarArm, q):
    """dM/dq as a (n, n, n) array, entry [k, l, i] = dM_kl/dq_i.

    Forward-mode reference implementation; the closed-form version inside
    arm_terms is checked against this.
    """
    n = arm.n
    flat = ad.jacobian(
        lambda qq: ad.reshape(mass_matrix(arm, qq), newshape=(n * n,)), q
    )
    return ad.reshape(flat, newshape=(n, n, n))


def _arm_constants(arm: PlanarArm) -> dict:
    """Constant index/selection tensors for the vectorized term assembly,
    cached on the arm instance."""
    cached = getattr(arm, "_term_consts", None)
    if cached is not None:
        return cached
    n = arm.n
    idx = np.arange(n)
    consts = {
        # theta = cum_lower @ q gives cumulative angles.
        "cum_lower": np.tril(np.ones((n, n))),
        # sel[k, j, i] = 1 for k <= i <= j (suffix-sum selector).
        "sel": (
            (idx[None, None, :] >= idx[:, None, None])
            & (idx[None, None, :] <= idx[None, :, None])
        ).astype(float),
        "maxidx": np.maximum.outer(idx, idx),
        # grav_sel[k, i] = g * (sum of masses at or beyond i) for i >= k.
        "grav_sel": arm.gravity
        * np.triu(np.ones((n, n)))
        * np.cumsum(arm.masses[::-1])[::-1][None, :],
        "mass_col": arm.masses[None, :, None],
    }
    object.__setattr__(arm, "_term_consts", consts)
    return consts


def arm_terms(arm: PlanarArm, q, qdot):
    """(M, C, G) in one vectorized pass over shared trig columns.

    The Jacobian columns are suffix sums c_k^j = sum_{i=k..j} a_i of the
    per-link tangents a_i = l_i(-sin th_i, cos th_i), and dM/dq is closed
    form via their angle derivatives b_i = l_i(-cos th_i, -sin th_i):
    d c_k^j / d q_r = sum_{i=max(k,r)..j} b_i.  Everything assembles from
    two einsum families against constant selector tensors.
    """
    cst = _arm_constants(arm)
    theta = ad.matvec(cst["cum_lower"], q)
    ls = ad.mul(arm.lengths, ad.sin(theta))
    lc = ad.mul(arm.lengths, ad.cos(theta))
    a_rows = ad.stack(ad.neg(ls), lc, axis=1)  # (n, 2)
    b_rows = ad.stack(ad.neg(lc), ad.neg(ls), axis=1)
    c3 = ad.einsum2(cst["sel"], a_rows, spec="kji,ix->kjx")
    d3 = ad.einsum2(cst["sel"], b_rows, spec="kji,ix->kjx")
    cw = ad.mul(c3, cst["mass_col"])  # masses folded in along j
    mass = ad.einsum2(c3, cw, spec="kjx,ljx->kl")
    g1 = d3[cst["maxidx"]]  # g1[k, r, j, x] = d3[max(k, r), j, x]
    dm = ad.add(
        ad.einsum2(g1, cw, spec="krjx,ljx->klr"),
        ad.einsum2(g1, cw, spec="lrjx,kjx->klr"),
    )
    t1 = ad.einsum2(dm, qdot, spec="abi,i->ab")
    t2 = ad.einsum2(dm, qdot, spec="aib,i->ab")
    t3 = ad.einsum2(dm, qdot, spec="iba,i->ab")
    coriolis_mat = ad.mul(0.5, ad.sub(ad.add(t1, t2), t3))
    grav = ad.matvec(cst["grav_sel"], lc)
    return mass, coriolis_mat, grav


def coriolis(arm: PlanarArm, q, qdot):
    """Christoffel-symbol Coriolis matrix.

    Satisfies both M qdd + C qd + G = u for the true dynamics and the
    skew-symmetry of Mdot - 2C.
    """
    _, c, _ = arm_terms(arm, q, qdot)
    return c


def mass_rate(arm: PlanarArm, q, qdot):
    """Mdot = sum_i dM/dq_i qdot_i (for skew-symmetry checks)."""
    return ad.einsum2(mass_jacobian(arm, q), qdot, spec="abi,i->ab")


def forward_dynamics(arm: PlanarArm, q, qdot, u, tau_d=None):
    """qdd = M^{-1} (u + tau_d - C qd - G)."""
    m, c, g = arm_terms(arm, q, qdot)
    rhs = ad.sub(ad.sub(u, ad.matvec(c, qdot)), g)
    if tau_d is not None:
        rhs = ad.add(rhs, tau_d)
    return ad.solve_psd(m, rhs)


class ArmModel:
    """Exact-model handle for the controller: (M, C, G) of a planar arm."""

    def __init__(self, arm: PlanarArm):
        self.arm = arm
        self.n = arm.n

    def terms(self, q, qdot):
        return arm_terms(self.arm, q, qdot)

    def mass(self, q, qdot):
        return mass_matrix(self.arm, q)

    def params(self) -> list:
        return []

    def with_params(self, params: list) -> "ArmModel":
        return self


def save_arm(path, arm: PlanarArm) -> None:
    lines = [
        "[arm]",
        "masses = [" + ", ".join(repr(float(m)) for m in arm.masses) + "]",
        "lengths = [" + ", ".join(repr(float(l)) for l in arm.lengths) + "]",
        f"gravity = {float(arm.gravity)!r}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_arm(path) -> PlanarArm:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    if "arm" not in data:
        raise SchemaError(f"{path}: missing [arm] section")
    sec = data["arm"]
    unknown = set(sec) - {"masses", "lengths", "gravity"}
    if unknown:
        raise SchemaError(f"{path}: unknown arm keys {sorted(unknown)}")
    return PlanarArm(
        masses=sec["masses"], lengths=sec["lengths"], gravity=sec.get("gravity", 9.8)
    )
