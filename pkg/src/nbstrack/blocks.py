"""Structured controller blocks: convex potential and positive damping.

The potential adds a fixed positive definite quadratic to a nonnegative
input-convex network that vanishes at the origin, so the total is strongly
convex with its unique minimum at zero.  The damping matrix is assembled as
T^T T from a learned lower-triangular factor whose diagonal is rectified
and shifted by a positive constant m; an optional ridge eps*I on top makes
lower bounds like D >= 0.5 I certifiable regardless of the learned factor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch
from .nets import DEFAULT_SRELU_D, Ficnn, Mlp, make_ficnn, make_mlp
from .numerics import cholesky, check_symmetric


@dataclass
class PotentialPhi:
    """phi(z) = psi(z) + z^T S z with psi convex, psi(0) = 0, psi >= 0."""

    psi: Ficnn
    s_matrix: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_matrix, dtype=float)
        check_symmetric(s, tol=1e-12)
        cholesky(s)  # raises NotPositiveDefinite for bad S
        self.s_matrix = s

    @property
    def dim(self) -> int:
        return self.s_matrix.shape[0]

    def value(self, z1):
        shape = ad._shape_of(z1)
        if shape[-1] != self.dim:
            raise DimensionMismatch(f"phi expects dim {self.dim}, got {shape}")
        if len(shape) == 1:
            quad = ad.dot(z1, ad.matvec(self.s_matrix, z1))
        else:
            quad = ad.sum_(ad.mul(z1, ad.matmul(z1, self.s_matrix)), axis=1)
        return ad.add(self.psi.forward(z1), quad)

    def grad(self, z1):
        """grad psi(z1) + 2 S z1; vanishes exactly at the origin."""
        _, g_psi = self.psi.forward_and_grad(z1)
        return ad.add(g_psi, ad.mul(2.0, ad.matvec(self.s_matrix, z1)))

    def hess_vec(self, z1, v):
        """Hess phi(z1) @ v without forming the full Hessian."""
        return self.grad_and_hess_vec(z1, v)[1]

    def grad_and_hess_vec(self, z1, v):
        """(grad phi, Hess phi @ v) from one dual pass over the analytic
        gradient recursion."""
        g_psi, h_psi_v = ad.jvp(
            lambda zz: self.psi.forward_and_grad(zz)[1], [z1], [v]
        )
        g = ad.add(g_psi, ad.mul(2.0, ad.matvec(self.s_matrix, z1)))
        hv = ad.add(h_psi_v, ad.mul(2.0, ad.matvec(self.s_matrix, v)))
        return g, hv

    def hessian_at(self, z1):
        return ad.add(
            ad.hessian(self.psi.forward, z1), ad.mul(2.0, self.s_matrix)
        )

    def params(self) -> list:
        # S is a fixed hyperparameter, not trained.
        return self.psi.params()

    def with_params(self, params: list) -> "PotentialPhi":
        return replace(self, psi=self.psi.with_params(params))


def make_potential(
    n: int,
    rng: np.random.Generator,
    widths: tuple = (32, 32, 32),
    s_matrix: np.ndarray | None = None,
    srelu_d: float = DEFAULT_SRELU_D,
) -> PotentialPhi:
    psi = make_ficnn(n, widths, rng, activation="srelu", srelu_d=srelu_d, bias_free=True)
    s = np.eye(n) if s_matrix is None else np.asarray(s_matrix, dtype=float)
    return PotentialPhi(psi=psi, s_matrix=s)


@dataclass
class DampingD:
    """D(z2) = T^T T + ridge*I with T lower triangular from two nets.

    diag(T) = relu(diag_net(z2)) + m keeps the factor nonsingular for m > 0;
    the strict lower triangle comes straight from offdiag_net's bounded tanh
    output.
    """

    diag_net: Mlp
    offdiag_net: Mlp
    m: float
    ridge: float = 0.0

    @property
    def dim(self) -> int:
        return self.diag_net.out_dim

    def factor(self, z2):
        n = self.dim
        if ad._shape_of(z2) != (n,):
            raise DimensionMismatch(f"damping expects dim {n}, got {ad._shape_of(z2)}")
        diag = ad.add(ad.relu(self.diag_net.forward(z2)), self.m)
        t = ad.scatter(diag, idx=(np.arange(n), np.arange(n)), shape=(n, n))
        if n > 1:
            rows, cols = np.tril_indices(n, k=-1)
            off = self.offdiag_net.forward(z2)
            t = ad.add(t, ad.scatter(off, idx=(rows, cols), shape=(n, n)))
        return t

    def matrix(self, z2):
        t = self.factor(z2)
        d = ad.matmul(ad.transpose(t), t)
        if self.ridge > 0.0:
            d = ad.add(d, self.ridge * np.eye(self.dim))
        return d

    def params(self) -> list:
        return self.diag_net.params() + self.offdiag_net.params()

    def with_params(self, params: list) -> "DampingD":
        n_diag = len(self.diag_net.params())
        return replace(
            self,
            diag_net=self.diag_net.with_params(params[:n_diag]),
            offdiag_net=self.offdiag_net.with_params(params[n_diag:]),
        )


def make_damping(
    n: int,
    rng: np.random.Generator,
    widths: tuple = (32, 32),
    m: float = 0.001,
    ridge: float = 0.0,
) -> DampingD:
    diag_net = make_mlp(n, widths, n, rng, "tanh", "tanh")
    offdiag_net = make_mlp(n, widths, n * (n - 1) // 2, rng, "tanh", "tanh")
    return DampingD(diag_net=diag_net, offdiag_net=offdiag_net, m=m, ridge=ridge)
