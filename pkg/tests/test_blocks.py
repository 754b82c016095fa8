import numpy as np
import pytest

from nbstrack import autodiff as ad
from nbstrack.blocks import DampingD, PotentialPhi, make_damping, make_potential
from nbstrack.errors import DimensionMismatch, NotPositiveDefinite
from nbstrack.numerics import sym_eig


def zero_params(obj):
    return obj.with_params([np.zeros_like(p) for p in obj.params()])


class TestPotentialValue:
    def test_zero_at_origin(self):
        rng = np.random.default_rng(0)
        phi = make_potential(2, rng)
        assert float(phi.value(np.zeros(2))) == 0.0

    def test_quadratic_only_identity(self):
        rng = np.random.default_rng(1)
        phi = zero_params(make_potential(2, rng))
        assert np.isclose(float(phi.value(np.array([1.0, 0.0]))), 1.0)

    def test_quadratic_only_diag(self):
        rng = np.random.default_rng(2)
        phi = zero_params(make_potential(2, rng, s_matrix=np.diag([2.0, 3.0])))
        assert np.isclose(float(phi.value(np.array([1.0, 1.0]))), 5.0)

    def test_strong_lower_bound(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            phi = make_potential(2, rng)
            z = rng.uniform(-3, 3, (500, 2))
            vals = phi.value(z)
            lam = np.linalg.eigvalsh(phi.s_matrix)[0]
            assert np.all(vals >= lam * np.sum(z * z, axis=1) - 1e-12)

    def test_positive_away_from_origin(self):
        rng = np.random.default_rng(4)
        count = 0
        for _ in range(10):
            phi = make_potential(2, rng)
            z = rng.uniform(-2, 2, (1000, 2))
            keep = np.linalg.norm(z, axis=1) >= 1e-6
            assert np.all(phi.value(z[keep]) > 0.0)
            count += int(np.sum(keep))
        assert count >= 9000

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        phi = make_potential(2, rng)
        with pytest.raises(DimensionMismatch):
            phi.value(np.zeros(3))

    def test_rejects_non_pd_s(self):
        rng = np.random.default_rng(6)
        psi = make_potential(2, rng).psi
        with pytest.raises(NotPositiveDefinite):
            PotentialPhi(psi=psi, s_matrix=np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestPotentialDerivatives:
    def test_grad_zero_at_origin(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            phi = make_potential(2, rng)
            assert np.allclose(phi.grad(np.zeros(2)), 0.0)

    def test_grad_quadratic(self):
        rng = np.random.default_rng(8)
        phi = zero_params(make_potential(2, rng))
        assert np.allclose(phi.grad(np.array([1.0, 0.0])), [2.0, 0.0])

    def test_grad_matches_fd(self):
        rng = np.random.default_rng(9)
        phi = make_potential(2, rng)
        h = 1e-6
        for _ in range(20):
            z = rng.uniform(-2, 2, 2)
            g = phi.grad(z)
            for i in range(2):
                zp, zm = z.copy(), z.copy()
                zp[i] += h
                zm[i] -= h
                fd = (float(phi.value(zp)) - float(phi.value(zm))) / (2 * h)
                assert abs(g[i] - fd) <= 1e-5 * max(1.0, abs(fd))

    def test_hessian_quadratic(self):
        rng = np.random.default_rng(10)
        s = np.array([[2.0, 0.5], [0.5, 1.0]])
        phi = zero_params(make_potential(2, rng, s_matrix=s))
        assert np.allclose(phi.hessian_at(rng.standard_normal(2)), 2 * s)

    def test_hessian_lower_bound_random(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            phi = make_potential(2, rng)
            lam_s = np.linalg.eigvalsh(phi.s_matrix)[0]
            z = rng.uniform(-2, 2, 2)
            h = phi.hessian_at(z)
            assert np.linalg.eigvalsh(h)[0] >= 2 * lam_s - 1e-8

    def test_alpha_condition_via_s(self):
        rng = np.random.default_rng(12)
        phi = make_potential(2, rng)  # S = I
        h0 = phi.hessian_at(np.zeros(2))
        assert np.linalg.eigvalsh(h0)[0] >= 2.0 - 1e-8

    def test_hess_vec_consistency(self):
        rng = np.random.default_rng(13)
        phi = make_potential(3, rng)
        z = rng.uniform(-1, 1, 3)
        v = rng.standard_normal(3)
        assert np.allclose(phi.hess_vec(z, v), phi.hessian_at(z) @ v, atol=1e-10)


class TestPotentialConvexity:
    def test_strong_midpoint_convexity(self):
        rng = np.random.default_rng(14)
        total = 0
        for _ in range(10):
            phi = make_potential(2, rng)
            lam_s = np.linalg.eigvalsh(phi.s_matrix)[0]
            a = rng.uniform(-3, 3, (100, 2))
            b = rng.uniform(-3, 3, (100, 2))
            fa, fb = phi.value(a), phi.value(b)
            for lam in (0.25, 0.5, 0.75):
                fm = phi.value(lam * a + (1 - lam) * b)
                gap = lam * fa + (1 - lam) * fb - lam * (1 - lam) * lam_s * np.sum(
                    (a - b) ** 2, axis=1
                )
                assert np.all(fm <= gap + 1e-8)
            total += 100
        assert total >= 1000


class TestDamping:
    def test_zero_nets_small_m(self):
        rng = np.random.default_rng(15)
        d = zero_params(make_damping(2, rng, m=0.001))
        assert np.allclose(d.matrix(np.array([0.4, -0.2])), 1e-6 * np.eye(2))

    def test_zero_nets_unit_m(self):
        rng = np.random.default_rng(16)
        d = zero_params(make_damping(2, rng, m=1.0))
        assert np.allclose(d.matrix(np.zeros(2)), np.eye(2))

    def test_symmetric_and_pd_1000(self):
        rng = np.random.default_rng(17)
        worst_asym = 0.0
        for _ in range(20):
            d = make_damping(2, rng, m=0.001)
            for _ in range(50):
                z = rng.uniform(-3, 3, 2)
                mat = d.matrix(z)
                worst_asym = max(worst_asym, np.max(np.abs(mat - mat.T)))
                w, _ = sym_eig(mat)
                assert w[-1] > 0.0
        assert worst_asym <= 1e-12

    def test_ridge_certifies_lower_bound(self):
        rng = np.random.default_rng(18)
        d = make_damping(2, rng, m=0.001, ridge=0.5)
        for _ in range(200):
            z = rng.uniform(-5, 5, 2)
            w = np.linalg.eigvalsh(d.matrix(z))
            assert w[0] >= 0.5 - 1e-12

    def test_continuity_finite_difference(self):
        rng = np.random.default_rng(19)
        d = make_damping(2, rng)
        z = rng.uniform(-1, 1, 2)
        h = 1e-6
        for i in range(2):
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            slope = np.max(np.abs(d.matrix(zp) - d.matrix(zm))) / (2 * h)
            assert slope < 1e3  # bounded local Lipschitz behavior

    def test_one_link_edge_case(self):
        rng = np.random.default_rng(20)
        d = make_damping(1, rng, m=0.5)
        mat = d.matrix(np.array([0.3]))
        assert mat.shape == (1, 1)
        assert mat[0, 0] > 0.0

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(21)
        d = make_damping(2, rng)
        with pytest.raises(DimensionMismatch):
            d.matrix(np.zeros(3))
