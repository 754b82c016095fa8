"""Acceptance gate: every criterion at its stated tolerance, one printed
pass/fail line each.

The heavy reproductions (stability grid, the training recipe, the alpha
sweep, the learned-dynamics pipeline) run here end to end, so a full pass
takes on the order of an hour or two on a small machine.  Shared artifacts
are computed once per session.  Set NBSTRACK_ACCEPT_JOBS to widen the sweep
worker pool (default 2).
"""

import os
from pathlib import Path

import numpy as np
import pytest

from nbstrack import autodiff as ad
from nbstrack.blocks import make_damping, make_potential
from nbstrack.controller import NbsController, make_pid, sincos_reference
from nbstrack.harness import PlantTruth, SimConfig, metrics, rollout
from nbstrack.lnn import (
    LnnDataset,
    LnnModel,
    acceleration_mse,
    coriolis_hat,
    generate_free_motion,
    gravity_hat,
    make_lnn,
    mass_hat,
    mdot_hat,
    train_lnn,
)
from nbstrack.nets import make_ficnn, make_picnn
from nbstrack.numerics import OdeState, rk4_step
from nbstrack.plants import (
    ArmModel,
    DisturbanceModel,
    coriolis,
    forward_dynamics,
    mass_rate,
    three_link_arm,
    total_energy,
    two_link_arm,
)
from nbstrack.training import (
    SweepSpec,
    TrainConfig,
    alpha_sweep,
    default_alpha_grid,
    theorem3_bound,
    train_controller,
)

JOBS = int(os.environ.get("NBSTRACK_ACCEPT_JOBS", "2"))


def report(name: str, ok: bool, details: str = "") -> None:
    print(f"ACCEPTANCE [{name}]: {'PASS' if ok else 'FAIL'} {details}")


def fresh_controller(seed: int, m: float = 0.001, ridge: float = 0.0) -> NbsController:
    arm = two_link_arm()
    rng = np.random.default_rng(seed)
    return NbsController(
        phi=make_potential(2, rng),
        damping=make_damping(2, rng, m=m, ridge=ridge),
        model=ArmModel(arm),
    )


@pytest.fixture(scope="module")
def two_link():
    arm = two_link_arm()
    return arm, PlantTruth(arm), sincos_reference(2)


@pytest.fixture(scope="module")
def untrained_grid(two_link):
    """5 seeds x 4 initial states (incl. rest at zero), 100 s, undisturbed."""
    arm, truth, ref = two_link
    state_rng = np.random.default_rng(2024)
    states = [(np.zeros(2), np.zeros(2))]
    for _ in range(3):
        states.append((state_rng.uniform(-1, 1, 2), state_rng.uniform(-1, 1, 2)))
    results = []
    for seed in range(5):
        ctrl = fresh_controller(seed)
        for q0, qd0 in states:
            log = rollout(
                truth, ctrl, ref, SimConfig(dt=0.01, horizon=100.0, q0=q0, qd0=qd0)
            )
            rep = metrics(log)
            results.append(
                {
                    "seed": seed,
                    "steady": rep.steady_state_error,
                    "conv": rep.convergence_time,
                    "max_dv": float(np.max(np.diff(log.v))),
                }
            )
    return results


@pytest.fixture(scope="module")
def trained_two_link(two_link):
    """The published training recipe: T = 1 s, dt = 0.01, stage cost |z1|^2,
    lr 1e-3 decaying, 200 epochs."""
    arm, truth, ref = two_link
    ctrl = fresh_controller(0)
    tcfg = TrainConfig(
        horizon=1.0, dt=0.01, epochs=200, lr0=1e-3, lr_decay=0.99, alpha=None
    )
    trained, curve = train_controller(truth, ctrl, ref, tcfg, seed=0)
    log = rollout(truth, trained, ref, SimConfig(dt=0.01, horizon=100.0))
    return trained, curve, metrics(log)


class TestUntrainedStability:
    def test_theorem1_grid(self, untrained_grid):
        worst_steady = max(r["steady"] for r in untrained_grid)
        worst_dv = max(r["max_dv"] for r in untrained_grid)
        all_converged = all(r["conv"] is not None for r in untrained_grid)
        ok = worst_steady < 1e-2 and worst_dv <= 1e-6 and all_converged
        report(
            "untrained stability",
            ok,
            f"(20 runs: worst steady {worst_steady:.2e} < 1e-2, "
            f"worst per-step dV {worst_dv:.2e} <= 1e-6)",
        )
        assert worst_steady < 1e-2
        assert worst_dv <= 1e-6
        assert all_converged


class TestTrainingSpeedup:
    def test_recipe_reaches_table_targets(self, trained_two_link):
        trained, curve, rep = trained_two_link
        ok = (
            rep.converged
            and rep.convergence_time < 1.0
            and rep.steady_state_error <= 1e-4
        )
        report(
            "training speedup",
            ok,
            f"(convergence {rep.convergence_time:.2f} s < 1 s, "
            f"steady {rep.steady_state_error:.2e} <= 1e-4)",
        )
        assert rep.converged and rep.convergence_time < 1.0
        assert rep.steady_state_error <= 1e-4

    def test_loss_trend(self, trained_two_link):
        _, curve, _ = trained_two_link
        ok = curve[-1] <= 0.5 * curve[0]
        report("training loss trend", ok, f"(final/initial = {curve[-1] / curve[0]:.3f} <= 0.5)")
        assert ok


class TestBaselineOrdering:
    def test_table_ordering(self, two_link, untrained_grid, trained_two_link):
        arm, truth, ref = two_link
        pid = make_pid(2)
        pid_rep = metrics(rollout(truth, pid, ref, SimConfig(dt=0.01, horizon=100.0)))
        untrained_rest = next(r for r in untrained_grid if r["seed"] == 0)
        trained_rep = trained_two_link[2]
        t_tr = trained_rep.convergence_time
        t_un = untrained_rest["conv"]
        t_pid = pid_rep.convergence_time if pid_rep.converged else float("inf")
        ok = t_tr < t_un < t_pid
        report(
            "baseline ordering",
            ok,
            f"(trained {t_tr:.2f} s < untrained {t_un:.2f} s < PID {t_pid:.2f} s)",
        )
        assert ok


class TestTheorem2:
    def test_premise_gives_gradient_bound(self, two_link):
        # Ridge 0.5 certifies D >= I/2; with |tau_d|^2 = d the steady states
        # must satisfy |grad Phi|^2 <= d/2 + 1e-3.
        arm, truth, ref = two_link
        tau = np.array([1.0, 1.0])
        d = float(tau @ tau)
        ctrl = fresh_controller(11, m=1.0, ridge=0.5)
        log = rollout(
            truth,
            ctrl,
            ref,
            SimConfig(dt=0.01, horizon=100.0, disturbance=DisturbanceModel(tau=tau)),
        )
        tail = log.t >= 70.0
        worst = 0.0
        for z1 in log.z1[tail][::10]:
            gp = np.asarray(ad.val(ctrl.phi.grad(z1)))
            worst = max(worst, float(gp @ gp))
        ok = worst <= 0.5 * d + 1e-3
        report("theorem-2 gradient bound", ok, f"(max |grad Phi|^2 {worst:.3e} <= {0.5 * d + 1e-3})")
        assert ok


class TestAlphaSweep:
    def test_theorem3_bound_via_sweep(self, two_link):
        arm, _, _ = two_link
        tau = np.array([1.0, 1.0])
        d = 2.0
        spec = SweepSpec(
            arm=arm,
            tau_d=tau,
            tcfg=TrainConfig(
                horizon=1.0,
                dt=0.01,
                epochs=200,
                lr0=1e-3,
                lr_decay=0.99,
                control_mode="zoh",
            ),
            ridge=0.5,
            damping_m=1.0,
            base_seed=100,
        )
        grid = default_alpha_grid(40, 0.2, 2.0)
        assert np.isclose(theorem3_bound(1.0, d), 1.0)
        assert np.isclose(theorem3_bound(2.0, d), 0.25)
        rows = alpha_sweep(spec, grid, jobs=JOBS)
        margins = [(row.bound + 1e-3) - row.steady_state_error for row in rows]
        bounds = np.array([row.bound for row in rows])
        ok = all(m >= 0 for m in margins) and np.all(np.diff(bounds) <= 0)
        worst_i = int(np.argmin(margins))
        report(
            "theorem-3 alpha sweep",
            ok,
            f"(40 alphas on (0.2, 2]: worst margin {margins[worst_i]:.3e} at "
            f"alpha={rows[worst_i].alpha:.3f}, measured {rows[worst_i].steady_state_error:.3e} "
            f"vs bound {rows[worst_i].bound:.3e})",
        )
        assert ok


@pytest.fixture(scope="module")
def lnn_pipeline():
    """Three-link free-motion data, trained Lagrangian, closed-loop eval."""
    arm = three_link_arm()
    data_all = generate_free_motion(arm, 11_000, dt=1e-3)
    train = data_all.subset(slice(0, 10_000))
    holdout = data_all.subset(slice(10_000, 11_000))
    rng = np.random.default_rng(0)
    net = make_lnn(3, rng)
    mse0 = acceleration_mse(net, holdout)
    trained, curve = train_lnn(train, net, epochs=200, batch=10, seed=0)
    mse1 = acceleration_mse(trained, holdout)
    return arm, train, holdout, trained, mse0, mse1


class TestLnnPipeline:
    def test_holdout_mse_improvement(self, lnn_pipeline):
        _, _, _, _, mse0, mse1 = lnn_pipeline
        factor = mse0 / mse1
        ok = factor >= 100.0
        report("lnn holdout mse", ok, f"(improvement {factor:.0f}x >= 100x)")
        assert ok

    def test_mass_identifiability(self, lnn_pipeline):
        from nbstrack.plants import mass_matrix

        arm, train, _, trained, _, _ = lnn_pipeline
        rng = np.random.default_rng(5)
        idx = rng.choice(len(train), size=100, replace=False)
        rels = []
        for k in idx:
            m_hat = np.asarray(mass_hat(trained, train.q[k], train.qd[k]))
            m_true = np.asarray(mass_matrix(arm, train.q[k]))
            rels.append(
                np.linalg.norm(m_hat - m_true) / np.linalg.norm(m_true)
            )
        worst = float(np.max(rels))
        ok = worst <= 0.2
        report("lnn mass identifiability", ok, f"(worst relative error {worst:.3f} <= 0.2)")
        assert ok

    def test_learned_model_tracking(self, lnn_pipeline):
        arm, _, _, trained, _, _ = lnn_pipeline
        rng = np.random.default_rng(7)
        ctrl = NbsController(
            phi=make_potential(3, rng),
            damping=make_damping(3, rng, m=1.0, ridge=1.0),
            model=LnnModel(trained),
        )
        ref = sincos_reference(3)
        log = rollout(
            PlantTruth(arm), ctrl, ref, SimConfig(dt=0.01, horizon=100.0)
        )
        rep = metrics(log)
        ok = rep.steady_state_error <= 1e-2
        report(
            "lnn closed-loop tracking",
            ok,
            f"(steady |z1|^2 {rep.steady_state_error:.3e} <= 1e-2)",
        )
        assert ok


class TestPropertySuites:
    """Always-on checks at the stated tolerances (compact re-assertions; the
    full versions run in the per-module test files)."""

    def test_convexity_10k(self):
        rng = np.random.default_rng(0)
        fic = make_ficnn(2, (16, 16), rng)
        pic = make_picnn(2, 2, (16, 16), rng)
        a = rng.uniform(-4, 4, (10_000, 2))
        b = rng.uniform(-4, 4, (10_000, 2))
        ctx = rng.uniform(-2, 2, (10_000, 2))
        ok = True
        for lam in (0.25, 0.5, 0.75):
            mid_f = fic.forward(lam * a + (1 - lam) * b)
            ok &= bool(
                np.all(mid_f <= lam * fic.forward(a) + (1 - lam) * fic.forward(b) + 1e-9)
            )
            mid_p = pic.forward(ctx, lam * a + (1 - lam) * b)
            ok &= bool(
                np.all(
                    mid_p
                    <= lam * pic.forward(ctx, a) + (1 - lam) * pic.forward(ctx, b) + 1e-9
                )
            )
        report("convexity 10k", ok, "(ficnn + picnn midpoint checks, slack 1e-9)")
        assert ok

    def test_potential_and_damping_certificates(self):
        rng = np.random.default_rng(1)
        phi = make_potential(2, rng)
        ok = float(phi.value(np.zeros(2))) == 0.0
        lam_s = np.linalg.eigvalsh(phi.s_matrix)[0]
        for _ in range(200):
            z = rng.uniform(-2, 2, 2)
            h = np.asarray(phi.hessian_at(z))
            ok &= bool(np.linalg.eigvalsh(h)[0] >= 2 * lam_s - 1e-8)
        damping = make_damping(2, rng, m=0.001, ridge=0.5)
        for _ in range(200):
            mat = np.asarray(damping.matrix(rng.uniform(-3, 3, 2)))
            ok &= bool(np.max(np.abs(mat - mat.T)) <= 1e-12)
            ok &= bool(np.linalg.eigvalsh(mat)[0] >= 0.5 - 1e-12)
        report("potential/damping certificates", ok, "(Phi(0)=0, Hess bound, D >= ridge)")
        assert ok

    def test_plant_skew_1000(self):
        arm = two_link_arm()
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(1000):
            q = rng.uniform(-np.pi, np.pi, 2)
            qd = rng.uniform(-3, 3, 2)
            s = np.asarray(mass_rate(arm, q, qd)) - 2.0 * np.asarray(coriolis(arm, q, qd))
            worst = max(worst, float(np.max(np.abs(s + s.T))))
        ok = worst <= 1e-8
        report("plant skew symmetry", ok, f"(worst residual {worst:.2e} <= 1e-8)")
        assert ok

    def test_lnn_identities(self):
        rng = np.random.default_rng(3)
        net = make_lnn(2, rng, widths=(8, 8))
        worst_skew = worst_pair = 0.0
        for _ in range(100):
            q = rng.uniform(-2, 2, 2)
            qd = rng.uniform(-2, 2, 2)
            md = np.asarray(mdot_hat(net, q, qd))
            c = np.asarray(coriolis_hat(net, q, qd))
            g = np.asarray(gravity_hat(net, q, qd))
            s = md - 2 * c
            worst_skew = max(worst_skew, float(np.max(np.abs(s + s.T))))
            dl_dq = np.asarray(ad.grad(lambda qq: net.lagrangian(qq, qd), q))
            worst_pair = max(
                worst_pair, float(np.max(np.abs(c @ qd + g - (md @ qd - dl_dq))))
            )
        ok = worst_skew <= 1e-10 and worst_pair <= 1e-10
        report(
            "lnn identities", ok, f"(skew {worst_skew:.2e}, pair {worst_pair:.2e} <= 1e-10)"
        )
        assert ok

    def test_autodiff_vs_finite_differences(self):
        rng = np.random.default_rng(4)
        ok = True
        for _ in range(50):
            w = rng.standard_normal(3)

            def f(x):
                return ad.tanh(ad.dot(w, x)) * ad.sin(x[0]) + ad.softplus(x[1]) * x[2]

            x = rng.uniform(-1, 1, 3)
            g = ad.grad(f, x)
            h = ad.hessian(f, x)
            eps = 1e-5
            for i in range(3):
                xp, xm = x.copy(), x.copy()
                xp[i] += eps
                xm[i] -= eps
                fd = (float(ad.val(f(xp))) - float(ad.val(f(xm)))) / (2 * eps)
                ok &= abs(g[i] - fd) <= 1e-5 * max(1.0, abs(fd))
                fg = (np.asarray(ad.grad(f, xp)) - np.asarray(ad.grad(f, xm))) / (2 * eps)
                ok &= bool(np.all(np.abs(h[:, i] - fg) <= 1e-4 * np.maximum(1.0, np.abs(fg))))
        # third order via the directional-Hessian utility
        def f2(a, b):
            return ad.tanh(a[0]) * ad.dot(b, b) + ad.sin(a[1] * b[0])

        a = rng.uniform(-1, 1, 2)
        b = rng.uniform(-1, 1, 2)
        v = rng.standard_normal(2)
        t = ad.hessian_directional(f2, a, b, v)
        eps = 1e-5
        hp = np.asarray(ad.hessian(lambda bb: f2(a + eps * v, bb), b))
        hm = np.asarray(ad.hessian(lambda bb: f2(a - eps * v, bb), b))
        fd = (hp - hm) / (2 * eps)
        ok &= bool(np.all(np.abs(t - fd) <= 1e-3 * np.maximum(1.0, np.abs(fd))))
        report("autodiff vs finite differences", ok, "(grad 1e-5, hessian 1e-4, third 1e-3)")
        assert ok

    def test_bptt_gradient_check(self, two_link):
        from nbstrack.training import bptt_loss

        arm, truth, ref = two_link
        ctrl = fresh_controller(2)
        tcfg = TrainConfig(horizon=0.1, dt=0.01, epochs=1, alpha=None)
        params = ctrl.params()
        _, grads = ad.value_and_multigrad(
            lambda *ps: bptt_loss(ps, ctrl, truth, ref, tcfg), params
        )
        rng = np.random.default_rng(0)
        positions = [(ai, pos) for ai, p in enumerate(params) for pos in range(p.size)]
        ok = True
        h = 1e-5
        for pick in rng.choice(len(positions), size=20, replace=False):
            ai, pos = positions[pick]
            pp = [p.copy() for p in params]
            pm = [p.copy() for p in params]
            pp[ai].flat[pos] += h
            pm[ai].flat[pos] -= h
            fd = (
                float(bptt_loss(pp, ctrl, truth, ref, tcfg))
                - float(bptt_loss(pm, ctrl, truth, ref, tcfg))
            ) / (2 * h)
            ok &= abs(grads[ai].flat[pos] - fd) <= 1e-3 * max(1.0, abs(fd))
        report("bptt gradient check", ok, "(20 random parameters, 1e-3 relative)")
        assert ok

    def test_rk4_energy_drift(self):
        arm = two_link_arm()

        def field(t, y):
            return np.concatenate(
                [y[2:], forward_dynamics(arm, y[:2], y[2:], np.zeros(2))]
            )

        s = OdeState(0.0, np.array([0.3, -0.2, 0.1, 0.2]))
        e0 = float(total_energy(arm, s.y[:2], s.y[2:]))
        drift = 0.0
        for k in range(10_000):
            s = rk4_step(field, s, 1e-3)
            if k % 200 == 199:
                drift = max(
                    drift, abs(float(total_energy(arm, s.y[:2], s.y[2:])) - e0)
                )
        ok = drift <= 1e-6 * max(1.0, abs(e0))
        report("rk4 energy drift", ok, f"(drift {drift:.2e} over 10 s at dt=1e-3)")
        assert ok

    def test_full_determinism(self, two_link):
        arm, truth, ref = two_link
        logs = []
        curves = []
        for _ in range(2):
            ctrl = fresh_controller(3)
            logs.append(rollout(truth, ctrl, ref, SimConfig(dt=0.01, horizon=2.0)))
            tcfg = TrainConfig(horizon=0.1, dt=0.01, epochs=2, alpha=1.0)
            _, curve = train_controller(truth, fresh_controller(3), ref, tcfg, seed=1)
            curves.append(curve)
        ok = (
            np.array_equal(logs[0].q, logs[1].q)
            and np.array_equal(logs[0].u, logs[1].u)
            and curves[0] == curves[1]
        )
        report("determinism", ok, "(bit-identical rollouts and loss curves)")
        assert ok
