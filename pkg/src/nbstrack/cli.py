"""Command-line entry point: wires configs to plants, controllers, and
experiments, and emits CSV/JSON artifacts.

Exit codes: 0 success, 2 config/validation error, 3 non-finite numerics.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .blocks import DampingD, PotentialPhi, make_damping, make_potential
from .config import RunConfig, load_config
from .controller import NbsController, PidBaseline, make_pid, sincos_reference
from .errors import NbsError, NonFinite, SchemaError
from .harness import PlantTruth, SimConfig, metrics, rollout
from .lnn import (
    LagrangianNet,
    LnnDataset,
    LnnModel,
    acceleration_mse,
    generate_free_motion,
    make_lnn,
    train_lnn,
)
from .nets import load_nets, save_nets
from .plants import ArmModel, DisturbanceModel, PlanarArm
from .training import (
    SweepSpec,
    TrainConfig,
    alpha_sweep,
    default_alpha_grid,
    save_sweep_csv,
    train_controller,
)


def _arm_from_config(cfg: RunConfig) -> PlanarArm:
    sec = cfg.section("arm")
    return PlanarArm(masses=sec["masses"], lengths=sec["lengths"], gravity=sec["gravity"])


def save_controller(path, ctrl: NbsController) -> None:
    save_nets(
        path,
        {
            "psi": ctrl.phi.psi,
            "s_matrix": ctrl.phi.s_matrix,
            "diag_net": ctrl.damping.diag_net,
            "offdiag_net": ctrl.damping.offdiag_net,
            "m": ctrl.damping.m,
            "ridge": ctrl.damping.ridge,
        },
    )


def load_controller(path, model) -> NbsController:
    loaded = load_nets(path)
    phi = PotentialPhi(psi=loaded["psi"], s_matrix=loaded["s_matrix"])
    damping = DampingD(
        diag_net=loaded["diag_net"],
        offdiag_net=loaded["offdiag_net"],
        m=loaded["m"],
        ridge=loaded["ridge"],
    )
    return NbsController(phi=phi, damping=damping, model=model)


def save_lnn(path, net: LagrangianNet) -> None:
    save_nets(path, {"kinetic": net.kinetic, "potential": net.potential, "eps_m": net.eps_m})


def load_lnn(path) -> LagrangianNet:
    loaded = load_nets(path)
    return LagrangianNet(
        kinetic=loaded["kinetic"], potential=loaded["potential"], eps_m=loaded["eps_m"]
    )


def _controller_from_config(cfg: RunConfig, arm: PlanarArm):
    sec = cfg.section("controller")
    n = arm.n
    if sec["kind"] == "pid":
        return make_pid(n, kp=sec["pid_kp"], ki=sec["pid_ki"], kd=sec["pid_kd"])
    if sec["kind"] != "nbs":
        raise SchemaError(f"[controller] kind must be nbs or pid, got {sec['kind']!r}")
    if sec["model"] == "exact":
        model = ArmModel(arm)
    elif sec["model"] == "lnn":
        if not sec["lnn_file"]:
            raise SchemaError("[controller] model = 'lnn' needs lnn_file")
        model = LnnModel(load_lnn(sec["lnn_file"]))
    else:
        raise SchemaError(f"[controller] model must be exact or lnn, got {sec['model']!r}")
    if sec["params_file"]:
        ctrl = load_controller(sec["params_file"], model)
        ctrl.damping.ridge = sec["ridge"] if sec["ridge"] > 0 else ctrl.damping.ridge
        return ctrl
    rng = np.random.default_rng(cfg.seed)
    phi = make_potential(
        n,
        rng,
        widths=tuple(sec["psi_widths"]),
        s_matrix=sec["s_diag"] * np.eye(n),
        srelu_d=sec["srelu_d"],
    )
    damping = make_damping(
        n, rng, widths=tuple(sec["d_widths"]), m=sec["m"], ridge=sec["ridge"]
    )
    return NbsController(phi=phi, damping=damping, model=model)


def _sim_config(cfg: RunConfig) -> SimConfig:
    sec = cfg.section("sim")
    dist = DisturbanceModel(
        tau=np.asarray(sec["disturbance"], dtype=float) if sec["disturbance"] else None
    )
    return SimConfig(
        dt=sec["dt"],
        horizon=sec["horizon"],
        disturbance=dist,
        q0=np.asarray(sec["q0"], dtype=float) if sec["q0"] else None,
        qd0=np.asarray(sec["qd0"], dtype=float) if sec["qd0"] else None,
        seed=cfg.seed,
        control_mode=sec["control_mode"],
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    sec = cfg.section("train")
    return TrainConfig(
        horizon=sec["horizon"],
        dt=sec["dt"],
        epochs=sec["epochs"],
        lr0=sec["lr0"],
        lr_decay=sec["lr_decay"],
        alpha=None if sec["alpha"] < 0 else sec["alpha"],
        stage_cost=sec["stage_cost"],
        control_mode=sec["control_mode"],
    )


def cmd_simulate(cfg: RunConfig) -> int:
    arm = _arm_from_config(cfg)
    ctrl = _controller_from_config(cfg, arm)
    ref = sincos_reference(arm.n)
    log = rollout(PlantTruth(arm), ctrl, ref, _sim_config(cfg))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    log.to_csv(out / "rollout.csv")
    metrics(log).to_json(out / "metrics.json")
    print(f"wrote {out / 'rollout.csv'} and {out / 'metrics.json'}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    arm = _arm_from_config(cfg)
    ctrl = _controller_from_config(cfg, arm)
    if not isinstance(ctrl, NbsController):
        raise SchemaError("training requires [controller] kind = 'nbs'")
    ref = sincos_reference(arm.n)
    truth = PlantTruth(arm)
    trained, curve = train_controller(truth, ctrl, ref, _train_config(cfg), seed=cfg.seed)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_controller(out / "controller.json", trained)
    with open(out / "train_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for e, l in enumerate(curve):
            writer.writerow([e, f"{l:.17g}"])
    print(f"wrote {out / 'controller.json'} (final loss {curve[-1]:.6g})")
    return 0


def cmd_sweep_alpha(cfg: RunConfig, jobs: int) -> int:
    arm = _arm_from_config(cfg)
    sweep_sec = cfg.section("sweep")
    ctrl_sec = cfg.section("controller")
    sim_sec = cfg.section("sim")
    if not sim_sec["disturbance"]:
        raise SchemaError("[sim] disturbance must be set for the alpha sweep")
    spec = SweepSpec(
        arm=arm,
        tau_d=np.asarray(sim_sec["disturbance"], dtype=float),
        tcfg=_train_config(cfg),
        eval_horizon=sim_sec["horizon"],
        eval_dt=sim_sec["dt"],
        ridge=ctrl_sec["ridge"],
        damping_m=ctrl_sec["m"],
        s_matrix=ctrl_sec["s_diag"] * np.eye(arm.n),
        psi_widths=tuple(ctrl_sec["psi_widths"]),
        d_widths=tuple(ctrl_sec["d_widths"]),
        base_seed=cfg.seed,
    )
    grid = default_alpha_grid(
        sweep_sec["count"], sweep_sec["alpha_low"], sweep_sec["alpha_high"]
    )
    rows = alpha_sweep(spec, grid, jobs=jobs)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_sweep_csv(out / "sweep.csv", rows)
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_gen_data(cfg: RunConfig) -> int:
    arm = _arm_from_config(cfg)
    sec = cfg.section("data")
    sim_sec = cfg.section("sim")
    q0 = np.asarray(sim_sec["q0"], dtype=float) if sim_sec["q0"] else None
    qd0 = np.asarray(sim_sec["qd0"], dtype=float) if sim_sec["qd0"] else None
    total = sec["samples"] + sec["holdout"]
    data = generate_free_motion(arm, total, dt=sec["dt"], q0=q0, qd0=qd0)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    train = data.subset(slice(0, sec["samples"]))
    hold = data.subset(slice(sec["samples"], total))
    train.save_csv(out / sec["file"])
    hold.save_csv(out / f"holdout_{sec['file']}")
    print(f"wrote {out / sec['file']} ({len(train)} rows) and holdout ({len(hold)} rows)")
    return 0


def cmd_train_lnn(cfg: RunConfig) -> int:
    arm = _arm_from_config(cfg)
    data_sec = cfg.section("data")
    lnn_sec = cfg.section("lnn")
    out = cfg.out_dir
    train_path = out / data_sec["file"]
    hold_path = out / f"holdout_{data_sec['file']}"
    for p in (train_path, hold_path):
        if not p.exists():
            raise SchemaError(f"missing dataset artifact {p}; run gen_data first")
    data = LnnDataset.load_csv(train_path)
    holdout = LnnDataset.load_csv(hold_path)
    rng = np.random.default_rng(cfg.seed)
    net = make_lnn(arm.n, rng, widths=tuple(lnn_sec["widths"]), eps_m=lnn_sec["eps_m"])
    mse0 = acceleration_mse(net, holdout)
    trained, curve = train_lnn(
        data,
        net,
        epochs=lnn_sec["epochs"],
        batch=lnn_sec["batch"],
        lr0=lnn_sec["lr0"],
        lr_decay=lnn_sec["lr_decay"],
        seed=cfg.seed,
    )
    mse1 = acceleration_mse(trained, holdout)
    out.mkdir(parents=True, exist_ok=True)
    save_lnn(out / lnn_sec["model_file"], trained)
    with open(out / "lnn_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for e, l in enumerate(curve):
            writer.writerow([e, f"{l:.17g}"])
    report = {
        "holdout_mse_initial": mse0,
        "holdout_mse_final": mse1,
        "improvement_factor": mse0 / mse1 if mse1 > 0 else float("inf"),
    }
    (out / "lnn_metrics.json").write_text(json.dumps(report, indent=2) + "\n")
    print(
        f"wrote {out / lnn_sec['model_file']}: holdout MSE {mse0:.4g} -> {mse1:.4g} "
        f"({report['improvement_factor']:.1f}x)"
    )
    return 0


def cmd_eval_lnn(cfg: RunConfig) -> int:
    ctrl_sec = cfg.section("controller")
    if ctrl_sec["model"] != "lnn":
        raise SchemaError("eval_lnn needs [controller] model = 'lnn'")
    lnn_path = Path(ctrl_sec["lnn_file"])
    if not lnn_path.exists():
        raise SchemaError(f"missing LNN model artifact {lnn_path}; run train_lnn first")
    return cmd_simulate(cfg)


def cmd_report(directory: str) -> int:
    root = Path(directory)
    if not root.exists():
        raise SchemaError(f"report directory {root} does not exist")
    found = sorted(root.rglob("metrics.json"))
    if not found:
        raise SchemaError(f"no metrics.json artifacts under {root}")
    summary = root / "summary.csv"
    with open(summary, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "steady_state_error", "convergence_time", "converged"])
        for p in found:
            data = json.loads(p.read_text())
            label = p.parent.name
            writer.writerow(
                [
                    label,
                    f"{data['steady_state_error']:.17g}",
                    "" if data["convergence_time"] is None else f"{data['convergence_time']:.17g}",
                    data["converged"],
                ]
            )
    print(f"wrote {summary} ({len(found)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbstrack",
        description="Structured neural backstepping tracking control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "train", "sweep-alpha", "gen-data", "train-lnn", "eval-lnn"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "sweep-alpha":
            p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    report = sub.add_parser("report")
    report.add_argument("directory", help="directory tree holding metrics.json files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.directory)
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.raw["run"]["out_dir"] = args.out
        if args.seed is not None:
            cfg.raw["run"]["seed"] = args.seed
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep-alpha":
            return cmd_sweep_alpha(cfg, jobs=args.jobs)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train-lnn":
            return cmd_train_lnn(cfg)
        if args.command == "eval-lnn":
            return cmd_eval_lnn(cfg)
        raise SchemaError(f"unknown command {args.command!r}")
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NonFinite as exc:
        print(f"error: non-finite numerics: {exc}", file=sys.stderr)
        return 3
    except NbsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
