"""Render tracking figures from rollout and sweep CSV files.

Three figure kinds:
  trajectory -- joint angles vs the reference over time,
  error      -- per-joint tracking errors and the squared error norm,
  sweep      -- measured steady-state error per alpha with the
                d/(2 alpha^2) theoretical bound overlaid.

Inputs are the CSV schemas produced by the simulation CLI (rollout:
t,q_*,qd_*,z1_*,u_*,z1sq,V; sweep: alpha,steady,bound).  Rendering is
read-only and deterministic; outputs overwrite.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("trajectory", "error", "sweep")


class FigureDataError(ValueError):
    """Input CSV missing, empty, or with unexpected columns."""


@dataclass(frozen=True)
class FigureSpec:
    csv_path: str
    kind: str
    out_path: str

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise FigureDataError(f"unknown figure kind {self.kind!r}")


def _read_csv(path) -> tuple[list, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FigureDataError(f"input CSV {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FigureDataError(f"{path}: empty CSV") from None
        rows = [[float(x) if x else np.nan for x in row] for row in reader]
    if not rows:
        raise FigureDataError(f"{path}: no data rows")
    return header, np.asarray(rows)


def _rollout_columns(header: list, path) -> int:
    """Validate the rollout schema and return the joint count."""
    n = (len(header) - 3) // 4
    expected = (
        ["t"]
        + [f"q_{i}" for i in range(n)]
        + [f"qd_{i}" for i in range(n)]
        + [f"z1_{i}" for i in range(n)]
        + [f"u_{i}" for i in range(n)]
        + ["z1sq", "V"]
    )
    if n < 1 or header != expected:
        raise FigureDataError(
            f"{path}: expected rollout columns t,q_*,qd_*,z1_*,u_*,z1sq,V; got {header}"
        )
    return n


def _render_trajectory(header, data, path, out):
    n = _rollout_columns(header, path)
    t = data[:, 0]
    fig, axes = plt.subplots(n, 1, sharex=True, figsize=(7, 2.2 * n), squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        ax.plot(t, data[:, 1 + i], label=f"q_{i}", color=f"C{i}")
        ax.plot(t, data[:, 1 + n + i], "--", label=f"reference q_{i}", color="k", lw=1)
        ax.set_ylabel(f"joint {i} [rad]")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("time [s]")
    fig.suptitle("Joint angles vs reference")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def _render_error(header, data, path, out):
    n = _rollout_columns(header, path)
    t = data[:, 0]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for i in range(n):
        ax1.plot(t, data[:, 1 + 2 * n + i], label=f"z1_{i}")
    ax1.set_ylabel("tracking error [rad]")
    ax1.legend(fontsize=8)
    z1sq = data[:, 1 + 4 * n]
    positive = z1sq > 0
    ax2.semilogy(t[positive], z1sq[positive], label="|z1|^2")
    ax2.set_xlabel("time [s]")
    ax2.set_ylabel("|z1|^2")
    ax2.legend(fontsize=8)
    fig.suptitle("Tracking errors")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def _render_sweep(header, data, path, out):
    if header != ["alpha", "steady", "bound"]:
        raise FigureDataError(f"{path}: expected sweep columns alpha,steady,bound; got {header}")
    alpha = data[:, 0]
    order = np.argsort(alpha)
    alpha = alpha[order]
    steady = data[order, 1]
    bound = data[order, 2]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.semilogy(alpha, steady, "o", label="measured steady-state error")
    ax.semilogy(alpha, bound, "-", label="bound d/(2 alpha^2)")
    ax.set_xlabel("alpha")
    ax.set_ylabel("max |z1|^2 over the last 30 s")
    ax.set_title("Steady-state tracking error vs curvature parameter")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the written path."""
    header, data = _read_csv(spec.csv_path)
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if spec.kind == "trajectory":
        _render_trajectory(header, data, spec.csv_path, out)
    elif spec.kind == "error":
        _render_error(header, data, spec.csv_path, out)
    else:
        _render_sweep(header, data, spec.csv_path, out)
    return out


def _main(kind: str, argv=None) -> int:
    parser = argparse.ArgumentParser(description=f"Render the {kind} figure")
    parser.add_argument("--in", dest="csv_path", required=True, help="input CSV")
    parser.add_argument("--out", dest="out_path", required=True, help="output PNG")
    args = parser.parse_args(argv)
    try:
        out = render(FigureSpec(csv_path=args.csv_path, kind=kind, out_path=args.out_path))
    except FigureDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


def main_trajectory(argv=None) -> int:
    return _main("trajectory", argv)


def main_error(argv=None) -> int:
    return _main("error", argv)


def main_sweep(argv=None) -> int:
    return _main("sweep", argv)


if __name__ == "__main__":
    sys.exit(_main(sys.argv[1] if len(sys.argv) > 1 else "trajectory", sys.argv[2:]))
