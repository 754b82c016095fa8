"""Run configuration: versioned TOML schema, strictly validated.

Unknown keys are rejected and every run must carry an explicit seed; all the
reproduction hyperparameters (step sizes, horizons, layer widths, learning
rates) appear as named keys with defaults matching the shipped experiment
configs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

CONFIG_VERSION = 1

EXPERIMENT_KINDS = (
    "simulate",
    "train",
    "sweep_alpha",
    "gen_data",
    "train_lnn",
    "eval_lnn",
)

# section -> key -> (type, required, default)
_SCHEMA = {
    "run": {
        "version": (int, True, None),
        "kind": (str, True, None),
        "seed": (int, True, None),
        "out_dir": (str, False, "out"),
    },
    "arm": {
        "masses": (list, False, [1.0, 1.0]),
        "lengths": (list, False, [1.0, 1.0]),
        "gravity": (float, False, 9.8),
    },
    "controller": {
        "kind": (str, False, "nbs"),  # nbs | pid
        "s_diag": (float, False, 1.0),
        "m": (float, False, 0.001),
        "ridge": (float, False, 0.0),
        "psi_widths": (list, False, [32, 32, 32]),
        "d_widths": (list, False, [32, 32]),
        "srelu_d": (float, False, 0.5),
        "pid_kp": (float, False, 50.0),
        "pid_ki": (float, False, 10.0),
        "pid_kd": (float, False, 20.0),
        "params_file": (str, False, ""),
        "model": (str, False, "exact"),  # exact | lnn
        "lnn_file": (str, False, ""),
    },
    "sim": {
        "dt": (float, False, 0.01),
        "horizon": (float, False, 100.0),
        "disturbance": (list, False, []),
        "q0": (list, False, []),
        "qd0": (list, False, []),
        "control_mode": (str, False, "stage"),
    },
    "train": {
        "horizon": (float, False, 1.0),
        "dt": (float, False, 0.01),
        "epochs": (int, False, 200),
        "lr0": (float, False, 1e-3),
        "lr_decay": (float, False, 0.99),
        "alpha": (float, False, -1.0),  # < 0 disables the regularizer
        "stage_cost": (str, False, "z1sq"),
        "control_mode": (str, False, "stage"),
    },
    "sweep": {
        "count": (int, False, 40),
        "alpha_low": (float, False, 0.2),
        "alpha_high": (float, False, 2.0),
    },
    "data": {
        "samples": (int, False, 10_000),
        "dt": (float, False, 1e-3),
        "holdout": (int, False, 1000),
        "file": (str, False, "dataset.csv"),
    },
    "lnn": {
        "widths": (list, False, [32, 32, 32]),
        "eps_m": (float, False, 1e-3),
        "epochs": (int, False, 200),
        "batch": (int, False, 10),
        "lr0": (float, False, 1e-3),
        "lr_decay": (float, False, 0.99),
        "model_file": (str, False, "lnn.json"),
    },
}


@dataclass
class RunConfig:
    raw: dict
    path: str = ""

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    @property
    def kind(self) -> str:
        return self.raw["run"]["kind"]

    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["run"]["out_dir"])


def _coerce(value, typ, where):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, typ) or isinstance(value, bool) and typ is int:
        raise SchemaError(f"{where}: expected {typ.__name__}, got {value!r}")
    return value


def validate_config(data: dict, path: str = "") -> RunConfig:
    where = path or "config"
    unknown_sections = set(data) - set(_SCHEMA)
    if unknown_sections:
        raise SchemaError(f"{where}: unknown sections {sorted(unknown_sections)}")
    if "run" not in data:
        raise SchemaError(f"{where}: missing [run] section")
    out = {}
    for section, keys in _SCHEMA.items():
        given = data.get(section, {})
        unknown = set(given) - set(keys)
        if unknown:
            raise SchemaError(f"{where}: [{section}] unknown keys {sorted(unknown)}")
        result = {}
        for key, (typ, required, default) in keys.items():
            if key in given:
                result[key] = _coerce(given[key], typ, f"{where}: [{section}] {key}")
            elif required:
                raise SchemaError(f"{where}: [{section}] missing required key {key!r}")
            else:
                result[key] = default
        out[section] = result
    if out["run"]["version"] != CONFIG_VERSION:
        raise SchemaError(
            f"{where}: config version {out['run']['version']} unsupported (want {CONFIG_VERSION})"
        )
    if out["run"]["kind"] not in EXPERIMENT_KINDS:
        raise SchemaError(
            f"{where}: [run] kind must be one of {EXPERIMENT_KINDS}, got {out['run']['kind']!r}"
        )
    if out["sim"]["dt"] <= 0:
        raise SchemaError(f"{where}: [sim] dt must be positive, got {out['sim']['dt']}")
    if out["train"]["dt"] <= 0:
        raise SchemaError(f"{where}: [train] dt must be positive")
    return RunConfig(raw=out, path=path)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: TOML parse error: {exc}") from exc
    return validate_config(data, str(path))
