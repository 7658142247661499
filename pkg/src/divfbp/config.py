"""Run configuration: JSON schema, defaults, overrides, hashing and artifact writers."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .params import format_float

OUTPUT_DIR_ENV = "DIVFBP_OUTPUT_DIR"
# keys holding wall-clock measurements; excluded from the artifact manifest
VOLATILE_KEYS = frozenset({"runtime", "wall_time"})


class ConfigError(ValueError):
    pass


_PARAMS = {
    "type": "object",
    "properties": {k: {"type": "number"} for k in ("mu0", "mu1", "sigma", "rho")},
    "required": ["mu0", "mu1", "sigma", "rho"],
    "additionalProperties": False,
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_OPT_NUM = {"type": ["number", "null"]}
_POINTS = {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}

SCHEMA = _obj({
    "params": _PARAMS,
    "grid": _obj({
        "nx": {"type": "integer", "minimum": 3}, "ny": {"type": "integer", "minimum": 3},
        "x_margin": _POS, "y_margin": _POS,
        "x_max": _OPT_NUM, "y_min": _OPT_NUM, "y_max": _OPT_NUM,
    }),
    "solver": _obj({
        "omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "tol": _POS, "max_iter": _INT, "check_every": _INT, "warm_start": {"type": "boolean"},
    }),
    "full_info": _obj({"psor_h": _POS, "curve_points": {"type": "integer", "minimum": 2}}),
    "assemble": _obj({
        "n_pi": {"type": "integer", "minimum": 3},
        "pi_margin": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
    }),
    "mc": _obj({
        "n_paths": _INT, "dt": _POS, "horizon": _POS,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "antithetic": {"type": "boolean"}, "bridge_correction": {"type": "boolean"},
    }),
    "simulate": _obj({
        "x0": {"type": "number", "minimum": 0}, "phi0": _POS,
        "pi0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "checkpoints": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "tail_beta": _POS, "tail_dt": _POS,
    }),
    "dividend_mc": _obj({"n_paths": _INT, "dt": _POS, "horizon": _POS}),
    "full_info_mc": _obj({
        "n_paths": _INT, "dt": _POS, "horizon": _POS, "level": _POS,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
    }),
    "verify": _obj({
        "cases": {"type": "object", "additionalProperties": _PARAMS, "minProperties": 1},
        "stopping_points": _POINTS,
        "stopping_paths": _INT,
        "dividend_points": _POINTS,
        "tail_paths": _INT,
        "tail_tol": _POS,
        "a_star_rel_tol": _POS,
        "creation_window": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "creation_ratio": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
        "closed_form_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "probe_grid": {"type": "integer", "minimum": 11},
        "probe_paths": _INT,
    }),
    "output_dir": {"type": "string", "minLength": 1},
})

DEFAULTS: dict = {
    "params": {"mu0": -1.0, "mu1": 1.0, "sigma": 1.0, "rho": 0.5},
    "grid": {"nx": 400, "ny": 400, "x_margin": 4.0, "y_margin": 10.0,
             "x_max": None, "y_min": None, "y_max": None},
    "solver": {"omega": 1.5, "tol": 1e-8, "max_iter": 200_000, "check_every": 10, "warm_start": True},
    "full_info": {"psor_h": 1e-4, "curve_points": 2001},
    "assemble": {"n_pi": 199, "pi_margin": 0.005},
    "mc": {"n_paths": 100_000, "dt": 2e-3, "horizon": 40.0, "seed": 20240601,
           "antithetic": False, "bridge_correction": True},
    "simulate": {"x0": 0.3, "phi0": 4.0, "pi0": 0.5, "checkpoints": [0.0, 0.5, 1.0, 2.0],
                 "tail_beta": 1.0, "tail_dt": 0.02},
    "dividend_mc": {"n_paths": 20_000, "dt": 4e-3, "horizon": 20.0},
    "full_info_mc": {"n_paths": 100_000, "dt": 2e-3, "horizon": 40.0, "level": 0.3, "seed": 7},
    "verify": {
        "cases": {
            "zero_drift_sum": {"mu0": -1.0, "mu1": 1.0, "sigma": 1.0, "rho": 0.5},
            "positive_drift_sum": {"mu0": -0.5, "mu1": 1.0, "sigma": 1.0, "rho": 0.5},
            "negative_drift_sum": {"mu0": -1.0, "mu1": 0.5, "sigma": 1.0, "rho": 0.5},
        },
        # (s, f): pi = lambda(0) + s (0.95 - lambda(0)), x = f d(pi)
        "stopping_points": [[s, f] for s in (0.35, 0.5125, 0.675, 0.8375, 1.0) for f in (0.2, 0.6)],
        "stopping_paths": 100_000,
        # (pi, x), pi snapped to the nearest assembled column
        "dividend_points": [[0.3, 0.5], [0.5, 0.3], [0.5, 1.0], [0.7, 0.8], [0.9, 2.0]],
        "tail_paths": 100_000,
        "tail_tol": 0.01,
        "a_star_rel_tol": 1e-3,
        # in units of sigma/theta above y_ell
        "creation_window": [1.0, 8.0],
        "creation_ratio": [1.5, 2.5],
        "closed_form_fraction": 0.99,
        "probe_grid": 41,
        "probe_paths": 2000,
    },
    "output_dir": "runs",
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "cases":
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``block.key=value`` with value parsed as JSON, falling back to a bare string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    path = [k for k in key.strip().split(".") if k]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    return path, value


def _apply_override(data: dict, path: list[str], value) -> None:
    node = data
    for k in path[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"override path {'.'.join(path)!r} does not name a config block")
        node = node[k]
    node[path[-1]] = value


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def output_dir(self) -> Path:
        env = os.environ.get(OUTPUT_DIR_ENV)
        return Path(env) if env else Path(self.data["output_dir"])

    def hashable(self) -> dict:
        # where the files go must not change their contents
        return {k: v for k, v in self.data.items() if k != "output_dir"}

    @property
    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.hashable()).encode()).hexdigest()


def build_config(raw: dict | None = None, overrides=()) -> RunConfig:
    data = _merge(DEFAULTS, raw or {})
    for item in overrides:
        path, value = parse_override(item) if isinstance(item, str) else item
        _apply_override(data, list(path), value)
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    return RunConfig(data)


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return build_config(raw, overrides)


# --------------------------------------------------------------------------- serialisation

def to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def canonical_json(value) -> str:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(",", ":"))


def strip_volatile(value):
    if isinstance(value, dict):
        return {k: strip_volatile(v) for k, v in value.items() if k not in VOLATILE_KEYS}
    if isinstance(value, list):
        return [strip_volatile(v) for v in value]
    return value


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format_float(v)


def csv_text(columns: dict, config_hash: str) -> str:
    names = list(columns)
    cols = [np.ravel(np.asarray(columns[n])) for n in names]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ValueError("CSV columns differ in length")
    lines = [f"# config_sha256: {config_hash}", ",".join(names)]
    for i in range(n):
        lines.append(",".join(_cell(c[i].item() if hasattr(c[i], "item") else c[i]) for c in cols))
    return "\n".join(lines) + "\n"


def json_text(payload: dict, config_hash: str) -> str:
    body = {"config_sha256": config_hash, **to_jsonable(payload)}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


class ArtifactWriter:
    """Stages files in a sibling temp directory and swaps it into place on commit."""

    def __init__(self, target: Path, config_hash: str):
        self.target = Path(target)
        self.config_hash = config_hash
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self._stage = Path(tempfile.mkdtemp(prefix=f".{self.target.name}-", dir=self.target.parent))
        # mkdtemp is owner-only; give the final directory the usual umask permissions
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(self._stage, 0o777 & ~mask)
        self.files: dict[str, str] = {}

    def csv(self, name: str, columns: dict) -> None:
        self._write(name, csv_text(columns, self.config_hash))

    def json(self, name: str, payload: dict) -> None:
        self._write(name, json_text(payload, self.config_hash))

    def _write(self, name: str, text: str) -> None:
        (self._stage / name).write_text(text)
        self.files[name] = text

    def manifest(self) -> dict:
        out = {}
        for name, text in sorted(self.files.items()):
            if name.endswith(".json"):
                text = canonical_json(strip_volatile(json.loads(text)))
            out[name] = hashlib.sha256(text.encode()).hexdigest()
        return out

    def commit(self) -> Path:
        old = None
        if self.target.exists():
            old = self.target.with_name(f".{self.target.name}-old-{os.getpid()}")
            os.replace(self.target, old)
        os.replace(self._stage, self.target)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)
        return self.target

    def abort(self) -> None:
        shutil.rmtree(self._stage, ignore_errors=True)
