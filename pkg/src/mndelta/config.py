"""Config-file handling for the command-line harness.

A config file is a JSON object whose keys mirror the long CLI option names
(dashes or underscores both accepted).  A run manifest, which wraps the
resolved config under a "command"/"config" pair, is accepted wherever a
config file is, so any finished run can be replayed from its manifest.
Precedence: built-in defaults, then the config file, then explicit flags.
"""

from __future__ import annotations

import difflib
import json

from .exceptions import ConfigError


def _as_int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}")
    return v


def _as_float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}")
    return float(v)


def _as_str(v):
    if not isinstance(v, str):
        raise ConfigError(f"expected a string, got {v!r}")
    return v


def _as_bool(v):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true/false, got {v!r}")
    return v


def _split_if_str(v):
    if isinstance(v, str):
        return [part.strip() for part in v.split(",") if part.strip()]
    if isinstance(v, (list, tuple)):
        return list(v)
    raise ConfigError(f"expected a list or comma-separated string, got {v!r}")


def _as_floats(v):
    return tuple(float(x) for x in _split_if_str(v))


def _as_ints(v):
    return tuple(int(x) for x in _split_if_str(v))


def _as_strs(v):
    return tuple(str(x) for x in _split_if_str(v))


SCHEMAS: dict[str, dict] = {
    "synth-demo": {
        "m": _as_int,
        "density": _as_float,
        "remove": _as_int,
        "n": _as_int,
        "alphas": _as_floats,
        "seed": _as_int,
    },
    "roc-bench": {
        "methods": _as_strs,
        "dims": _as_ints,
        "trials": _as_int,
        "n": _as_int,
        "seed": _as_int,
        "epsilon": _as_float,
        "lambda_grid": _as_int,
        "lambda_span": _as_float,
        "tau_grid": _as_int,
        "jobs": _as_int,
    },
    "image-diff": {
        "image_p": _as_str,
        "image_q": _as_str,
        "window": _as_int,
        "stride": _as_int,
        "bandwidth": _as_float,
        "target": _as_int,
        "max_halvings": _as_int,
        "png": _as_bool,
    },
    "diagnose": {
        "m": _as_int,
        "density": _as_float,
        "remove": _as_int,
        "nq": _as_int,
        "seed": _as_int,
    },
    "solve": {
        "data_p": _as_str,
        "data_q": _as_str,
        "lam": _as_float,
        "grid_size": _as_int,
        "span": _as_float,
        "tolerance": _as_float,
        "max_iter": _as_int,
    },
}

DEFAULTS: dict[str, dict] = {
    "synth-demo": {
        "m": 50,
        "density": 0.1,
        "remove": 6,
        "n": 500,
        "alphas": (0.75, 1.0, 1.25, 1.5),
        "seed": 7,
    },
    "roc-bench": {
        "methods": ("kliep", "cp"),
        "dims": (9, 16, 25, 36, 49, 64, 81, 100),
        "trials": 50,
        "n": 50,
        "seed": 1,
        "epsilon": 0.2,
        "lambda_grid": 40,
        "lambda_span": 100.0,
        "tau_grid": 40,
        "jobs": None,
    },
    "image-diff": {
        "image_p": None,
        "image_q": None,
        "window": 16,
        "stride": 5,
        "bandwidth": 0.5,
        "target": 40,
        "max_halvings": 15,
        "png": False,
    },
    "diagnose": {
        "m": 50,
        "density": 0.1,
        "remove": 6,
        "nq": 5000,
        "seed": 7,
    },
    "solve": {
        "data_p": None,
        "data_q": None,
        "lam": None,
        "grid_size": 40,
        "span": 100.0,
        "tolerance": 1e-8,
        "max_iter": 2000,
    },
}


def load_config_file(path, command: str) -> dict:
    """Read a JSON config (or run manifest) for the given command."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if "command" in data and "config" in data:
        if data["command"] != command:
            raise ConfigError(
                f"manifest {path} was written by {data['command']!r}, not {command!r}"
            )
        data = data["config"]
        if not isinstance(data, dict):
            raise ConfigError(f"manifest {path} has a malformed config block")
    return data


def resolve(command: str, file_config: dict | None, overrides: dict | None) -> dict:
    """Merge defaults, a config file, and explicit CLI values for a command.

    Unknown keys are rejected with a closest-match suggestion; values are
    validated by the per-key schema.
    """
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    out = dict(DEFAULTS[command])
    for source in (file_config or {}), (overrides or {}):
        for raw_key, value in source.items():
            key = str(raw_key).replace("-", "_")
            if key not in schema:
                close = difflib.get_close_matches(key, schema.keys(), n=1)
                hint = f"; did you mean {close[0]!r}?" if close else ""
                raise ConfigError(f"unknown option {raw_key!r} for {command}{hint}")
            if value is None:
                continue
            try:
                out[key] = schema[key](value)
            except ConfigError as exc:
                raise ConfigError(f"bad value for {raw_key!r}: {exc}") from exc
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {raw_key!r}: {exc}") from exc
    return out
