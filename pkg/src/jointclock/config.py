"""Experiment specifications and TOML configuration files.

A configuration file holds run settings at the top level and parameter
overrides in a ``[params]`` table::

    seed = 7
    reps = 20000
    workers = 1

    [params]
    protocol = "joint"
    N = 1000

Precedence is command-line flag, then file value, then the experiment's
default.  Unknown keys are errors.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_SEED = 20200101
DEFAULT_REPS = 20_000
FAST_REPS = 1_000

RUN_KEYS = {"experiment", "seed", "reps", "out", "workers", "fast"}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class ExperimentSpec:
    """A fully resolved experiment request."""

    name: str
    params: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    reps: int = DEFAULT_REPS
    out: str | None = None
    workers: int = 1
    fast: bool = False

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if int(self.reps) < 1:
            raise ConfigError("reps must be >= 1")


def _coerce(key, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if kind is list:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            value = [value]
        return [_number_or_str(v) for v in value]
    if kind in (int, float):
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        try:
            out = kind(float(value)) if kind is int else float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        if kind is int and float(value) != out:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return out
    if kind is str:
        return str(value)
    return value


def _number_or_str(v):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return v
    s = str(v).strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def coerce_params(overrides, declared):
    """Type-check ``overrides`` against ``declared`` ``{name: (default, type)}``."""
    unknown = sorted(set(overrides) - set(declared))
    if unknown:
        raise ConfigError(f"unknown parameter(s): {', '.join(unknown)}")
    return {k: _coerce(k, v, declared[k][1]) for k, v in overrides.items()}


def load_config(path):
    """Read a TOML file into ``(run_settings, params)``.

    Raises
    ------
    ConfigError
        On syntax errors (the message carries the line number) or unknown
        top-level keys.
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    params = data.pop("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{path}: 'params' must be a table")
    unknown = sorted(set(data) - RUN_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(unknown)}")
    return data, params


def parse_config(path=None, name=None, flags=None, param_flags=None, declared=None):
    """Merge defaults, a configuration file and command-line values.

    Parameters
    ----------
    path : str, optional
        TOML file.  ``None`` uses defaults only.
    name : str, optional
        Experiment name; required unless the file provides ``experiment``.
    flags : dict, optional
        Run settings from the command line (``None`` values are ignored).
    param_flags : dict, optional
        Parameter overrides from the command line.
    declared : dict, optional
        ``{param: (default, type)}`` used for strict checking.

    Returns
    -------
    ExperimentSpec
    """
    run, params = load_config(path) if path else ({}, {})
    for k, v in (flags or {}).items():
        if v is not None:
            run[k] = v
    params.update({k: v for k, v in (param_flags or {}).items() if v is not None})
    name = name or run.get("experiment")
    if not name:
        raise ConfigError("no experiment named")
    if run.get("experiment") not in (None, name):
        raise ConfigError(f"config is for experiment {run['experiment']!r}, not {name!r}")
    if declared is not None:
        params = coerce_params(params, declared)
    fast = _coerce("fast", run.get("fast", False), bool)
    reps = _coerce("reps", run.get("reps", FAST_REPS if fast else DEFAULT_REPS), int)
    return ExperimentSpec(
        name=name,
        params=params,
        seed=_coerce("seed", run.get("seed", DEFAULT_SEED), int),
        reps=reps,
        out=run.get("out"),
        workers=_coerce("workers", run.get("workers", 1), int),
        fast=fast,
    )
