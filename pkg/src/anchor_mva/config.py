"""Run configuration: TOML sections, typed defaults and flag overrides.

Every command reads a subset of the sections below. A config file may only
contain known sections and keys; values are validated before any
computation starts.
"""

from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .anchor import parse_gamma
from .benchmark import MODELS
from .data import ROLES
from .estimators import KINDS
from .scm import NOISE_FAMILIES, TOPOLOGIES
from .selection import int_grid, log_grid

SEED_ENV = "ANCHOR_MVA_SEED"


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 2."""


@dataclass(frozen=True)
class Key:
    check: Callable[[str, Any], Any]
    default: Any


# -- value checkers -----------------------------------------------------------


def _int(lo=None):
    def f(name, v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{name} must be an integer, got {v!r}")
        if lo is not None and v < lo:
            raise ConfigError(f"{name} must be >= {lo}, got {v}")
        return v
    return f


def _opt_int(lo=None):
    inner = _int(lo)
    return lambda name, v: None if v is None else inner(name, v)


def _float(lo=None, positive=False):
    def f(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name} must be a number, got {v!r}")
        v = float(v)
        if math.isnan(v) or (lo is not None and v < lo) or (positive and v <= 0):
            raise ConfigError(f"{name} out of range: {v}")
        return v
    return f


def _opt_float(lo=None, positive=False):
    inner = _float(lo, positive)
    return lambda name, v: None if v is None else inner(name, v)


def _bool(name, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{name} must be true or false, got {v!r}")
    return v


def _str(choices=None, optional=False):
    def f(name, v):
        if v is None and optional:
            return None
        if not isinstance(v, str):
            raise ConfigError(f"{name} must be a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(f"{name}={v!r} is not one of: {', '.join(choices)}")
        return v
    return f


def _gamma(name, v):
    try:
        return parse_gamma(v)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _grid(kind: str):
    """A list of values or a ``{low, high, num}`` table (log spacing for
    ``kind="log"``, rounded linear spacing for ``kind="int"``)."""

    def f(name, v):
        if isinstance(v, Mapping):
            extra = set(v) - {"low", "high", "num"}
            if extra or len(v) != 3:
                raise ConfigError(f"{name} grid table needs exactly low, high, num")
            lo, hi = _float()(name, v["low"]), _float()(name, v["high"])
            num = _int(1)(name, v["num"])
            if kind == "int":
                return tuple(int_grid(int(lo), int(hi), num))
            if lo <= 0 or hi < lo:
                raise ConfigError(f"{name}: log grid needs 0 < low <= high")
            return tuple(log_grid(lo, hi, num))
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(f"{name} must be a non-empty list or a grid table")
        if kind == "gamma":
            return tuple(_gamma(name, e) for e in v)
        if kind == "int":
            return tuple(_int(1)(name, e) for e in v)
        return tuple(_float(0.0)(name, e) for e in v)
    return f


def _list_of(choices):
    def f(name, v):
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(f"{name} must be a non-empty list")
        for e in v:
            if e not in choices:
                raise ConfigError(f"{name}: {e!r} is not one of: {', '.join(choices)}")
        return tuple(v)
    return f


def _estimators(name, v):
    """Strings naming a kind, or tables ``{kind, rank, alpha}``."""
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{name} must be a non-empty list")
    out = []
    for e in v:
        entry = {"kind": e} if isinstance(e, str) else dict(e) if isinstance(e, Mapping) else None
        if entry is None or set(entry) - {"kind", "rank", "alpha"} or "kind" not in entry:
            raise ConfigError(f"{name}: bad estimator entry {e!r}")
        if entry["kind"] not in KINDS:
            raise ConfigError(f"{name}: unknown estimator {entry['kind']!r}; valid: {', '.join(KINDS)}")
        out.append(entry)
    return tuple(out)


def _roles(name, v):
    if not isinstance(v, Mapping):
        raise ConfigError(f"{name} must be a table of column = role")
    for col, role in v.items():
        if role not in ROLES:
            raise ConfigError(f"{name}: role {role!r} for {col!r} is not one of: {', '.join(ROLES)}")
    return dict(v)


def _rank(name, v):
    """An integer rank or ``[low, high]`` for a seeded uniform draw."""
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"{name} range must be [low, high]")
        lo, hi = (_int(1)(name, e) for e in v)
        if hi < lo:
            raise ConfigError(f"{name} range is empty")
        return (lo, hi)
    return _int(1)(name, v)


# -- schema -------------------------------------------------------------------

SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "seed": Key(_opt_int(0), None),
        "threads": Key(_int(1), 1),
    },
    "scm": {
        "topology": Key(_str(TOPOLOGIES), "iv"),
        "noise": Key(_str(NOISE_FAMILIES), "gaussian"),
        "d": Key(_int(1), 10),
        "p": Key(_int(1), 10),
        "rank": Key(_rank, 3),
        "coef_low": Key(_float(), 1.0),
        "coef_high": Key(_float(), 2.0),
        "coef_seed": Key(_int(0), 0),
        "t_is_variance": Key(_bool, True),
    },
    "data": {
        "path": Key(_str(optional=True), None),
        "roles": Key(_roles, {}),
        "default_role": Key(_str(ROLES, optional=True), None),
        "delimiter": Key(_str(), ","),
        "decimal": Key(_str(), "."),
        "missing_sentinel": Key(_opt_float(), None),
        "scale": Key(_bool, False),
    },
    "gd": {
        "lr": Key(_float(positive=True), 0.1),
        "max_epochs": Key(_int(1), 50_000),
        "patience": Key(_int(1), 200),
        "tol": Key(_float(positive=True), 1e-4),
        "max_halvings": Key(_int(0), 20),
        "lambda": Key(_float(0.0), 0.0),
        "cvp_bins": Key(_opt_int(2), None),
    },
    "sweep": {
        "estimators": Key(_estimators, ("MLR", "RRR", "OPLS", "PLS", "CCA")),
        "gammas": Key(_grid("gamma"), ("pa", 1.0, 5.0, "iv")),
        "alpha": Key(_float(0.0), 1.0),
        "t_min": Key(_float(0.0), 0.0),
        "t_max": Key(_float(0.0), 4.0),
        "t_steps": Key(_int(1), 20),
        "n": Key(_int(2), 300),
        "n_test": Key(_opt_int(2), None),
        "replicates": Key(_int(1), 20),
        "metrics": Key(_list_of(("mse", "r2", "abscorr")), ("mse",)),
        "out": Key(_str(), "sweep.csv"),
        "summary_out": Key(_str(optional=True), None),
    },
    "benchmark": {
        "models": Key(_list_of(MODELS), MODELS),
        "scheme": Key(_str(("ordered", "unique")), "ordered"),
        "k_train": Key(_int(1), 2),
        "k_val": Key(_int(1), 1),
        "k_test": Key(_int(1), 1),
        "gammas": Key(_grid("gamma"), {"low": 1e-2, "high": 1e4, "num": 20}),
        "alphas": Key(_grid("log"), {"low": 1e-4, "high": 1e4, "num": 20}),
        "lambdas": Key(_grid("log"), {"low": 1e-3, "high": 1.0, "num": 20}),
        "pls_components": Key(_grid("int"), (1, 2, 3)),
        "synthetic_n_per_group": Key(_int(2), 200),
        "out": Key(_str(), "benchmark.csv"),
        "summary_out": Key(_str(optional=True), None),
    },
    "select": {
        "kind": Key(_str(KINDS), "RRRR"),
        "source": Key(_str(("scm", "data")), "scm"),
        "gammas": Key(_grid("gamma"), {"low": 1.0, "high": 1e4, "num": 10}),
        "alphas": Key(_grid("log"), {"low": 1.0, "high": 1e5, "num": 20}),
        "ranks": Key(_grid("int"), {"low": 10, "high": 30, "num": 10}),
        "w_error": Key(_float(0.0), 0.5),
        "w_corr": Key(_float(0.0), 0.5),
        "eta_error": Key(_opt_float(positive=True), None),
        "eta_corr": Key(_opt_float(positive=True), None),
        "splits": Key(_str(("holdout", "kfold", "groups")), "holdout"),
        "k": Key(_int(2), 5),
        "n_train": Key(_int(2), 100),
        "n_val": Key(_int(2), 100),
        "n_test": Key(_int(0), 400),
        "t_test": Key(_float(0.0), 2.0),
        "out": Key(_str(), "selection.csv"),
        "chosen_out": Key(_str(optional=True), None),
        "pareto_out": Key(_str(optional=True), None),
    },
    "fit": {
        "kind": Key(_str(KINDS), "MLR"),
        "rank": Key(_opt_int(1), None),
        "alpha": Key(_float(0.0), 0.0),
        "gamma": Key(_gamma, 1.0),
        "out": Key(_str(), "model.json"),
    },
    "predict": {
        "model": Key(_str(optional=True), None),
        "out": Key(_str(), "predictions.csv"),
    },
}

# high-dimensional selection experiment defaults differ from the sweep's
_SELECT_SCM = {"topology": "direct", "d": 300, "p": 300, "rank": (10, 30), "coef_low": 1.0, "coef_high": 3.0}

COMMAND_SECTIONS = {
    "sweep": ("run", "scm", "sweep"),
    "benchmark-env": ("run", "data", "gd", "benchmark"),
    "select": ("run", "scm", "data", "select"),
    "fit": ("run", "data", "fit"),
    "predict": ("run", "data", "predict"),
    "verify": ("run",),
}


def _defaults(command: str) -> dict[str, dict[str, Any]]:
    out = {}
    for sec in COMMAND_SECTIONS[command]:
        out[sec] = {k: copy.deepcopy(key.default) for k, key in SCHEMA[sec].items()}
    if command == "select":
        out["scm"].update(_SELECT_SCM)
    return out


def parse_value(text: str) -> Any:
    """A TOML literal (number, bool, list, inline table) or a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def load(command: str, path: str | os.PathLike | None = None, overrides=()) -> dict[str, dict[str, Any]]:
    """Defaults, then the TOML file, then ``(section, key, value)`` overrides.

    Sections not used by ``command`` are ignored only if they are known;
    unknown sections or keys are errors.
    """
    if command not in COMMAND_SECTIONS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = _defaults(command)
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for sec, table in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]; valid: {', '.join(SCHEMA)}")
        if not isinstance(table, Mapping):
            raise ConfigError(f"[{sec}] must be a table")
        for k in table:
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{k}; valid: {', '.join(SCHEMA[sec])}")
    for sec, table in raw.items():
        if sec in cfg:
            cfg[sec].update(table)
    for sec, k, v in overrides:
        if sec not in SCHEMA or k not in SCHEMA[sec]:
            raise ConfigError(f"unknown option {sec}.{k}")
        if sec not in cfg:
            raise ConfigError(f"option {sec}.{k} does not apply to {command}")
        if sec == "data" and k == "roles":
            cfg[sec][k] = {**cfg[sec][k], **v}
        else:
            cfg[sec][k] = v
    for sec, table in cfg.items():
        for k, v in table.items():
            table[k] = SCHEMA[sec][k].check(f"{sec}.{k}", v)
    if cfg["run"]["seed"] is None:
        env = os.environ.get(SEED_ENV)
        try:
            cfg["run"]["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    _cross_checks(command, cfg)
    return cfg


def _cross_checks(command: str, cfg) -> None:
    if "scm" in cfg:
        scm = cfg["scm"]
        if scm["coef_high"] < scm["coef_low"]:
            raise ConfigError("scm.coef_high must be >= scm.coef_low")
        hi = scm["rank"][1] if isinstance(scm["rank"], tuple) else scm["rank"]
        if hi > min(scm["d"], scm["p"]):
            raise ConfigError(f"scm.rank must be <= min(d, p) = {min(scm['d'], scm['p'])}")
    if command == "sweep" and cfg["sweep"]["t_max"] < cfg["sweep"]["t_min"]:
        raise ConfigError("sweep.t_max must be >= sweep.t_min")
    if command == "select":
        s = cfg["select"]
        if abs(s["w_error"] + s["w_corr"] - 1.0) > 1e-12:
            raise ConfigError("select.w_error + select.w_corr must equal 1")
        if s["source"] == "data" and not cfg["data"]["path"]:
            raise ConfigError("select.source = 'data' needs data.path")
    if command in ("fit", "predict") and not cfg["data"]["path"]:
        raise ConfigError(f"{command} needs data.path (or --data)")
    if command == "predict" and not cfg["predict"]["model"]:
        raise ConfigError("predict needs predict.model (or --model)")
