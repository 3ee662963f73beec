"""Experiment configuration: a sectioned key = value file.

    [model]
    premium_rate = 2
    claim_intensity = 1
    claims.kind = exponential
    claims.params.rate = 1

    [run]
    seed = 20261016

Lists are comma separated.  Unknown sections and keys are rejected with the
line they appear on.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field

from .errors import ConfigError, ModelError
from .risk_model import RiskModel, claims_from_params

__all__ = ["ExperimentConfig", "load_config", "parse_config", "SCHEMA", "DEFAULTS"]

_LIST = "list"
_FLOAT, _INT, _STR, _BOOL = "float", "int", "str", "bool"

SCHEMA: dict[str, dict[str, str]] = {
    "model": {"premium_rate": _FLOAT, "claim_intensity": _FLOAT, "claims.kind": _STR},
    "run": {"seed": _INT},
    "output": {"format": _STR, "path": _STR, "grid_end": _FLOAT, "grid_step": _FLOAT},
    "ruin": {"u": _LIST, "paths": _INT, "batches": _INT, "method": _STR, "n_se": _FLOAT},
    "limits": {"quintuple_edges": _LIST, "ladder_paths": _INT, "ladder_horizon": _FLOAT,
               "time_edges": _LIST},
    "validate": {"paths": _INT, "batches": _INT, "u_check": _FLOAT},
    "edpf": {"lam_p": _LIST, "eta": _LIST, "beta": _LIST, "delta": _LIST, "mc_u": _FLOAT,
             "paths": _INT, "batches": _INT, "mc_check": _BOOL},
}

DEFAULTS: dict[str, dict[str, object]] = {
    "run": {"seed": 0},
    "output": {"format": "csv", "path": "ruinlab-out", "grid_end": 20.0, "grid_step": 0.05},
    "ruin": {"u": [0.0, 5.0, 10.0], "paths": 10_000, "batches": 10, "method": "auto", "n_se": 3.0},
    "limits": {"quintuple_edges": [0.0, 0.5, 1.0, 2.0, math.inf], "ladder_paths": 2000,
               "ladder_horizon": 200.0, "time_edges": [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 200.0]},
    "validate": {"paths": 100_000, "batches": 20, "u_check": 10.0},
    "edpf": {"lam_p": [0.0], "eta": [0.0, 0.1, 0.25], "beta": [0.0, 0.5], "delta": [0.0],
             "mc_u": 20.0, "paths": 2000, "batches": 50, "mc_check": None},
}

_POSITIVE = {("model", "premium_rate"), ("model", "claim_intensity"), ("output", "grid_end"),
             ("output", "grid_step"), ("ruin", "paths"), ("ruin", "batches"), ("ruin", "n_se"),
             ("limits", "ladder_paths"), ("limits", "ladder_horizon"), ("validate", "paths"),
             ("validate", "batches"), ("validate", "u_check"), ("edpf", "mc_u"), ("edpf", "paths"),
             ("edpf", "batches")}


@dataclass(frozen=True)
class ExperimentConfig:
    model: RiskModel
    seed: int
    output: dict
    sections: dict = field(default_factory=dict)
    source: str = ""

    def section(self, name: str) -> dict:
        merged = dict(DEFAULTS.get(name, {}))
        merged.update(self.sections.get(name, {}))
        return merged


def _line_index(text: str) -> dict[tuple[str, str], int]:
    where: dict[tuple[str, str], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where[(section, "")] = n
            continue
        if section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            where.setdefault((section, key), n)
    return where


def _convert(raw: str, kind: str, key: str, line: int | None):
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _BOOL:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if kind == _LIST:
            return [float(v) for v in raw.split(",") if v.strip()]
        return raw.strip()
    except ValueError:
        raise ConfigError(f"cannot read {raw!r} as {kind}", key, line) from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    where = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, strict=True, delimiters=("=",),
                                   inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed configuration: {exc.message.splitlines()[0]}", None, line) from None

    sections: dict[str, dict] = {}
    params: dict[str, float | list] = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]", name, where.get((name, "")))
        vals = {}
        for key, raw in cp.items(name):
            line = where.get((name, key))
            path = f"{name}.{key}"
            if name == "model" and key.startswith("claims.params."):
                pkey = key[len("claims.params."):]
                if pkey in ("weights", "rates"):
                    params[pkey] = _convert(raw, _LIST, path, line)
                else:
                    params[pkey] = _convert(raw, _FLOAT, path, line)
                continue
            kind = SCHEMA[name].get(key)
            if kind is None:
                raise ConfigError("unknown key", path, line)
            value = _convert(raw, kind, path, line)
            if (name, key) in _POSITIVE and not value > 0:
                raise ConfigError(f"must be positive, got {raw.strip()}", path, line)
            vals[key] = value
        sections[name] = vals

    model_sec = sections.get("model", {})
    for key in ("premium_rate", "claim_intensity", "claims.kind"):
        if key not in model_sec:
            raise ConfigError("missing required key", f"model.{key}", where.get(("model", "")))
    for pkey, val in params.items():
        vals = val if isinstance(val, list) else [val]
        if any(not (v > 0) for v in vals) and pkey != "tilt":
            raise ConfigError("must be positive", f"model.claims.params.{pkey}",
                              where.get(("model", f"claims.params.{pkey}")))
    try:
        claims = claims_from_params(model_sec["claims.kind"], params)
    except ModelError as exc:
        raise ConfigError(str(exc), "model.claims.kind", where.get(("model", "claims.kind"))) from None
    try:
        model = RiskModel(model_sec["premium_rate"], model_sec["claim_intensity"], claims)
    except ModelError as exc:
        raise ConfigError(str(exc), "model", where.get(("model", ""))) from None
    fmt = sections.get("output", {}).get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("format must be csv or json", "output.format", where.get(("output", "format")))
    output = dict(DEFAULTS["output"])
    output.update(sections.get("output", {}))
    seed = sections.get("run", {}).get("seed", DEFAULTS["run"]["seed"])
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 bits", "run.seed", where.get(("run", "seed")))
    return ExperimentConfig(model, seed, output, sections, source)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path)
