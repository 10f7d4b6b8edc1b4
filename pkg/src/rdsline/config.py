"""Run configuration: strict JSON schema, exact rationals, path diagnostics."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema

from .fixtures import FIXTURES, MONSTER_FIXTURES, fixture_json
from .homeo import MapError
from .monster import VARIANTS, MonsterSystem, monster_from_json
from .system import RandomSystem, SystemError_, system_from_json
from .walk import DEFAULT_CI_LEVEL, DEFAULT_PROBES, DEFAULT_TAU, SimParams

COMMANDS = ("check", "phi", "classify", "measure", "monster")

RATIONAL = {
    "anyOf": [
        {"type": "string", "pattern": r"^\s*[+-]?\d+(\s*/\s*\d+)?\s*$"},
        {"type": "string", "pattern": r"^\s*[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\s*$"},
        {"type": "integer"},
    ]
}
NUMBER = {"type": "number"}
WINDOW = {"type": "array", "items": NUMBER, "minItems": 2, "maxItems": 2}

MAP_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {"properties": {"kind": {"const": "affine"}, "slope": RATIONAL, "intercept": RATIONAL},
         "additionalProperties": False},
        {"properties": {"kind": {"const": "piecewise-linear"},
                        "breakpoints": {"type": "array", "items": RATIONAL},
                        "pieces": {"type": "array", "minItems": 1,
                                   "items": {"type": "array", "items": RATIONAL,
                                             "minItems": 2, "maxItems": 2}}},
         "required": ["breakpoints", "pieces"], "additionalProperties": False},
        {"properties": {"kind": {"const": "sin-perturbation"}, "amplitude": RATIONAL,
                        "shift": RATIONAL},
         "required": ["amplitude"], "additionalProperties": False},
    ],
}

SYSTEM_SCHEMA = {
    "oneOf": [
        {"type": "object",
         "properties": {"label": {"type": "string"},
                        "maps": {"type": "array", "minItems": 1, "items": MAP_SCHEMA},
                        "probs": {"type": "array", "minItems": 1, "items": RATIONAL}},
         "required": ["maps", "probs"], "additionalProperties": False},
        {"type": "object",
         "properties": {"kind": {"const": "monster"}, "variant": {"enum": list(VARIANTS)},
                        "delta": {"type": "number", "minimum": 0, "maximum": 1},
                        "label": {"type": "string"}},
         "required": ["kind", "variant"], "additionalProperties": False},
        {"type": "string", "minLength": 1},
    ]
}

PARAMS_SCHEMA = {
    "type": "object",
    "properties": {
        "horizon": {"type": "integer", "minimum": 1},
        "escape": {"type": "number", "exclusiveMinimum": 0},
        "confine_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "trials": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "system": SYSTEM_SCHEMA,
        "fixture": {"enum": sorted(FIXTURES) + sorted(MONSTER_FIXTURES)},
        "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "workers": {"type": "integer", "minimum": 1},
        "params": PARAMS_SCHEMA,
        "check": _block({"window": WINDOW, "grid_points": {"type": "integer", "minimum": 2}}),
        "phi": _block({
            "points": {"type": "array", "items": NUMBER, "minItems": 1},
            "window": WINDOW,
            "step": {"type": "number", "exclusiveMinimum": 0},
            "solver": {"type": "boolean"},
            "grid_size": {"type": "integer", "minimum": 2},
            "tol": {"type": "number", "exclusiveMinimum": 0},
        }),
        "classify": _block({
            "probes": {"type": "array", "items": NUMBER, "minItems": 2},
            "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
            "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        }),
        "measure": _block({
            "case": {"enum": ["auto", "2", "3", "4"]},
            "window": WINDOW,
            "step": {"type": "number", "exclusiveMinimum": 0},
            "y": NUMBER,
            "region_top": NUMBER,
            "ladder": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                       "minItems": 1},
            "cycles": {"type": "integer", "minimum": 1},
            "burn": {"type": "integer", "minimum": 0},
            "chains": {"type": "integer", "minimum": 1},
            "bin_width": {"type": "number", "exclusiveMinimum": 0},
            "x0": NUMBER,
        }),
        "monster": _block({
            "variant": {"enum": list(VARIANTS)},
            "steps": {"type": "integer", "minimum": 1, "maximum": 10**8},
            "runs": {"type": "integer", "minimum": 1},
            "J": WINDOW,
            "delta": {"type": "number", "minimum": 0, "maximum": 1},
            "pool_runs": {"type": "integer", "minimum": 0},
            "pool_steps": {"type": "integer", "minimum": 1},
        }),
        "output": _block({"dir": {"type": "string"}, "plot": {"type": "boolean"}}),
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    command: str
    system: RandomSystem | MonsterSystem | None
    system_json: dict | None
    master_seed: int = 0
    workers: int | None = None
    params: SimParams = field(default_factory=SimParams)
    options: dict[str, dict] = field(default_factory=dict)
    out_dir: str = "out"
    plot: bool = False
    raw: dict = field(default_factory=dict)

    def block(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical effective configuration."""
        return hashlib.sha256(canonical_json(self.effective()).encode()).hexdigest()

    def effective(self) -> dict:
        return {
            "command": self.command,
            "system": self.system_json,
            "master_seed": self.master_seed,
            "params": {k: getattr(self.params, k)
                       for k in ("horizon", "escape", "confine_fraction", "trials")},
            "options": self.options,
        }


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _path(err: jsonschema.ValidationError) -> str:
    parts = ["$"]
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def _best(err: jsonschema.ValidationError) -> jsonschema.ValidationError:
    # descend into oneOf branches to the most specific failure
    return jsonschema.exceptions.best_match([err]) if err.context else err


def validate_schema(obj: Any) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        msgs = []
        for e in errors:
            b = _best(e)
            msgs.append(f"{_path(b)}: {b.message}")
        raise ConfigError("schema violation: " + "; ".join(msgs))


def _load_system(spec, base_dir: Path | None):
    if isinstance(spec, str):
        path = Path(spec)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"$.system: file {str(path)!r} does not exist")
        try:
            spec = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"$.system: {path}: invalid JSON: {exc}") from exc
        validator = jsonschema.Draft202012Validator(SYSTEM_SCHEMA)
        for e in validator.iter_errors(spec):
            raise ConfigError(f"$.system ({path}): {_best(e).message}")
    if spec.get("kind") == "monster":
        return monster_from_json(spec), spec
    try:
        return system_from_json(spec), spec
    except (SystemError_, MapError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"$.system: {exc}") from exc


def parse_config(text: str, base_dir: str | Path | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Parse and validate a JSON configuration.

    ``overrides`` is merged into the parsed object before validation, one
    level deep for blocks, so command-line flags go through the same checks.
    """
    try:
        obj = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if not isinstance(obj, dict):
        raise ConfigError("$: configuration must be a JSON object")
    for key, val in (overrides or {}).items():
        if isinstance(val, dict) and isinstance(obj.get(key), dict):
            obj[key] = {**obj[key], **val}
        else:
            obj[key] = val
    validate_schema(obj)
    if "command" not in obj:
        raise ConfigError("$.command: a command is required")
    command = obj["command"]
    if "system" in obj and "fixture" in obj:
        raise ConfigError("$: give either 'system' or 'fixture', not both")
    system = system_json = None
    if "fixture" in obj:
        system_json = fixture_json(obj["fixture"])
        system, system_json = _load_system(system_json, None)
    elif "system" in obj:
        system, system_json = _load_system(obj["system"],
                                           Path(base_dir) if base_dir is not None else None)
    if command == "monster":
        mon = obj.get("monster", {})
        if system is None:
            system = MonsterSystem(mon.get("variant", "alternating"), mon.get("delta", 1.0))
        elif not isinstance(system, MonsterSystem):
            raise ConfigError("$.system: the monster command needs a monster system")
        elif "variant" in mon and mon["variant"] != system.variant:
            system = MonsterSystem(mon["variant"], mon.get("delta", system.delta), system.label)
        system_json = system.to_json()
    elif system is None:
        raise ConfigError(f"$.system: command {command!r} needs a system or fixture")
    elif isinstance(system, MonsterSystem):
        raise ConfigError(f"$.system: a monster system only supports the monster command")
    try:
        params = SimParams(**obj.get("params", {}), master_seed=obj.get("master_seed", 0))
    except ValueError as exc:
        raise ConfigError(f"$.params: {exc}") from exc
    options = {k: obj[k] for k in ("check", "phi", "classify", "measure", "monster") if k in obj}
    out = obj.get("output", {})
    return RunConfig(command, system, system_json, int(obj.get("master_seed", 0)),
                     obj.get("workers"), params, options, out.get("dir", "out"),
                     bool(out.get("plot", False)), obj)


def classify_options(cfg: RunConfig) -> dict:
    c = cfg.block("classify")
    return {"probe_points": tuple(c.get("probes", DEFAULT_PROBES)),
            "tau": c.get("tau", DEFAULT_TAU), "ci_level": c.get("ci_level", DEFAULT_CI_LEVEL)}
