"""Key-value run configuration.

Files are INI-style (``[section]`` headers, ``key = value`` lines).  Numeric
values may be arithmetic expressions over ``pi``, ``e`` and a few functions
(``sqrt``, ``sin``, ``cos``, ``exp``, ``log``); they are evaluated by walking
the AST, never by ``eval``.  Overrides use dotted keys, ``section.key=value``.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from qvortex.errors import ConfigError

SCENARIOS = ("ho-trap", "ring", "rabi", "grid-evolver")
EXPERIMENTS = ("advect", "charge-scan", "detect-track", "hkt-report", "evolve")
FORMATS = ("csv", "json")
PRESETS = ("fig1", "fig2-ring", "rabi-merge", "gpe-hkt")

_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log,
          "tan": math.tan, "atan": math.atan}
_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def eval_number(text: str, key: str = "?") -> float:
    """Evaluate a numeric expression such as ``pi/2 - 1e-3`` or ``sqrt(2)``."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _CONSTS:
            return _CONSTS[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](walk(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](walk(node.args[0]))
        raise ValueError("unsupported expression")

    try:
        value = walk(ast.parse(str(text).strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError, TypeError) as exc:
        raise ConfigError(f"{key}: cannot read {text!r} as a number ({exc})", key) from None
    if math.isnan(value):
        raise ConfigError(f"{key}: value is NaN", key)
    return float(value)


def eval_list(text: str, key: str = "?") -> tuple[float, ...]:
    parts = [p for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key}: empty list", key)
    return tuple(eval_number(p, key) for p in parts)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _bool(text: str, key: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}", key)


# Every accepted key with its parser and default (None: no default / optional).
_SCHEMA: dict[str, tuple[str, object]] = {
    "run.scenario": ("choice:" + "|".join(SCENARIOS), None),
    "run.experiment": ("choice:" + "|".join(EXPERIMENTS), None),
    "scenario.lam": ("number", math.sqrt(2.0)),
    "scenario.alpha": ("number", 1.0),
    "scenario.k": ("number", 1.0),
    "scenario.D": ("number", 0.1),
    "scenario.g": ("number", 0.0),
    "scenario.trap_lam": ("number", 1.0),
    "contour.shape": ("choice:circle|star|none", "circle"),
    "contour.center": ("list", (0.0, 0.0)),
    "contour.radius": ("number", 1.0),
    "contour.points": ("int", 256),
    "contour.normal": ("list", None),
    "contour.amplitudes": ("list", None),
    "contour.phases": ("list", None),
    "time.unit": ("choice:t|Et|Dt", "t"),
    "time.start": ("number", 0.0),
    "time.stop": ("number", 1.0),
    "time.steps": ("int", 20),
    "time.values": ("list", None),
    "advect.rtol": ("number", 1e-9),
    "advect.atol": ("number", 1e-11),
    "advect.continue_to": ("number", None),
    "advect.restart_at": ("number", None),
    "advect.reseed": ("bool", True),
    "detect.window": ("list", (-2.0, 2.0, -2.0, 2.0)),
    "detect.resolution": ("int", 256),
    "detect.slice_y": ("number", 0.0),
    "grid.nx": ("int", 256),
    "grid.ny": ("int", 256),
    "grid.Lx": ("number", 16.0),
    "grid.Ly": ("number", 16.0),
    "evolve.initial": ("choice:ho-trap|ground-state", "ground-state"),
    "evolve.dt": ("number", 1e-3),
    "evolve.t_end": ("number", 1.0),
    "evolve.cadence": ("int", 100),
    "evolve.ground_tau": ("number", 1.0),
    "evolve.relax_tau": ("number", 0.0),
    "evolve.imprint_center": ("list", None),
    "evolve.imprint_charge": ("int", 1),
    "evolve.residual_points": ("int", 100),
    "evolve.residual_exclusion": ("number", 0.5),
    "evolve.seed": ("int", 0),
    "output.dir": ("str", "out"),
    "output.formats": ("str", "csv,json"),
}


def _parse_value(kind: str, text: str, key: str):
    if kind == "number":
        return eval_number(text, key)
    if kind == "int":
        v = eval_number(text, key)
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer, got {text!r}", key)
        return int(v)
    if kind == "list":
        return eval_list(text, key)
    if kind == "bool":
        return _bool(text, key)
    if kind.startswith("choice:"):
        choices = kind.split(":", 1)[1].split("|")
        t = str(text).strip()
        if t not in choices:
            raise ConfigError(f"{key}: {t!r} is not one of {', '.join(choices)}", key)
        return t
    return str(text).strip()


@dataclass
class RunConfig:
    """Validated, typed view of a configuration file plus overrides."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def scenario(self) -> str:
        return self.values["run.scenario"]

    @property
    def experiment(self) -> str:
        return self.values["run.experiment"]

    @property
    def formats(self) -> tuple[str, ...]:
        return tuple(f.strip() for f in self.values["output.formats"].split(",") if f.strip())

    def time_values(self) -> list[float]:
        """Requested epoch values in the configured unit."""
        if self.values.get("time.values") is not None:
            return list(self.values["time.values"])
        n = self.values["time.steps"]
        a, b = self.values["time.start"], self.values["time.stop"]
        return [a + (b - a) * i / n for i in range(n + 1)]

    def to_mapping(self) -> dict:
        """Nested ``{section: {key: text}}`` that :func:`from_mapping` reads back to an equal config."""
        out: dict = {}
        for key in sorted(self.values):
            v = self.values[key]
            if v is None:
                continue
            sec, name = key.split(".", 1)
            out.setdefault(sec, {})[name] = _fmt(v)
        return out

    @classmethod
    def from_mapping(cls, mapping: dict, overrides: dict | None = None) -> "RunConfig":
        flat = {}
        for sec, items in mapping.items():
            for name, text in items.items():
                flat[f"{sec}.{name}"] = text
        flat.update(overrides or {})
        values = {}
        for key, text in flat.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown configuration key {key!r}", key)
            values[key] = _parse_value(_SCHEMA[key][0], text, key)
        for key, (_, default) in _SCHEMA.items():
            values.setdefault(key, default)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        v = self.values
        for key in ("run.scenario", "run.experiment"):
            if v[key] is None:
                raise ConfigError(f"missing required key {key!r}", key)
        scen, exp = v["run.scenario"], v["run.experiment"]
        if scen == "ho-trap":
            if v["scenario.lam"] <= 0:
                raise ConfigError("scenario.lam must be positive", "scenario.lam")
            if abs(v["scenario.lam"] - 1.0) < 1e-12:
                raise ConfigError("scenario.lam = 1 is degenerate (E = lam - 1 = 0)", "scenario.lam")
        if scen == "ring" and not v["scenario.k"] >= 0:
            raise ConfigError("scenario.k must be non-negative", "scenario.k")
        if scen == "rabi" and v["scenario.D"] <= 0:
            raise ConfigError("scenario.D must be positive", "scenario.D")
        if scen == "grid-evolver":
            if exp != "evolve":
                raise ConfigError("grid-evolver only supports experiment = evolve", "run.experiment")
            if v["scenario.g"] < 0:
                raise ConfigError("scenario.g must be non-negative", "scenario.g")
            for key in ("grid.nx", "grid.ny"):
                n = v[key]
                if n < 4 or n & (n - 1):
                    raise ConfigError(f"{key} must be a power of two >= 4", key)
            for key in ("grid.Lx", "grid.Ly", "evolve.dt", "evolve.t_end"):
                if v[key] <= 0:
                    raise ConfigError(f"{key} must be positive", key)
            if v["evolve.imprint_center"] is not None and len(v["evolve.imprint_center"]) != 2:
                raise ConfigError("evolve.imprint_center needs two coordinates", "evolve.imprint_center")
            if abs(v["evolve.imprint_charge"]) > 2:
                raise ConfigError("evolve.imprint_charge must satisfy |n| <= 2", "evolve.imprint_charge")
        elif exp == "evolve":
            raise ConfigError("experiment = evolve needs scenario = grid-evolver", "run.experiment")
        dim = 3 if scen == "ring" and exp != "detect-track" else 2
        if v["contour.shape"] != "none" and exp in ("advect", "charge-scan", "hkt-report"):
            if len(v["contour.center"]) != dim:
                raise ConfigError(f"contour.center needs {dim} coordinates", "contour.center")
            if dim == 3 and (v["contour.normal"] is None or len(v["contour.normal"]) != 3):
                raise ConfigError("contour.normal needs 3 coordinates for a 3D contour", "contour.normal")
        if v["contour.shape"] == "star":
            amps, phs = v["contour.amplitudes"], v["contour.phases"]
            if amps is None or phs is None or len(amps) != len(phs):
                raise ConfigError("star contours need equally long amplitudes and phases", "contour.amplitudes")
        if not v["contour.radius"] > 0:
            raise ConfigError("contour.radius must be positive", "contour.radius")
        if v["contour.points"] < 16:
            raise ConfigError("contour.points must be at least 16", "contour.points")
        if v["time.steps"] < 1:
            raise ConfigError("time.steps must be >= 1", "time.steps")
        times = self.time_values()
        if v["time.values"] is None and not v["time.stop"] > v["time.start"]:
            raise ConfigError("time grid must be strictly increasing", "time.stop")
        if any(b <= a for a, b in zip(times[:-1], times[1:])):
            raise ConfigError("time grid must be strictly increasing", "time.values")
        win = v["detect.window"]
        if len(win) != 4 or not (win[1] > win[0] and win[3] > win[2]):
            raise ConfigError("detect.window must be x0, x1, y0, y1 with x1 > x0 and y1 > y0", "detect.window")
        for f in self.formats:
            if f not in FORMATS:
                raise ConfigError(f"output.formats: unknown format {f!r}", "output.formats")


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key, value = item.split("=", 1)
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"override key {key!r} must look like section.key", key)
        out[key] = value.strip()
    return out


def read_mapping(path) -> dict:
    """Read a config file (or a preset name) into ``{section: {key: text}}``."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    elif str(path) in PRESETS:
        text = resources.files("qvortex.presets").joinpath(f"{path}.ini").read_text()
    else:
        raise ConfigError(f"config file {str(path)!r} not found", "config")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case (Lx, D, ...)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}", "config") from None
    return {sec: dict(parser.items(sec)) for sec in parser.sections()}


def load_config(path, overrides=None) -> RunConfig:
    return RunConfig.from_mapping(read_mapping(path), parse_overrides(overrides))
