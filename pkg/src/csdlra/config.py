"""INI-style run configuration with typed, validated keys."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError

COMMANDS = ("linesource", "ct-plan", "stability-check", "compare", "export-modes")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _floats(text: str) -> list[float]:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


@dataclass(frozen=True)
class Key:
    conv: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] | None = None
    hint: str = ""


def _pos(v):
    return v is None or v > 0


def _nonneg(v):
    return v is None or v >= 0


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "command": Key(str, None, lambda v: v in COMMANDS, f"one of {', '.join(COMMANDS)}"),
        "output_dir": Key(_opt(str), None),
        "seed": Key(int, 0),
    },
    "grid": {
        "n": Key(int, 100, lambda v: v >= 3, ">= 3"),
        "nx": Key(int, 64, lambda v: v >= 3, ">= 3"),
        "ny": Key(int, 32, lambda v: v >= 3, ">= 3"),
        "width": Key(float, 8.0, _pos, "> 0"),
        "height": Key(float, 4.0, _pos, "> 0"),
    },
    "basis": {
        "N": Key(int, 7, lambda v: 1 <= v <= 40, "between 1 and 40"),
        "quad_order": Key(_opt(int), None, lambda v: v is None or v >= 2, ">= 2"),
        "cone_cos": Key(float, 0.102, lambda v: -1.0 <= v < 1.0, "in [-1, 1)"),
    },
    "solver": {
        "levels": Key(int, 4, _nonneg, ">= 0"),
        "mode": Key(str, "adaptive", lambda v: v in ("adaptive", "fixed_rank"),
                    "adaptive or fixed_rank"),
        "theta": Key(float, 0.3, _nonneg, ">= 0"),
        "theta_mode": Key(str, "relative", lambda v: v in ("relative", "absolute"),
                          "relative or absolute"),
        "rank": Key(int, 10, _pos, "> 0"),
        "r_min": Key(int, 2, _pos, "> 0"),
        "r_max": Key(int, 100, _pos, "> 0"),
        "cfl_safety": Key(float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
        "t_end": Key(_opt(float), None, _pos, "> 0"),
        "max_steps": Key(_opt(int), None, _pos, "> 0"),
        "record_every": Key(int, 1, _pos, "> 0"),
        "strict_norm_check": Key(_bool, False),
    },
    "physics": {
        "sigma": Key(float, 0.03, _pos, "> 0"),
        "sigma_s": Key(float, 1.0, _nonneg, ">= 0"),
        "e_max": Key(float, 21.0, _pos, "> 0"),
        "s0": Key(float, 1.8, _pos, "> 0"),
        "s1": Key(float, 0.01, _nonneg, ">= 0"),
        "stopping_power_table": Key(_opt(str), None),
        "image": Key(_opt(str), None),
        "fill_air": Key(_bool, True),
    },
    "beam": {
        "amplitude": Key(float, 1e5, _nonneg, ">= 0"),
        "x_mean": Key(float, 7.25),
        "y_mean": Key(float, 14.5),
        "omega1_mean": Key(float, 1.0),
        "inv_var_omega": Key(float, 75.0, _pos, "> 0"),
        "inv_var_x": Key(float, 20.0, _pos, "> 0"),
        "inv_var_y": Key(float, 20.0, _pos, "> 0"),
        "inv_var_e": Key(float, 100.0, _pos, "> 0"),
    },
    "stability": {
        "nu": Key(_floats, [0.25, 0.5, 0.6], lambda v: all(x > 0 for x in v), "positive values"),
        "n": Key(int, 32, lambda v: 3 <= v <= 64, "between 3 and 64"),
        "N": Key(int, 3, lambda v: v >= 1, ">= 1"),
        "rank": Key(int, 4, _pos, "> 0"),
        "steps": Key(int, 100, _pos, "> 0"),
        "seeds": Key(int, 3, _pos, "> 0"),
    },
    "output": {
        "figures": Key(_bool, True),
        "vtk": Key(_bool, False),
        "oracle": Key(_bool, False),
        "full_scale": Key(_bool, False),
    },
}


# per-command overrides of the schema defaults
COMMAND_DEFAULTS: dict[str, dict[str, dict]] = {
    "ct-plan": {
        "basis": {"N": 5, "quad_order": 16},
        "solver": {"levels": 1, "theta": 0.01, "r_max": 30},
    },
}


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __post_init__(self):
        merged = {sec: {k: key.default for k, key in keys.items()} for sec, keys in SCHEMA.items()}
        for sec, items in COMMAND_DEFAULTS.get(self.command, {}).items():
            merged[sec].update(items)
        for sec, items in self.values.items():
            merged.setdefault(sec, {}).update(items)
        merged["run"]["command"] = self.command
        self.values = merged

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        spec = SCHEMA[section][key]
        if spec.check is not None and value is not None and not spec.check(value):
            raise ConfigError(f"value {value!r} must be {spec.hint}", f"[{section}] {key}")
        self.values[section][key] = value

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for sec, items in self.values.items():
            parser[sec] = {k: _render(v) for k, v in items.items()}
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return lineno
        elif current == section and key is not None:
            name = re.split(r"[=:]", stripped, maxsplit=1)[0].strip()
            if name == key:
                return lineno
    return None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        loc = f"{source}:{lineno}" if lineno else source
        raise ConfigError(f"cannot parse configuration: {exc.message}", loc) from exc

    def where(section, key=None):
        line = _line_of(text, section, key)
        head = f"{source}:{line}" if line else source
        return f"{head} [{section}]" + (f" {key}" if key else "")

    values: dict[str, dict] = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", where(sec))
        for key, raw in parser[sec].items():
            spec = SCHEMA[sec].get(key)
            if spec is None:
                raise ConfigError(f"unknown key {key!r}", where(sec, key))
            try:
                value = spec.conv(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value {raw!r}: {exc}", where(sec, key)) from exc
            if spec.check is not None and value is not None and not spec.check(value):
                raise ConfigError(f"value {raw!r} must be {spec.hint}", where(sec, key))
            values.setdefault(sec, {})[key] = value
    command = values.get("run", {}).get("command")
    if command is None:
        raise ConfigError("missing required key 'command'", f"{source} [run] command")
    if values.get("physics", {}).get("image"):
        image = Path(values["physics"]["image"])
        if not image.is_absolute() and source not in ("<string>",):
            image = Path(source).parent / image
        if not image.exists():
            raise ConfigError(f"image file {image} does not exist", where("physics", "image"))
        values["physics"]["image"] = str(image)
    cfg = RunConfig(command, values, source)
    _cross_check(cfg, source)
    return cfg


def _cross_check(cfg: RunConfig, source: str) -> None:
    s = cfg.values["solver"]
    if s["r_min"] > s["r_max"]:
        raise ConfigError(f"r_min={s['r_min']} exceeds r_max={s['r_max']}", f"{source} [solver]")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc.strerror}", str(path)) from exc
    return parse_config(text, str(path))


def default_config(command: str) -> RunConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    return RunConfig(command)
