"""Run configuration: a sectioned ``key = value`` file.

Grammar (standard INI subset, read with :mod:`configparser`):

* ``[section]`` headers; sections are ``run``, ``materials``, ``geometry``,
  ``kinetics``, ``circuit``, ``schedule`` and ``output``. All are optional.
* ``key = value`` lines; ``#`` and ``;`` start comment lines.
* Numbers use Python float syntax (``1e-9``), flags are ``true``/``false``,
  lists are comma separated.

Every key has a default, unknown keys are rejected, and the effective
configuration can be echoed back in the same grammar.
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import NamedTuple

from . import materials as mat
from .circuit import CircuitConfig, FetParams
from .errors import ConfigError, PCMError
from .experiments import PulseSchedule, SimConfig
from .geometry import GeometrySpec
from .kinetics import KineticsParams
from .snapshots import QUANTITIES


class Key(NamedTuple):
    kind: str  # float | int | bool | floats | str | strs
    default: object
    check: object = None  # "pos", "nonneg", or a tuple of allowed strings


_PHASE_KEYS = {"sigma": "sigma_ref", "activation": "activation_energy", "kappa": "kappa", "c_vol": "c_vol"}


def _materials_keys():
    t = mat.MaterialTable()
    keys = {}
    for phase in ("amorphous", "crystalline", "molten"):
        props = getattr(t, phase)
        for short, attr in _PHASE_KEYS.items():
            keys[f"{phase}_{short}"] = Key("float", getattr(props, attr),
                                           "nonneg" if short == "activation" else "pos")
    for f in fields(t):
        if f.name not in ("amorphous", "crystalline", "molten"):
            keys[f.name] = Key("float", getattr(t, f.name),
                               "nonneg" if f.name.endswith("activation") else "pos")
    return keys


def _geometry_keys():
    g = GeometrySpec()
    keys = {f.name: Key("float", getattr(g, f.name), "nonneg" if f.name == "asymmetry_factor" else "pos")
            for f in fields(g)}
    keys.update(dx=Key("float", 1e-9, "pos"), thickness=Key("float", 20e-9, "pos"),
                T_ambient=Key("float", 300.0, "pos"))
    return keys


def _circuit_keys():
    c = CircuitConfig()
    keys = {name: Key("float", getattr(c, name)) for name in
            ("v_write_supply", "v_gate_write", "v_read_supply", "v_gate_read")}
    keys["r_load"] = Key("float", c.r_load, "pos")
    keys["r_load_values"] = Key("floats", (1e3, 1e4, 1e5), "pos")
    for fet in ("write_fet", "read_fet"):
        p = getattr(c, fet)
        keys[f"{fet}_v_threshold"] = Key("float", p.v_threshold)
        keys[f"{fet}_k"] = Key("float", p.transconductance_factor, "pos")
    return keys


def _schema():
    k = KineticsParams()
    return {
        "run": {
            "seed": Key("int", 0, "nonneg"),
            "deterministic": Key("bool", True),
            "dt": Key("float", 10e-12, "pos"),
            "snapshot_every": Key("int", 0, "nonneg"),
            "threads": Key("int", 1, "pos"),
            "linear_solver": Key("str", "direct", ("direct", "cg")),
        },
        "materials": _materials_keys(),
        "geometry": _geometry_keys(),
        "kinetics": {
            "melt_time_constant": Key("float", k.melt_time_constant, "pos"),
            "nucleus_cd": Key("float", k.nucleus_cd, "pos"),
        },
        "circuit": _circuit_keys(),
        "schedule": {
            "n_writes": Key("int", 4, "nonneg"),
            "write_width": Key("float", 5e-9, "pos"),
            "cooldown": Key("float", 5e-9, "pos"),
            "read_width": Key("float", 5e-9, "pos"),
            "read_gap": Key("float", 2e-9, "pos"),
            "delays": Key("floats", (5e-11, 1e-10, 5e-10, 1e-9, 5e-9), "pos"),
        },
        "output": {
            "trace_file": Key("str", "trace.csv"),
            "snapshot_quantities": Key("strs", ("cdnorm", "T"), QUANTITIES),
        },
    }


SCHEMA = _schema()
SECTIONS = tuple(SCHEMA)
_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _convert(section, name, key: Key, text: str):
    where = f"[{section}] {name}"
    text = text.strip()
    try:
        if key.kind == "float":
            value = float(text)
        elif key.kind == "int":
            value = int(text)
        elif key.kind == "bool":
            value = _BOOLS[text.lower()]
        elif key.kind == "floats":
            value = tuple(float(v) for v in text.split(",") if v.strip())
        elif key.kind == "strs":
            value = tuple(v.strip() for v in text.split(",") if v.strip())
        else:
            value = text
    except (ValueError, KeyError):
        raise ConfigError(f"{where}: cannot read {text!r} as {key.kind}") from None
    items = value if isinstance(value, tuple) else (value,)
    if key.kind in ("floats", "strs") and not items:
        raise ConfigError(f"{where} must not be empty")
    for v in items:
        if key.kind in ("float", "floats", "int") and v != v:
            raise ConfigError(f"{where} must be a number, got NaN")
        if key.check == "pos" and not v > 0:
            raise ConfigError(f"{where} must be positive, got {v!r}")
        if key.check == "nonneg" and not v >= 0:
            raise ConfigError(f"{where} must be non-negative, got {v!r}")
        if isinstance(key.check, tuple) and v not in key.check:
            raise ConfigError(f"{where} must be one of {', '.join(key.check)}, got {v!r}")
    return value


def _format(key: Key, value) -> str:
    if key.kind == "float":
        return repr(float(value))
    if key.kind == "bool":
        return "true" if value else "false"
    if key.kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if key.kind == "strs":
        return ", ".join(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration. ``values[section][key]`` holds typed values."""

    values: tuple  # ((section, ((key, value), ...)), ...) so the object is hashable and comparable

    def get(self, section: str, key: str):
        return dict(dict(self.values)[section])[key]

    def section(self, section: str) -> dict:
        return dict(dict(self.values)[section])

    @property
    def seed(self):
        return self.get("run", "seed")

    @property
    def deterministic(self):
        return self.get("run", "deterministic")

    @property
    def dt(self):
        return self.get("run", "dt")

    @property
    def snapshot_every(self):
        return self.get("run", "snapshot_every")

    def echo(self) -> str:
        """The effective configuration in the input grammar, every key spelled out."""
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            for name, value in self.section(section).items():
                lines.append(f"{name} = {_format(SCHEMA[section][name], value)}")
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply ``{"section.key": text}`` overrides (command-line layer)."""
        data = {s: self.section(s) for s in SECTIONS}
        for dotted, text in overrides.items():
            section, _, name = dotted.partition(".")
            _check_known(section, name)
            data[section][name] = _convert(section, name, SCHEMA[section][name], str(text))
        return _build(data)

    # -- domain objects ------------------------------------------------------

    def material_table(self) -> mat.MaterialTable:
        m = self.section("materials")
        phases = {p: mat.PhaseProperties(**{attr: m[f"{p}_{short}"] for short, attr in _PHASE_KEYS.items()})
                  for p in ("amorphous", "crystalline", "molten")}
        rest = {k: v for k, v in m.items() if not k.startswith(("amorphous_", "crystalline_", "molten_"))}
        return mat.MaterialTable(**phases, **rest)

    def geometry(self) -> GeometrySpec:
        g = self.section("geometry")
        return GeometrySpec(**{f.name: g[f.name] for f in fields(GeometrySpec)})

    def circuit(self) -> CircuitConfig:
        c = self.section("circuit")
        return CircuitConfig(
            v_write_supply=c["v_write_supply"], v_gate_write=c["v_gate_write"],
            v_read_supply=c["v_read_supply"], v_gate_read=c["v_gate_read"], r_load=c["r_load"],
            write_fet=FetParams(c["write_fet_v_threshold"], c["write_fet_k"]),
            read_fet=FetParams(c["read_fet_v_threshold"], c["read_fet_k"]))

    def sim_config(self) -> SimConfig:
        g = self.section("geometry")
        k = self.section("kinetics")
        return SimConfig(table=self.material_table(), geometry=self.geometry(), dx=g["dx"],
                         thickness=g["thickness"], T_ambient=g["T_ambient"],
                         kinetics=KineticsParams(k["melt_time_constant"], self.seed, k["nucleus_cd"]),
                         circuit=self.circuit(), dt=self.dt, linear_solver=self.get("run", "linear_solver"))

    def schedule(self) -> PulseSchedule:
        s = self.section("schedule")
        return PulseSchedule.toggle(s["n_writes"], s["write_width"], s["cooldown"], s["read_width"], s["read_gap"])


def _check_known(section, name):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if name not in SCHEMA[section]:
        raise ConfigError(f"unknown key '{name}' in [{section}]")


def _build(data: dict) -> RunConfig:
    cfg = RunConfig(tuple((s, tuple(data[s].items())) for s in SECTIONS))
    # cross-field invariants live in the domain constructors; name the section on failure
    for section, make in (("materials", cfg.material_table), ("geometry", cfg.geometry),
                          ("circuit", cfg.circuit), ("schedule", cfg.schedule)):
        try:
            make()
        except ConfigError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("[") else f"[{section}] {msg}") from None
        except PCMError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    try:
        cfg.sim_config()
    except PCMError as exc:
        raise ConfigError(f"[kinetics] {exc}") from None
    return cfg


def defaults() -> RunConfig:
    return _build({s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()})


def parse_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=None, default_section="\0none")
    parser.optionxform = str  # keys are case sensitive (T_melt)
    try:
        parser.read_string(text, source="<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: key outside of any [section]: {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]  # configparser stores repr(line)
        raise ConfigError(f"line {lineno}: expected 'key = value', got {ast.literal_eval(line).strip()!r}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"line {exc.lineno}: {exc.message.splitlines()[0]}") from None
    data = {s: {k: key.default for k, key in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        for name, text_value in parser.items(section):
            _check_known(section, name)
            data[section][name] = _convert(section, name, SCHEMA[section][name], text_value)
    return _build(data)


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_text(text)


def write_echo(cfg: RunConfig, directory, name: str = "effective.cfg") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / name
    out.write_text(cfg.echo())
    return out
