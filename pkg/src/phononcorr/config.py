"""INI run configuration with typed, unit-suffixed keys.

Every section has a fixed schema. Unknown sections or keys are rejected with
the offending line number, and a parsed config serializes back to text that
parses to the same values.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .lindblad import SimConfig


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


@dataclass(frozen=True)
class Key:
    kind: str  # float, int, bool, str, floats, ints, opt_float, paths
    default: Any
    choices: tuple[str, ...] = ()
    doc: str = ""


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _parse_float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {text!r}")
    return v


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        # accept integral scientific notation such as 9.6e10
        v = float(text)
        if not math.isfinite(v) or v != int(v):
            raise ValueError(f"{text!r} is not an integer") from None
        return int(v)


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _parse(kind: str, text: str, key: Key):
    text = text.strip()
    if kind == "float":
        return _parse_float(text)
    if kind == "int":
        return _parse_int(text)
    if kind == "bool":
        if text.lower() not in _BOOLS:
            raise ValueError(f"expected true/false, got {text!r}")
        return _BOOLS[text.lower()]
    if kind == "str":
        if key.choices and text not in key.choices:
            raise ValueError(f"expected one of {', '.join(key.choices)}, got {text!r}")
        return text
    if kind == "opt_float":
        return None if text.lower() in ("", "auto") else _parse_float(text)
    if kind == "floats":
        return tuple(_parse_float(p) for p in _split(text))
    if kind == "ints":
        return tuple(_parse_int(p) for p in _split(text))
    if kind == "paths":
        return tuple(_split(text))
    raise AssertionError(kind)


def _format(kind: str, value) -> str:
    if kind == "float":
        return _fmt_float(value)
    if kind == "int":
        return str(int(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "str":
        return value
    if kind == "opt_float":
        return "auto" if value is None else _fmt_float(value)
    if kind == "floats":
        return ", ".join(_fmt_float(v) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind == "paths":
        return ", ".join(value)
    raise AssertionError(kind)


def _sim_schema() -> dict[str, Key]:
    kinds = {"float": "float", "float | None": "opt_float", "int": "int", "str": "str"}
    choices = {"photon_rate_convention": ("angular", "inverse"),
               "phonon_rate_convention": ("angular", "inverse"),
               "frame": ("interaction", "rotating")}
    out = {}
    for f in dataclasses.fields(SimConfig):
        out[f.name] = Key(kinds[f.type], f.default, choices.get(f.name, ()))
    return out


SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "out_dir": Key("str", "phononcorr-out"),
        "seed": Key("int", 0),
        "threads": Key("int", 1),
    },
    "analytic": {
        "eta": Key("float", 0.07),
        "alpha_r": Key("float", 0.3),
        "rep_rate_hz": Key("float", 8e7),
        "stokes_rate_min_hz": Key("float", 200.0),
        "stokes_rate_max_hz": Key("float", 2.4e4),
        "n_rates": Key("int", 25),
        "read_stokes_probs": Key("floats", (0.1, 0.2, 0.3)),
        "q_a": Key("floats", (1e-6,)),
        "q_b": Key("floats", (5.67e-6, 1.27e-5, 2.2e-5)),
        "mode_count_p_bar": Key("float", 1e-3),
        "mode_count_modes": Key("ints", tuple(range(1, 11))),
        "mode_count_eta": Key("float", 1.0),
        "mode_count_q": Key("float", 0.0),
    },
    "simulate": {
        **_sim_schema(),
        "trajectory": Key("bool", True),
        "write_amplitudes": Key("floats", (0.01, 0.03, 0.1)),
        "read_amplitudes": Key("floats", (0.05, 0.1, 0.2)),
        "g2_mode": Key("str", "peak", ("peak", "window")),
        "delays_ps": Key("floats", ()),
        "delay_g2_mode": Key("str", "window", ("peak", "window")),
    },
    "counts": {
        "probabilities": Key("str", "analytic", ("analytic", "explicit")),
        "p_bar": Key("float", 3e-4 / 0.07),
        "n_modes": Key("int", 1),
        "eta_a": Key("float", 0.07),
        "eta_b": Key("float", 0.07 * 0.3 * 0.2),
        "q_a": Key("float", 1e-6),
        "q_b": Key("float", 1.27e-5),
        "p_s": Key("float", 0.0),
        "p_as": Key("float", 0.0),
        "p_joint": Key("float", 0.0),
        "n_reps": Key("int", 96_000_000_000),
        "rep_period_ns": Key("float", 12.5),
        "bin_width_ns": Key("float", 0.512),
        "analysis_bin_ns": Key("float", 1.536),
        "n_side_peaks": Key("int", 25),
        "dark_floor_subtraction": Key("bool", False),
        "side_error": Key("str", "sem", ("sem", "std")),
        "crosstalk_p_as": Key("float", 0.0),
    },
    "fit": {
        "curves": Key("paths", ()),
        "sigma_ps": Key("float", 0.22),
        "baseline": Key("float", 1.0),
        "fix_sigma": Key("bool", True),
        "fix_baseline": Key("bool", True),
        "weighted": Key("bool", True),
        "ci_method": Key("str", "linear", ("linear", "bootstrap")),
        "n_boot": Key("int", 200),
        "max_iter": Key("int", 500),
        "normalize": Key("bool", False),
    },
}

# informational, written into manifests and ignored on input
PASSIVE_SECTIONS = ("manifest",)


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]]
    source: Path | None = None

    def section(self, name: str) -> dict[str, Any]:
        if name not in SCHEMA:
            raise KeyError(name)
        out = {k: key.default for k, key in SCHEMA[name].items()}
        out.update(self.sections.get(name, {}))
        return out

    def set(self, section: str, key: str, value) -> None:
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"[{section}] unknown key {key!r}")
        self.sections.setdefault(section, {})[key] = value

    def sim_config(self) -> SimConfig:
        sec = self.section("simulate")
        names = {f.name for f in dataclasses.fields(SimConfig)}
        try:
            return SimConfig(**{k: v for k, v in sec.items() if k in names})
        except ValueError as exc:
            raise ConfigError(f"[simulate] {exc}") from None

    def to_text(self, sections: Iterable[str] | None = None) -> str:
        names = list(SCHEMA) if sections is None else list(sections)
        parts = []
        for name in names:
            schema = SCHEMA[name]
            values = self.section(name)
            parts.append(f"[{name}]")
            for k, key in schema.items():
                parts.append(f"{k} = {_format(key.kind, values[k])}")
            parts.append("")
        return "\n".join(parts)


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, ""), n)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    where = f"{source}: " if source else ""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       strict=True, empty_lines_in_values=False)
    try:
        parser.read_string(text, source=str(source) if source else "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"{where}{exc}") from None
    lines = _line_numbers(text)
    sections: dict[str, dict[str, Any]] = {}
    for name in parser.sections():
        if name in PASSIVE_SECTIONS:
            continue
        if name not in SCHEMA:
            raise ConfigError(f"{where}line {lines.get((name, ''), '?')}: unknown section [{name}]")
        schema = SCHEMA[name]
        out = {}
        for k, text_value in parser.items(name):
            line = lines.get((name, k), "?")
            if k not in schema:
                raise ConfigError(f"{where}line {line}: [{name}] unknown key {k!r}")
            try:
                out[k] = _parse(schema[k].kind, text_value, schema[k])
            except ValueError as exc:
                raise ConfigError(f"{where}line {line}: [{name}] {k}: {exc}") from None
        sections[name] = out
    cfg = RunConfig(sections, source)
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, path)
    resolve_paths(cfg, path.parent)
    return cfg


def resolve_paths(cfg: RunConfig, base: Path) -> None:
    """Make referenced files absolute and check that they exist."""
    fit = cfg.sections.get("fit")
    if not fit or not fit.get("curves"):
        return
    resolved = []
    for p in fit["curves"]:
        q = Path(p)
        if not q.is_absolute():
            q = (base / q).resolve()
        if not q.is_file():
            raise ConfigError(f"[fit] curves: file not found: {q}")
        resolved.append(str(q))
    fit["curves"] = tuple(resolved)


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> None:
    run = cfg.section("run")
    _check(run["threads"] >= 1, "[run] threads must be >= 1")
    _check(run["seed"] >= 0, "[run] seed must be >= 0")
    a = cfg.section("analytic")
    _check(0 < a["eta"] <= 1, "[analytic] eta must lie in (0, 1]")
    _check(a["alpha_r"] >= 0, "[analytic] alpha_r must be >= 0")
    _check(0 < a["stokes_rate_min_hz"] <= a["stokes_rate_max_hz"],
           "[analytic] need 0 < stokes_rate_min_hz <= stokes_rate_max_hz")
    _check(a["n_rates"] >= 2, "[analytic] n_rates must be >= 2")
    _check(len(a["q_b"]) == len(a["read_stokes_probs"]),
           "[analytic] q_b needs one value per read_stokes_probs entry")
    _check(len(a["q_a"]) in (1, len(a["read_stokes_probs"])),
           "[analytic] q_a needs one value or one per read setting")
    _check(all(n >= 1 for n in a["mode_count_modes"]), "[analytic] mode counts must be >= 1")
    s = cfg.section("simulate")
    _check(all(v >= 0 for v in s["write_amplitudes"] + s["read_amplitudes"]),
           "[simulate] amplitudes must be non-negative")
    _check(len(s["delays_ps"]) == len(set(s["delays_ps"])), "[simulate] delays_ps has duplicates")
    if "simulate" in cfg.sections:
        cfg.sim_config()
    c = cfg.section("counts")
    _check(c["n_reps"] >= 1, "[counts] n_reps must be >= 1")
    _check(c["bin_width_ns"] > 0 and c["analysis_bin_ns"] > 0, "[counts] bin widths must be positive")
    _check(c["n_side_peaks"] >= 2, "[counts] n_side_peaks must be >= 2")
    _check(0 <= c["crosstalk_p_as"] < 1, "[counts] crosstalk_p_as must lie in [0, 1)")
    f = cfg.section("fit")
    _check(f["sigma_ps"] > 0, "[fit] sigma_ps must be positive")
    _check(f["max_iter"] >= 1 and f["n_boot"] >= 2, "[fit] max_iter >= 1 and n_boot >= 2 required")


def default_config() -> RunConfig:
    return RunConfig({})
