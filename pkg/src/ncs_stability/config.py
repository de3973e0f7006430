"""Toolkit configuration: one JSON file, strict keys, documented defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

REQUIRED = object()

# section -> key -> (default, help); REQUIRED marks keys without default
SCHEMA = {
    "robot": {
        "m1": (REQUIRED, "mass of link 1 [kg]"),
        "m2": (REQUIRED, "mass of link 2 [kg]"),
        "a1": (REQUIRED, "length of link 1 [m]"),
        "a2": (REQUIRED, "length of link 2 [m]"),
        "g": (9.8, "gravity [m/s^2]"),
        "alpha1": (2.55, "velocity gain of joint-1 error dynamics [1/s]"),
        "alpha2": (2.55, "velocity gain of joint-2 error dynamics [1/s]"),
        "beta1": (3.16, "position gain of joint-1 error dynamics [1/s^2]"),
        "beta2": (3.16, "position gain of joint-2 error dynamics [1/s^2]"),
        "qd1": (0.0, "joint-1 setpoint [rad]"),
        "qd2": (0.0, "joint-2 setpoint [rad]"),
        "n2_form": ("linear", "velocity term of N2: 'linear' (dq1 sin q2) or 'coriolis' (dq1^2 sin q2)"),
    },
    "domain": {
        "position_halfwidth": (0.5, "half-width of joint-angle intervals around the setpoints [rad]"),
        "velocity_halfwidth": (0.5, "half-width of joint-velocity intervals around zero [rad/s]"),
    },
    "solver": {
        "max_iterations": (20000, "Newton-step budget per solve"),
        "margin_tolerance": (1e-7, "margin below which a verdict is not called feasible"),
        "variable_bound": (1e6, "box bound |x_i| on decision scalars"),
        "seed": (42, "seed of the solver's initial point"),
    },
    "analysis": {
        "T": (0.79e-3, "control cycle probed by analyze / export-sdpa [s]"),
        "r_override": (None, "use this delay bound r_k for every channel instead of 2T [s]"),
        "t_lo": (1e-4, "bound search: lower bracket [s]"),
        "t_hi": (5e-3, "bound search: upper bracket [s]"),
        "tol": (1e-5, "bound search: bracket width at termination [s]"),
        "w_transpose": (True, "coupling block uses -W^T M_k (true) or -W M_k (false)"),
        "bounds_source": ("fixture", "F, W, S from shipped 'fixture' files or 'synthesize'd"),
        "mk_source": ("fixture", "M_k from shipped 'fixture' files or 'estimate'd on the domain"),
        "fixture_dir": (None, "directory with F.txt, W.txt, S.txt, M1..M4.txt (default: shipped)"),
        "mk_samples": (20000, "random samples per (channel, column) for M_k estimation"),
        "mk_seed": (0, "seed of M_k estimation"),
        "mk_margin": (1.05, "safety factor applied to sampled M_k suprema"),
        "verify_samples": (5000, "samples for verify-assumptions"),
        "verify_seed": (0, "seed of verify-assumptions"),
    },
    "scenario": {
        "control_cycle_T": (0.5e-3, "control cycle bound T [s]"),
        "transmission_delay_max": (0.125e-3, "per-link transport delay bound [s]"),
        "sampling_bound_h": (None, "sampling interval bound h [s] (default: T)"),
        "max_successive_losses": (0, "max consecutive packet drops per link"),
        "loss_probability": (0.0, "per-packet drop probability"),
        "cycle_jitter": (0.2, "cycle lengths are drawn in [(1 - jitter) h, h]"),
        "seeds": ([0], "network seeds; one simulation per seed"),
        "horizon": (20.0, "simulated time [s]"),
        "dt": (1e-5, "integration step [s]"),
        "initial_error": ([0.3, 0.0, 0.3, 0.0], "initial state minus equilibrium"),
        "enforce_2T": (True, "reject scenarios whose delay bound exceeds 2T"),
        "csv_stride": (100, "write every n-th grid point to trajectory.csv"),
    },
    "output_dir": ("ncs_out", "directory receiving artifacts (overridden by --out)"),
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass
class ToolkitConfig:
    robot: dict
    domain: dict
    solver: dict
    analysis: dict
    scenario: dict
    output_dir: str
    source: str | None = None

    def as_dict(self) -> dict:
        return {
            "robot": dict(self.robot),
            "domain": dict(self.domain),
            "solver": dict(self.solver),
            "analysis": dict(self.analysis),
            "scenario": dict(self.scenario),
            "output_dir": self.output_dir,
        }


def defaults_help() -> str:
    lines = ["configuration keys (JSON) and defaults:"]
    for section, keys in SCHEMA.items():
        if isinstance(keys, tuple):
            lines.append(f"  {section} = {json.dumps(keys[0])}  {keys[1]}")
            continue
        for key, (default, text) in keys.items():
            shown = "(required)" if default is REQUIRED else json.dumps(default)
            lines.append(f"  {section}.{key} = {shown}  {text}")
    return "\n".join(lines)


def _number(key, value, *, positive=False, nonneg=False, integer=False, unit=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(key, f"must be > 0, got {value!r}")
    if nonneg and not value >= 0:
        raise ConfigError(key, f"must be >= 0, got {value!r}")
    if unit and not 0 <= value <= 1:
        raise ConfigError(key, f"out of range [0, 1]: {value!r}")


def _validate(cfg: dict) -> None:
    r, d, s, a, sc = cfg["robot"], cfg["domain"], cfg["solver"], cfg["analysis"], cfg["scenario"]
    for k in ("m1", "m2", "a1", "a2", "alpha1", "alpha2", "beta1", "beta2"):
        _number(f"robot.{k}", r[k], positive=True)
    for k in ("g", "qd1", "qd2"):
        _number(f"robot.{k}", r[k])
    if r["n2_form"] not in ("linear", "coriolis"):
        raise ConfigError("robot.n2_form", f"must be 'linear' or 'coriolis', got {r['n2_form']!r}")
    for k in d:
        _number(f"domain.{k}", d[k], positive=True)
    _number("solver.max_iterations", s["max_iterations"], positive=True, integer=True)
    _number("solver.margin_tolerance", s["margin_tolerance"], positive=True)
    _number("solver.variable_bound", s["variable_bound"], positive=True)
    _number("solver.seed", s["seed"], integer=True)
    for k in ("T", "t_lo", "t_hi", "tol"):
        _number(f"analysis.{k}", a[k], positive=True)
    if a["t_lo"] >= a["t_hi"]:
        raise ConfigError("analysis.t_lo", "must be below analysis.t_hi")
    if a["r_override"] is not None:
        _number("analysis.r_override", a["r_override"], nonneg=True)
    if not isinstance(a["w_transpose"], bool):
        raise ConfigError("analysis.w_transpose", "expected true or false")
    for k, options in (("bounds_source", ("fixture", "synthesize")), ("mk_source", ("fixture", "estimate"))):
        if a[k] not in options:
            raise ConfigError(f"analysis.{k}", f"must be one of {options}, got {a[k]!r}")
    if a["fixture_dir"] is not None and not Path(a["fixture_dir"]).is_dir():
        raise ConfigError("analysis.fixture_dir", f"directory not found: {a['fixture_dir']}")
    for k in ("mk_samples", "verify_samples"):
        _number(f"analysis.{k}", a[k], positive=True, integer=True)
    for k in ("mk_seed", "verify_seed"):
        _number(f"analysis.{k}", a[k], integer=True)
    _number("analysis.mk_margin", a["mk_margin"])
    if a["mk_margin"] < 1:
        raise ConfigError("analysis.mk_margin", "must be >= 1")
    for k in ("control_cycle_T", "horizon", "dt"):
        _number(f"scenario.{k}", sc[k], positive=True)
    _number("scenario.transmission_delay_max", sc["transmission_delay_max"], nonneg=True)
    if sc["sampling_bound_h"] is not None:
        _number("scenario.sampling_bound_h", sc["sampling_bound_h"], positive=True)
    _number("scenario.max_successive_losses", sc["max_successive_losses"], nonneg=True, integer=True)
    _number("scenario.loss_probability", sc["loss_probability"], unit=True)
    _number("scenario.cycle_jitter", sc["cycle_jitter"], nonneg=True)
    if sc["cycle_jitter"] >= 1:
        raise ConfigError("scenario.cycle_jitter", "must be < 1")
    if not isinstance(sc["seeds"], list) or not sc["seeds"]:
        raise ConfigError("scenario.seeds", "expected a non-empty list of integers")
    for v in sc["seeds"]:
        _number("scenario.seeds", v, integer=True)
    if not isinstance(sc["initial_error"], list) or len(sc["initial_error"]) != 4:
        raise ConfigError("scenario.initial_error", "expected a list of 4 numbers")
    for v in sc["initial_error"]:
        _number("scenario.initial_error", v)
    _number("scenario.csv_stride", sc["csv_stride"], positive=True, integer=True)
    if not isinstance(sc["enforce_2T"], bool):
        raise ConfigError("scenario.enforce_2T", "expected true or false")


def build_config(raw: dict, source: str | None = None) -> ToolkitConfig:
    """Apply defaults, reject unknown keys and range-check every field."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    out = {}
    for section, keys in SCHEMA.items():
        if isinstance(keys, tuple):
            out[section] = raw.get(section, keys[0])
            continue
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(section, "expected an object")
        for key in given:
            if key not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key")
        merged = {}
        for key, (default, _) in keys.items():
            if key in given:
                merged[key] = given[key]
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{key}", "missing required key")
            else:
                merged[key] = copy.deepcopy(default)
        out[section] = merged
    if not isinstance(out["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    _validate(out)
    return ToolkitConfig(**out, source=source)


def apply_override(raw: dict, assignment: str) -> None:
    """Apply ``section.key=value`` to the raw config (value parsed as JSON, else kept as text)."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like section.key=value")
    path, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    parts = path.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(path, "cannot override inside a non-object")
    node[parts[-1]] = value


def load_config(path, overrides=()) -> ToolkitConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"malformed JSON: {exc}") from None
    for item in overrides:
        apply_override(raw, item)
    return build_config(raw, source=str(p))
