"""Flat ``key=value`` run configuration.

Every parameter the CLI can touch is declared in :data:`KEYS` with a parser,
a default and a one-line description.  Config files hold one ``key=value``
per line; ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable


class ConfigError(ValueError):
    exit_code = 4


class UnknownKeyError(ConfigError):
    exit_code = 3

    def __init__(self, key):
        super().__init__(f"unknown config key: {key}")
        self.key = key


class MalformedValueError(ConfigError):
    exit_code = 4


def _int(lo=None):
    def parse(s):
        v = int(s)
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return parse


def _float(lo=None, strict=False):
    def parse(s):
        v = float(s)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        if lo is not None and (v <= lo if strict else v < lo):
            raise ValueError(f"must be {'>' if strict else '>='} {lo}")
        return v
    return parse


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _str(s):
    return s


def _action_theta(s):
    return s if s == "theta" else _float(0.0)(s)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str
    help: str


KEYS: dict[str, Key] = {
    # run
    "seed": Key(_int(0), "0", "seed for every random draw (numpy PCG64)"),
    "out_dir": Key(_str, "run", "directory for all outputs"),
    "video_path": Key(_str, "", "CVF1 clip to read instead of generating one"),
    "flow_path": Key(_str, "", "CFF1 flows to read instead of analytic ones"),
    "checkpoint_path": Key(_str, "", "CKP1 checkpoint to resume from / evaluate"),
    # video
    "H": Key(_int(8), "32", "retina height, px"),
    "W": Key(_int(8), "32", "retina width, px"),
    "T": Key(_int(1), "200", "number of source frames"),
    "motion": Key(_choice("rotation", "translation"), "rotation", "synthetic motion"),
    "pattern": Key(_choice("sinusoid", "gaussian-bumps"), "gaussian-bumps", "stimulus pattern"),
    "vx": Key(_float(), "1.0", "translation velocity x, px/frame"),
    "vy": Key(_float(), "0.0", "translation velocity y, px/frame"),
    "omega": Key(_float(), "0.05", "rotation rate, rad/frame"),
    "wavelength": Key(_float(0.0, strict=True), "16", "sinusoid wavelength, px"),
    "frame_period": Key(_float(0.0, strict=True), "0.04", "seconds per frame"),
    # schedules
    "blur_sigma0": Key(_float(0.0), "0", "initial blur, px"),
    "blur_tau": Key(_float(0.0, strict=True), "50", "blur decay constant, frames"),
    "blur_floor": Key(_float(0.0), "0.2", "blur below this is reported as 0, px"),
    "day_len": Key(_int(1), "100", "day span, frames"),
    "night_len": Key(_int(0), "0", "night span, frames (0 = no nights)"),
    "night_phase": Key(_int(0), "0", "offset of the day/night pattern, frames"),
    # features
    "n": Key(_int(1), "4", "number of filters"),
    "k": Key(_int(1), "5", "kernel size (odd)"),
    "activation": Key(_choice("tanh", "identity", "softplus"), "tanh", "feature nonlinearity"),
    "init_scale": Key(_float(0.0), "0.1", "initial parameters ~ U(-s, s)"),
    # potential
    "lambda_M": Key(_float(0.0), "1.0", "motion-invariance weight"),
    "lambda_R": Key(_float(0.0), "1e-3", "parameter norm weight"),
    "lambda_C": Key(_float(0.0), "0.1", "variance/decorrelation weight"),
    "variance_target": Key(_float(0.0, strict=True), "0.01", "target feature variance"),
    "md_scheme": Key(_choice("midpoint", "forward"), "midpoint", "material derivative gradient"),
    # integrator
    "mode": Key(_choice("second_order", "gradient_flow"), "second_order", "learning dynamics"),
    "integrator": Key(_choice("leapfrog", "euler"), "leapfrog", "second-order stepper"),
    "eta": Key(_float(0.0, strict=True), "0.05", "integration step, s"),
    "theta": Key(_float(0.0), "10", "dissipation, 1/s"),
    "steps_per_pair": Key(_int(1), "1", "integrator steps per frame pair"),
    "action_theta": Key(_action_theta, "theta", "exponent of the recorded action weight"),
    # flow estimation
    "flow_source": Key(_choice("analytic", "estimated"), "analytic", "flows written by gen-flow"),
    "hs_smoothness": Key(_float(0.0, strict=True), "0.1", "Horn-Schunck smoothness"),
    "hs_iters": Key(_int(1), "200", "Horn-Schunck sweeps"),
    # gradcheck
    "gc_trials": Key(_int(1), "10", "random instances"),
    "gc_size": Key(_int(3), "12", "frame side, px"),
    "gc_n": Key(_int(1), "2", "filters per instance"),
    "gc_k": Key(_int(1), "3", "kernel size per instance"),
    "gc_step": Key(_float(0.0, strict=True), "1e-6", "central difference step"),
    "gc_tol": Key(_float(0.0, strict=True), "1e-6", "max relative error allowed"),
    "gc_inject": Key(_choice("none", "motion", "regularization", "decorrelation"), "none",
                     "test hook: flip the sign of one analytic gradient"),
    # oracle test
    "oc_eta": Key(_float(0.0, strict=True), "1e-3", "step for the linear oracle"),
    "oc_t_end": Key(_float(0.0, strict=True), "10", "horizon, s"),
    "oc_tol": Key(_float(0.0, strict=True), "1e-4", "max abs error allowed"),
}


class RunConfig(dict):
    """Parsed configuration: ``cfg["eta"]`` etc.  ``raw`` keeps the source strings."""

    def __init__(self, raw: dict[str, str]):
        super().__init__()
        self.raw = dict(raw)
        for key, text in self.raw.items():
            if key not in KEYS:
                raise UnknownKeyError(key)
            try:
                self[key] = KEYS[key].parse(text.strip())
            except ValueError as exc:
                raise MalformedValueError(f"bad value for {key}: {text!r} ({exc})") from None
        if self["k"] % 2 == 0:
            raise MalformedValueError(f"bad value for k: {self['k']} (must be odd)")
        if self["gc_k"] % 2 == 0:
            raise MalformedValueError(f"bad value for gc_k: {self['gc_k']} (must be odd)")

    @property
    def action_theta(self) -> float:
        a = self["action_theta"]
        return self["theta"] if a == "theta" else a


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise MalformedValueError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    key = key.strip()
    if key not in KEYS:
        raise UnknownKeyError(key)
    return key, value.strip()


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                key, value = parse_assignment(line)
                out[key] = value
    return out


def resolve(file_path=None, overrides=()) -> RunConfig:
    """Defaults, then the config file, then ``--set`` overrides."""
    raw = {key: entry.default for key, entry in KEYS.items()}
    if file_path:
        raw.update(read_config_file(file_path))
    for item in overrides:
        key, value = parse_assignment(item)
        raw[key] = value
    return RunConfig(raw)


def dump(config: RunConfig) -> str:
    return "".join(f"{key}={config.raw[key]}\n" for key in KEYS)


def describe_keys() -> str:
    width = max(map(len, KEYS))
    lines = []
    for key, entry in KEYS.items():
        default = entry.default if entry.default else '""'
        lines.append(f"  {key:<{width}}  (default {default})  {entry.help}")
    return "\n".join(lines)
