"""Flat ``section.key = value`` run configurations.

One plain-text format for every scenario: `#` starts a comment, blank lines
are ignored, later assignments win, and everything is SI. A scenario kind
selects the geometry and fills in defaults; any key can then be overridden
in the file or from the command line.
"""

import math
from dataclasses import dataclass, field


class ConfigError(Exception):
    """Invalid configuration; carries the source line when one applies."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def parse_flat(text):
    """Parse `section.key = value` lines into {key: (value, line number)}."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {raw.strip()!r}",
                              line=ln)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or "." not in key:
            raise ConfigError(f"keys have the form 'section.key', got {key!r}", line=ln)
        if not value:
            raise ConfigError(f"empty value for {key!r}", line=ln)
        out[key] = (value, ln)
    return out


@dataclass
class SolverConfig:
    """Solver controls exposed as the `time.*` and `newton.*` config keys."""

    dt_initial: float = 1.0
    dt_max: float = 1.0e6
    t_end: float = 1000.0
    growth: float = 1.5
    backoff: float = 0.5
    stationary_tol: float = 1.0e-12
    snapshots: tuple = ()
    abs_tol: float = 1.0e-11
    rel_tol: float = 1.0e-8
    max_iter: int = 15
    fd_epsilon: float = 1.0e-8
    max_halvings: int = 4

    def validate(self):
        if self.dt_initial <= 0.0 or self.dt_max <= 0.0:
            raise ConfigError("time steps must be positive")
        if self.t_end < 0.0:
            raise ConfigError("time.t_end must be non-negative")
        if self.growth <= 1.0:
            raise ConfigError("time.growth must exceed 1")
        if not 0.0 < self.backoff < 1.0:
            raise ConfigError("time.backoff must lie in (0, 1)")
        if min(self.abs_tol, self.rel_tol, self.fd_epsilon) <= 0.0:
            raise ConfigError("newton tolerances must be positive")
        if self.max_iter < 1 or self.max_halvings < 0:
            raise ConfigError("newton iteration limits out of range")
        for s in self.snapshots:
            if not 0.0 < s <= self.t_end:
                raise ConfigError(f"snapshot time {s:g} outside (0, t_end]")

    def newton_kw(self):
        return {"abs_tol": self.abs_tol, "rel_tol": self.rel_tol,
                "max_iter": self.max_iter, "fd_eps": self.fd_epsilon,
                "max_halvings": self.max_halvings}


@dataclass
class ScenarioConfig:
    kind: str = ""
    domain: tuple = ()
    pm_box: tuple = ()
    ff_nx: int = 0
    ff_ny: int = 0
    pm_nx: int = 8
    pm_ny: int = 8
    pm_triangulated: bool = False
    pm_nodes_file: str = ""
    pm_elements_file: str = ""
    fluid_kind: str = "ideal_gas_air"
    temperature: float = 293.15
    molar_mass: float = 0.02896
    viscosity: float = 1.8e-5
    reference_density: float = 1.2
    scheme: str = "mpfa"
    xi: float = 0.5
    perm_k: float = math.nan
    perm_beta: float = 1.0
    perm_alpha_degrees: float = 0.0
    alpha_bf: float = 1.0
    p_left: float = math.nan
    p_right: float = 1.0e5
    p_ref: float = 1.0e5
    solver: SolverConfig = field(default_factory=SolverConfig)
    out_dir: str = ""
    out_interval: int = 1
    out_p_ref: float = 1.0e5
    cut_x: float = 0.5
    cut_y0: float = 0.2
    cut_y1: float = 0.25

    def fluid_parameters(self):
        if self.fluid_kind == "constant":
            return {"density": self.reference_density, "viscosity": self.viscosity}
        return {"temperature": self.temperature, "molar_mass": self.molar_mass,
                "viscosity": self.viscosity}


# geometry and per-kind defaults; resolutions keep the 2:1 interface pairing
_KINDS = {
    "testcase1": {
        "domain": (0.0, 0.0, 1.0, 0.25), "pm_box": (0.4, 0.0, 0.6, 0.2),
        "ff_nx": 80, "ff_ny": 20, "p_left": 1.0e5 + 1.0e-6,
        "perm_beta": 10.0, "out_dir": "out_testcase1",
    },
    "testcase2": {
        "domain": (0.0, 0.0, 2.5, 0.25), "pm_box": (0.4, 0.0, 0.6, 0.2),
        "ff_nx": 200, "ff_ny": 20, "p_left": 1.0e5 + 2.0e-3,
        "perm_beta": 100.0, "out_dir": "out_testcase2",
        "snapshots": (20.0, 40.0, 80.0, 200.0, 1000.0),
    },
    "testcase3": {
        "domain": (0.0, 0.0, 1.0, 0.25), "pm_box": (0.4, 0.0, 0.6, 0.2),
        "ff_nx": 80, "ff_ny": 20, "p_left": 1.0e5 + 1.0e-6,
        "perm_beta": 10.0, "perm_alpha_degrees": 45.0,
        "pm_triangulated": True, "out_dir": "out_testcase3",
    },
}


def _float(v):
    try:
        return float(v)
    except ValueError:
        raise ConfigError(f"expected a number, got {v!r}") from None


def _pos(v):
    x = _float(v)
    if x <= 0.0:
        raise ConfigError(f"expected a positive number, got {v!r}")
    return x


def _int(v):
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"expected an integer, got {v!r}") from None


def _posint(v):
    x = _int(v)
    if x < 1:
        raise ConfigError(f"expected a positive integer, got {v!r}")
    return x


def _choice(*allowed):
    def conv(v):
        if v not in allowed:
            raise ConfigError(f"expected one of {', '.join(allowed)}, got {v!r}")
        return v
    return conv


def _floats(v):
    parts = v.replace(",", " ").split()
    return tuple(_float(p) for p in parts)


def _set(attr, conv):
    def apply(cfg, v):
        setattr(cfg, attr, conv(v))
    return apply


def _set_solver(attr, conv):
    def apply(cfg, v):
        setattr(cfg.solver, attr, conv(v))
    return apply


_KEYS = {
    "scenario.kind": _set("kind", _choice(*_KINDS)),
    "scenario.p_ref": _set("p_ref", _float),
    "freeflow.nx": _set("ff_nx", _posint),
    "freeflow.ny": _set("ff_ny", _posint),
    "pm.nx": _set("pm_nx", _posint),
    "pm.ny": _set("pm_ny", _posint),
    "pm.nodes_file": _set("pm_nodes_file", str),
    "pm.elements_file": _set("pm_elements_file", str),
    "fluid.kind": _set("fluid_kind", _choice("ideal_gas_air", "constant")),
    "fluid.temperature": _set("temperature", _pos),
    "fluid.molar_mass": _set("molar_mass", _pos),
    "fluid.viscosity": _set("viscosity", _pos),
    "fluid.reference_density": _set("reference_density", _pos),
    "darcy.scheme": _set("scheme", _choice("mpfa", "tpfa")),
    "darcy.xi": _set("xi", _float),
    "perm.k": _set("perm_k", _pos),
    "perm.beta": _set("perm_beta", _float),
    "perm.alpha_degrees": _set("perm_alpha_degrees", _float),
    "coupling.alpha_bf": _set("alpha_bf", _pos),
    "bc.left.pressure": _set("p_left", _pos),
    "bc.right.pressure": _set("p_right", _pos),
    "bc.walls": lambda cfg, v: _choice("noslip")(v),
    "time.dt_initial": _set_solver("dt_initial", _pos),
    "time.dt_max": _set_solver("dt_max", _pos),
    "time.t_end": _set_solver("t_end", _float),
    "time.growth": _set_solver("growth", _float),
    "time.backoff": _set_solver("backoff", _float),
    "time.stationary_tol": _set_solver("stationary_tol", _pos),
    "time.snapshots": _set_solver("snapshots", _floats),
    "newton.abs_tol": _set_solver("abs_tol", _pos),
    "newton.rel_tol": _set_solver("rel_tol", _pos),
    "newton.max_iter": _set_solver("max_iter", _posint),
    "newton.fd_epsilon": _set_solver("fd_epsilon", _pos),
    "newton.max_halvings": _set_solver("max_halvings", _int),
    "output.directory": _set("out_dir", str),
    "output.interval": _set("out_interval", _int),
    "output.p_ref": _set("out_p_ref", _float),
    "observer.cut_x": _set("cut_x", _float),
    "observer.cut_y0": _set("cut_y0", _float),
    "observer.cut_y1": _set("cut_y1", _float),
}


def load_scenario(text, overrides=()):
    """Build a validated ScenarioConfig from config text plus CLI overrides.

    `overrides` are `key=value` strings applied after the file, so a single
    committed config drives whole parameter studies.
    """
    entries = parse_flat(text)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, value = ov.split("=", 1)
        entries[key.strip()] = (value.strip(), None)

    if "scenario.kind" not in entries:
        raise ConfigError("missing required key: scenario.kind")
    kind_raw, kind_line = entries["scenario.kind"]

    cfg = ScenarioConfig()
    try:
        _KEYS["scenario.kind"](cfg, kind_raw)
    except ConfigError as exc:
        raise ConfigError(str(exc), line=kind_line) from None
    for attr, value in _KINDS[cfg.kind].items():
        if attr == "snapshots":
            cfg.solver.snapshots = value
        else:
            setattr(cfg, attr, value)

    for key, (value, line) in entries.items():
        if key == "scenario.kind":
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", line=line)
        try:
            _KEYS[key](cfg, value)
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}", line=line) from None

    _validate(cfg)
    return cfg


def load_scenario_file(path, overrides=()):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return load_scenario(text, overrides)


def _validate(cfg):
    if math.isnan(cfg.perm_k):
        raise ConfigError("missing required key: perm.k")
    if cfg.perm_beta < 1.0:
        raise ConfigError("perm.beta must be at least 1")
    if not 0.0 <= cfg.xi <= 1.0:
        raise ConfigError("darcy.xi must lie in [0, 1]")
    if math.isnan(cfg.p_left):
        raise ConfigError("missing required key: bc.left.pressure")
    if bool(cfg.pm_nodes_file) != bool(cfg.pm_elements_file):
        raise ConfigError("pm.nodes_file and pm.elements_file come as a pair")
    if cfg.pm_nodes_file and not cfg.pm_triangulated:
        raise ConfigError("triangle mesh files only apply to the triangulated scenario")
    if cfg.out_interval < 0:
        raise ConfigError("output.interval must be non-negative")
    if not cfg.cut_y1 > cfg.cut_y0:
        raise ConfigError("observer cut line needs cut_y1 > cut_y0")
    cfg.solver.validate()
