"""Experiment configuration: strict YAML schema with defaults and invariant checks."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class Geometry:
    omega1: list = field(default_factory=lambda: [-1.0, 1.0])
    subdomain: dict = field(default_factory=lambda: {"lo": 0.3, "hi": 0.9, "delta": 0.3})
    observation: list = field(default_factory=lambda: [-0.9, -0.4])
    L2: float = math.pi


@dataclass
class Discretization:
    n_cells: int = 512
    dt: float = 1e-3
    N_max: int = 32
    n_y_quad: int = 256
    stride: int = 1


@dataclass
class Physics:
    gamma: float = 0.5
    s: float = 2.0
    m: float = 0.5
    M: float = 2.0
    L_b: float = 50.0
    margin_fraction: float = 0.05


@dataclass
class Protocol:
    T: float = 1.0
    T1: float = 0.2
    t1: float = 0.05
    K1: float = 1e-9
    N: int = 1
    scheme: str = "crank_nicolson"
    N_list: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    T1_sweep: list = field(default_factory=lambda: [0.2, 0.5, 1.0, 2.0])


@dataclass
class Coefficients:
    b: dict = field(default_factory=lambda: {"kind": "bump", "center": 0.6, "width": 0.15,
                                             "amplitude": 0.4})
    btilde: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})


@dataclass
class InitialData:
    # ``mode: null`` means the protocol's N; ``u0: null`` means the same datum as ``utilde0``
    utilde0: dict = field(default_factory=lambda: {"kind": "bump", "center": 0.6, "width": 0.25,
                                                   "amplitude": 1.0, "mode": None})
    u0: Any = None


@dataclass
class Ensemble:
    count: int = 50
    seed: int = 0
    noise: float = 0.01


@dataclass
class Eigen:
    n_min: int = 8
    n_max: int = 64
    n_cells: int = 4096


@dataclass
class Harnack:
    n_cells: int = 240
    dt: float = 2e-5
    count: int = 20


@dataclass
class Reconstruct:
    grids: list = field(default_factory=lambda: [256, 512, 1024])
    refine: int = 4
    dt: float = 1e-3
    eps_den: float = 1e-6
    # L-stable default: Crank-Nicolson leaves stiff grid modes undamped, and
    # those differ between the fine data grid and the coarse inversion grid
    scheme: str = "backward_euler"


@dataclass
class Output:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["json", "csv"])


@dataclass
class ExperimentConfig:
    geometry: Geometry = field(default_factory=Geometry)
    discretization: Discretization = field(default_factory=Discretization)
    physics: Physics = field(default_factory=Physics)
    protocol: Protocol = field(default_factory=Protocol)
    coefficients: Coefficients = field(default_factory=Coefficients)
    initial_data: InitialData = field(default_factory=InitialData)
    ensemble: Ensemble = field(default_factory=Ensemble)
    eigen: Eigen = field(default_factory=Eigen)
    harnack: Harnack = field(default_factory=Harnack)
    reconstruct: Reconstruct = field(default_factory=Reconstruct)
    output: Output = field(default_factory=Output)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_SECTION_CLASSES = {
    "geometry": Geometry, "discretization": Discretization, "physics": Physics,
    "protocol": Protocol, "coefficients": Coefficients, "initial_data": InitialData,
    "ensemble": Ensemble, "eigen": Eigen, "harnack": Harnack, "reconstruct": Reconstruct,
    "output": Output,
}


def _coerce(value, default, where: str, errors: list[str]):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f"{where}: expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            errors.append(f"{where}: expected an integer, got {value!r}")
            return default
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return default
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
            return default
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            errors.append(f"{where}: expected a list, got {value!r}")
            return default
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            errors.append(f"{where}: expected a mapping, got {value!r}")
            return default
        return value
    return value


def _build_section(name: str, raw, errors: list[str]):
    cls = _SECTION_CLASSES[name]
    obj = cls()
    if raw is None:
        return obj
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected a mapping")
        return obj
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            errors.append(f"{name}.{key}: unknown key")
    for key in known & set(raw):
        setattr(obj, key, _coerce(raw[key], getattr(obj, key), f"{name}.{key}", errors))
    return obj


def _profile_errors(where: str, spec, errors: list[str]) -> None:
    allowed = {"constant": {"kind", "value"},
               "bump": {"kind", "center", "width", "amplitude"},
               "table": {"kind", "points"}}
    if not isinstance(spec, dict) or spec.get("kind") not in allowed:
        errors.append(f"{where}: profile kind must be one of {sorted(allowed)}")
        return
    extra = set(spec) - allowed[spec["kind"]]
    if extra:
        errors.append(f"{where}: unknown key(s) {sorted(extra)}")


def _initial_errors(where: str, spec, errors: list[str]) -> None:
    allowed = {"bump": {"kind", "center", "width", "amplitude", "mode"},
               "sine": {"kind", "amplitude", "mode"},
               "zero": {"kind", "mode"}}
    if not isinstance(spec, dict) or spec.get("kind") not in allowed:
        errors.append(f"{where}: initial-data kind must be one of {sorted(allowed)}")
        return
    extra = set(spec) - allowed[spec["kind"]]
    if extra:
        errors.append(f"{where}: unknown key(s) {sorted(extra)}")


def validate(cfg: ExperimentConfig) -> list[str]:
    """Invariant violations of an assembled config (empty list when valid)."""
    errors: list[str] = []
    g, d, ph, pr = cfg.geometry, cfg.discretization, cfg.physics, cfg.protocol
    if not (0 < pr.t1 < pr.T1 < pr.T):
        errors.append(f"protocol ordering: need 0 < t1 < T1 < T, got t1={pr.t1}, T1={pr.T1}, T={pr.T}")
    if not 0.0 < ph.gamma <= 1.0:
        errors.append(f"gamma out of (0,1]: {ph.gamma}")
    if not ph.s > 0.5:
        errors.append(f"s must exceed 1/2: {ph.s}")
    if not (0.0 < ph.m <= 1.0 <= ph.M):
        errors.append(f"need 0 < m <= 1 <= M, got m={ph.m}, M={ph.M}")
    if ph.L_b <= 0:
        errors.append("physics.L_b must be positive")
    if not 0 < ph.margin_fraction < 0.5:
        errors.append("physics.margin_fraction must lie in (0, 0.5)")
    if pr.K1 <= 0:
        errors.append("protocol.K1 must be positive")
    if pr.scheme not in ("crank_nicolson", "backward_euler"):
        errors.append(f"protocol.scheme must be crank_nicolson or backward_euler, got {pr.scheme!r}")
    if cfg.reconstruct.scheme not in ("crank_nicolson", "backward_euler"):
        errors.append(f"reconstruct.scheme must be crank_nicolson or backward_euler, got {cfg.reconstruct.scheme!r}")
    if d.n_cells < 4:
        errors.append("discretization.n_cells must be >= 4")
    if d.dt <= 0:
        errors.append("discretization.dt must be positive")
    if d.stride < 1:
        errors.append("discretization.stride must be >= 1")
    if d.N_max < 1 or d.n_y_quad < 4 * d.N_max:
        errors.append(f"discretization: need N_max >= 1 and n_y_quad >= 4 N_max "
                      f"(got N_max={d.N_max}, n_y_quad={d.n_y_quad})")
    for n in [pr.N, *pr.N_list]:
        if not isinstance(n, int) or not 1 <= n <= d.N_max:
            errors.append(f"mode index {n!r} outside 1..N_max={d.N_max}")
    if not pr.N_list:
        errors.append("protocol.N_list is empty")
    if any(not isinstance(t, (int, float)) or t <= 0 for t in pr.T1_sweep):
        errors.append("protocol.T1_sweep entries must be positive numbers")
    if g.L2 <= 0:
        errors.append("geometry.L2 must be positive")
    try:
        a, b = (float(v) for v in g.omega1)
        sub = g.subdomain
        lo, hi, delta = float(sub["lo"]), float(sub["hi"]), float(sub["delta"])
        if set(sub) - {"lo", "hi", "delta"}:
            errors.append(f"geometry.subdomain: unknown key(s) {sorted(set(sub) - {'lo', 'hi', 'delta'})}")
        if not a < 0 < b:
            errors.append("geometry.omega1 must contain the origin")
        if not a < lo < hi < b:
            errors.append("geometry.subdomain must lie compactly inside omega1")
        if lo <= 0 <= hi or min(abs(lo), abs(hi)) < delta or delta <= 0:
            errors.append("geometry.subdomain must stay at distance >= delta > 0 from the origin")
        olo, ohi = (float(v) for v in g.observation)
        if not a <= olo < ohi <= b:
            errors.append("geometry.observation must be a nonempty interval inside omega1")
    except (KeyError, TypeError, ValueError):
        errors.append("geometry: omega1/observation must be [lo, hi] and subdomain {lo, hi, delta}")
    _profile_errors("coefficients.b", cfg.coefficients.b, errors)
    _profile_errors("coefficients.btilde", cfg.coefficients.btilde, errors)
    _initial_errors("initial_data.utilde0", cfg.initial_data.utilde0, errors)
    if cfg.initial_data.u0 is not None:
        _initial_errors("initial_data.u0", cfg.initial_data.u0, errors)
    e = cfg.ensemble
    if e.count < 1:
        errors.append("ensemble.count must be >= 1")
    if e.noise < 0:
        errors.append("ensemble.noise must be >= 0")
    if not 1 <= cfg.eigen.n_min <= cfg.eigen.n_max:
        errors.append("eigen: need 1 <= n_min <= n_max")
    if cfg.eigen.n_cells < 4 or cfg.harnack.n_cells < 4:
        errors.append("eigen/harnack n_cells must be >= 4")
    if cfg.harnack.dt <= 0 or cfg.harnack.count < 1:
        errors.append("harnack: dt must be positive and count >= 1")
    r = cfg.reconstruct
    if len(r.grids) < 2 or r.refine < 2 or r.dt <= 0 or r.eps_den <= 0:
        errors.append("reconstruct: need >= 2 grids, refine >= 2, dt > 0, eps_den > 0")
    bad_fmt = set(cfg.output.formats) - {"json", "csv"}
    if bad_fmt:
        errors.append(f"output.formats: unsupported {sorted(bad_fmt)}")
    if not errors:
        errors.extend(_class_m_errors(cfg))
    return errors


def _class_m_errors(cfg: ExperimentConfig) -> list[str]:
    """Try to build both coefficients on the configured grid."""
    from .grid import CoefficientError, SubdomainSpec, build_grid, make_coefficient

    errors = []
    g, ph = cfg.geometry, cfg.physics
    grid = build_grid(float(g.omega1[0]), float(g.omega1[1]), cfg.discretization.n_cells)
    sup = SubdomainSpec(**{k: float(v) for k, v in g.subdomain.items()})
    for name in ("b", "btilde"):
        try:
            make_coefficient(grid, sup, getattr(cfg.coefficients, name), ph.m, ph.M,
                             lipschitz=ph.L_b, margin_fraction=ph.margin_fraction)
        except (CoefficientError, ValueError, KeyError, TypeError) as exc:
            errors.append(f"coefficients.{name}: {exc}")
    return errors


def from_dict(raw: dict | None) -> ExperimentConfig:
    errors: list[str] = []
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(["config document must be a mapping"])
    cfg = ExperimentConfig()
    for key in raw:
        if key not in _SECTIONS:
            errors.append(f"{key}: unknown key")
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        errors.append(f"schema_version {raw['schema_version']!r} unsupported (expected {SCHEMA_VERSION})")
    for name in _SECTION_CLASSES:
        setattr(cfg, name, _build_section(name, raw.get(name), errors))
    # mistyped fields fell back to defaults above, so invariants can still be checked
    try:
        errors.extend(validate(cfg))
    except (TypeError, ValueError, KeyError) as exc:
        errors.append(f"validation aborted: {exc}")
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(source: str | Path | None) -> ExperimentConfig:
    """Parse a YAML file path or YAML text; ``None`` yields the defaults."""
    if source is None:
        return from_dict({})
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                     and source.strip().endswith((".yaml", ".yml"))):
        text = Path(source).read_text()
    else:
        text = source
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"malformed YAML: {exc}"]) from exc
    return from_dict(raw)
