"""TOML run configuration shared by all subcommands.

Every section maps onto one of the library dataclasses. Unknown sections or
keys are an error, so typos fail before anything runs. Example::

    [eval]
    align = "rigid"
    delta = 1.0

    [shape]
    a_max = 0.4

    [simulate]
    camera_orientation = 90
    seed = 7

    [simulate.reference]
    velocity = 1.0

    [simulate.sensor]
    position_std = 0.05
    dropout_windows = [[20.0, 2.0]]

    [filter]
    failure_limit = 30

    [camgeo]
    pitch = [0, 10, 30, 90]
    fps = [30, 60, 90]
"""

import dataclasses
import json
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from vioflight.alignment import resolve_mode
from vioflight.estimation import FilterConfig
from vioflight.shaping import DEFAULT_MAX_ITER, MotionConstraints
from vioflight.simulation import (
    CAMERA_ORIENTATIONS,
    ConfigError,
    ControllerGains,
    PlantLimits,
    ReferenceSpec,
    SimConfig,
    VioSensorModel,
)


@dataclass(frozen=True)
class EvalOptions:
    align: str = "rigid"
    delta: float = 1.0
    lateral_only: bool = True
    max_dt: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "align", resolve_mode(self.align))
        if not self.delta > 0 or not self.max_dt > 0:
            raise ConfigError("delta and max_dt must be positive")


@dataclass(frozen=True)
class ShapeOptions:
    constraints: MotionConstraints = field(default_factory=MotionConstraints)
    max_iter: int = DEFAULT_MAX_ITER


@dataclass(frozen=True)
class GridOptions:
    velocities: tuple = (1.0, 2.0, 5.0)
    orientations: tuple = (0, 90)

    def __post_init__(self):
        bad = [o for o in self.orientations if o not in CAMERA_ORIENTATIONS]
        if bad:
            raise ConfigError(f"grid orientations {bad} not in {CAMERA_ORIENTATIONS}")
        if any(not v > 0 for v in self.velocities):
            raise ConfigError("grid velocities must be positive")


@dataclass(frozen=True)
class CamgeoOptions:
    pitch: tuple = (0.0, 10.0, 30.0, 90.0)
    fps: tuple = (30.0, 60.0, 90.0)
    velocity: tuple = (5.0,)
    altitude: float = 3.0
    yaw_rate: float = 0.0
    hfov: float = 91.2
    vfov: float = None
    width: int = 640
    height: int = 360


@dataclass(frozen=True)
class RunConfig:
    eval: EvalOptions = field(default_factory=EvalOptions)
    shape: ShapeOptions = field(default_factory=ShapeOptions)
    simulate: SimConfig = field(default_factory=SimConfig)
    grid: GridOptions = field(default_factory=GridOptions)
    camgeo: CamgeoOptions = field(default_factory=CamgeoOptions)


def _build(cls, data, where, nested=None):
    """Instantiate ``cls`` from a mapping, rejecting unknown keys."""
    nested = nested or {}
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names - set(nested))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in nested:
            continue
        kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value) if isinstance(value, list) else value
    for key, builder in nested.items():
        if key in data:
            kwargs[key] = builder(data[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_config(data):
    """Build a :class:`RunConfig` from an already-parsed TOML mapping."""
    allowed = {"eval", "shape", "simulate", "filter", "camgeo"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")

    eval_opts = _build(EvalOptions, data.get("eval", {}), "eval")

    shape = dict(data.get("shape", {}))
    max_iter = shape.pop("max_iter", DEFAULT_MAX_ITER)
    if not isinstance(max_iter, int) or max_iter < 1:
        raise ConfigError("[shape] max_iter must be a positive integer")
    shape_opts = ShapeOptions(_build(MotionConstraints, shape, "shape"), max_iter)

    filt = _build(FilterConfig, data.get("filter", {}), "filter")

    sim = dict(data.get("simulate", {}))
    grid = _build(GridOptions, sim.pop("grid", {}), "simulate.grid")
    sim_cfg = _build(
        SimConfig,
        sim,
        "simulate",
        nested={
            "reference": lambda d, w: _build(ReferenceSpec, d, w),
            "plant": lambda d, w: _build(PlantLimits, d, w),
            "gains": lambda d, w: _build(ControllerGains, d, w),
            "sensor": lambda d, w: _build(VioSensorModel, d, w),
        },
    )
    sim_cfg = dataclasses.replace(sim_cfg, filter=filt)

    camgeo = _build(CamgeoOptions, data.get("camgeo", {}), "camgeo")
    return RunConfig(eval=eval_opts, shape=shape_opts, simulate=sim_cfg, grid=grid, camgeo=camgeo)


def load_config(path=None):
    """Read a TOML file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def dump_resolved(cfg):
    return json.dumps(to_jsonable(cfg), indent=2, sort_keys=True) + "\n"
