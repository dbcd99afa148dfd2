"""Experiment configuration: one INI file drives every CLI subcommand.

Sections:
  [plant]           surrogate preset plus optional overrides
  [excitation]      PRBS register, clock, length, per-channel amplitudes
  [identification]  split fraction and the list of bank model ids
  [identification.<id>]  horizons and order policy per bank model
  [controller]      horizons, weights, constraint windows (absolute units)
  [multimodel]      sync mode and bank composition
  [run]             duration, seed, setpoint and disturbance schedules
  [output]          run directory (re-rooted by SIDMPC_OUTPUT_ROOT if set)

Schedules are multi-line values, one row per line: a time in seconds
followed by one value per channel.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .mpc import MpcConfig
from .plant import PlantConfig, make_default_fccu
from .runner import Schedule, parse_schedule
from .subspace import N4sidConfig

OUTPUT_ROOT_ENV = "SIDMPC_OUTPUT_ROOT"


@dataclass
class ExcitationConfig:
    register_length: int
    total_length: int
    amplitude: np.ndarray          # deviation half-range per input channel
    clock_period: int = 1
    seed: int = 1
    taps: Optional[tuple] = None


@dataclass
class ControllerSettings:
    """Controller section in absolute engineering units."""

    P: int
    M: int
    q_weights: np.ndarray
    r_weights: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None
    du_max: Optional[np.ndarray] = None
    single_model: Optional[str] = None


@dataclass
class RunSettings:
    duration: float
    seed: int = 0
    setpoints: Optional[Schedule] = None
    disturbances: Optional[Schedule] = None


@dataclass
class ExperimentConfig:
    plant: PlantConfig
    excitation: Optional[ExcitationConfig]
    split_fraction: float
    id_configs: dict                  # model id -> N4sidConfig, insertion order
    controller: Optional[ControllerSettings]
    sync_mode: str
    switch_threshold: float
    bank_ids: list
    run: Optional[RunSettings]
    output_dir: Path
    source_text: str = field(default="", repr=False)


def _section(cp: configparser.ConfigParser, name: str) -> configparser.SectionProxy:
    if not cp.has_section(name):
        raise ConfigError(f"missing required section [{name}]")
    return cp[name]


def _get(sec, key: str, cast, required: bool = True, default=None):
    if key not in sec:
        if required:
            raise ConfigError(f"[{sec.name}] is missing key '{key}'")
        return default
    raw = sec[key].strip()
    try:
        return cast(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r}: {exc}") from None


def _floats(raw: str) -> np.ndarray:
    return np.array([float(v) for v in raw.split()])


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.split())


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        text = path.read_text()
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    plant = _build_plant(cp)
    excitation = _build_excitation(cp, plant) if cp.has_section("excitation") else None

    split_fraction = 0.5
    id_configs: dict = {}
    if cp.has_section("identification"):
        ident = cp["identification"]
        split_fraction = _get(ident, "split_fraction", float,
                              required=False, default=0.5)
        model_ids = _get(ident, "models", lambda r: r.split(),
                         required=False, default=[])
        for mid in model_ids:
            id_configs[mid] = _build_n4sid(cp, mid)

    controller = _build_controller(cp, plant) if cp.has_section("controller") else None

    sync_mode = "kalman-only"
    switch_threshold = 0.0
    bank_ids: list = list(id_configs)
    if cp.has_section("multimodel"):
        mm = cp["multimodel"]
        sync_mode = _get(mm, "sync_mode", str, required=False,
                         default="kalman-only")
        switch_threshold = _get(mm, "switch_threshold", float,
                                required=False, default=0.0)
        bank_ids = _get(mm, "bank", lambda r: r.split(), required=False,
                        default=bank_ids)

    run = _build_run(cp, plant) if cp.has_section("run") else None

    out = _section(cp, "output")
    directory = _get(out, "directory", str)
    output_dir = resolve_output_dir(directory)

    return ExperimentConfig(
        plant=plant,
        excitation=excitation,
        split_fraction=split_fraction,
        id_configs=id_configs,
        controller=controller,
        sync_mode=sync_mode,
        switch_threshold=switch_threshold,
        bank_ids=bank_ids,
        run=run,
        output_dir=output_dir,
        source_text=text,
    )


def resolve_output_dir(directory: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    d = Path(directory)
    if root and not d.is_absolute():
        return Path(root) / d
    return d


def _build_plant(cp) -> PlantConfig:
    sec = _section(cp, "plant")
    preset = _get(sec, "preset", str, required=False, default="default-fccu")
    if preset != "default-fccu":
        raise ConfigError(f"[plant] unknown preset {preset!r}; "
                          "only 'default-fccu' is available")
    kwargs = {}
    if "blend_sharpness" in sec:
        kwargs["blend_sharpness"] = _get(sec, "blend_sharpness", float)
    if "disturbance_entry" in sec:
        kwargs["disturbance_entry"] = _get(sec, "disturbance_entry", str)
    cfg = make_default_fccu(**kwargs)
    if "noise_std" in sec:
        std = _get(sec, "noise_std", _floats)
        if std.shape[0] != cfg.p:
            raise ConfigError(f"[plant] noise_std needs {cfg.p} values")
        cfg.noise_std = std
    if "disturbance_gain" in sec:
        g = _get(sec, "disturbance_gain", _floats)
        rows = cfg.p if cfg.disturbance_entry == "output" else cfg.m
        if g.shape[0] != rows:
            raise ConfigError(f"[plant] disturbance_gain needs {rows} values")
        cfg.disturbance_gain = g[:, None]
    return cfg


def _build_excitation(cp, plant: PlantConfig) -> ExcitationConfig:
    sec = _section(cp, "excitation")
    amplitude = _get(sec, "amplitude", _floats)
    if amplitude.shape[0] != plant.m:
        raise ConfigError(
            f"[excitation] amplitude needs {plant.m} values (one per input)"
        )
    if np.any(amplitude <= 0):
        raise ConfigError("[excitation] amplitudes must be positive")
    return ExcitationConfig(
        register_length=_get(sec, "register_length", int),
        total_length=_get(sec, "total_length", int),
        amplitude=amplitude,
        clock_period=_get(sec, "clock_period", int, required=False, default=1),
        seed=_get(sec, "seed", int, required=False, default=1),
        taps=_get(sec, "taps", _ints, required=False, default=None),
    )


def _build_n4sid(cp, mid: str) -> N4sidConfig:
    name = f"identification.{mid}"
    sec = _section(cp, name)
    f = _get(sec, "f", int)
    p = _get(sec, "p", int)
    order = _get(sec, "order", int, required=False, default=None)
    omin = _get(sec, "order_min", int, required=False, default=None)
    omax = _get(sec, "order_max", int, required=False, default=None)
    if order is not None:
        if omin is not None or omax is not None:
            raise ConfigError(f"[{name}] give either order or order_min/order_max")
        return N4sidConfig(f=f, p=p, order=order)
    if omin is None or omax is None:
        raise ConfigError(f"[{name}] needs order, or both order_min and order_max")
    return N4sidConfig(f=f, p=p, order_range=(omin, omax))


def _build_controller(cp, plant: PlantConfig) -> ControllerSettings:
    sec = _section(cp, "controller")
    p, m = plant.p, plant.m

    def vec(key, count, required=True):
        v = _get(sec, key, _floats, required=required, default=None)
        if v is None:
            return None
        if v.shape[0] != count:
            raise ConfigError(f"[controller] {key} needs {count} values")
        return v

    return ControllerSettings(
        P=_get(sec, "prediction_horizon", int),
        M=_get(sec, "control_horizon", int),
        q_weights=vec("q_weights", p),
        r_weights=vec("r_weights", m),
        y_min=vec("y_min", p),
        y_max=vec("y_max", p),
        u_min=vec("u_min", m, required=False),
        u_max=vec("u_max", m, required=False),
        du_max=vec("du_max", m, required=False),
        single_model=_get(sec, "single_model", str, required=False, default=None),
    )


def _build_run(cp, plant: PlantConfig) -> RunSettings:
    sec = _section(cp, "run")
    duration = _get(sec, "duration", float)
    seed = _get(sec, "seed", int, required=False, default=0)
    sp_text = sec.get("setpoints", "")
    setpoints = parse_schedule(sp_text, plant.p, "[run] setpoints") if sp_text.strip() else None
    nd = 1 if plant.disturbance_gain is None else plant.disturbance_gain.shape[1]
    d_text = sec.get("disturbances", "")
    disturbances = parse_schedule(d_text, nd, "[run] disturbances") if d_text.strip() else None
    return RunSettings(duration=duration, seed=seed,
                       setpoints=setpoints, disturbances=disturbances)


def make_mpc_config(settings: ControllerSettings, plant: PlantConfig) -> MpcConfig:
    """Translate absolute controller settings into deviation units."""
    try:
        return MpcConfig(
            P=settings.P,
            M=settings.M,
            Q_weights=settings.q_weights,
            R_weights=settings.r_weights,
            y_min=settings.y_min - plant.y_ss,
            y_max=settings.y_max - plant.y_ss,
            u_min=None if settings.u_min is None else settings.u_min - plant.u_ss,
            u_max=None if settings.u_max is None else settings.u_max - plant.u_ss,
            du_max=settings.du_max,
            ts=plant.ts,
        )
    except ValueError as exc:
        raise ConfigError(f"[controller] {exc}") from None
