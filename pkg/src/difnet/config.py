"""Run and scenario configuration: strict YAML with nearest-key suggestions.

A run is reproducible from (config file, seed): everything that influences
outputs lives either here or in the referenced scenario.  Unknown keys fail
fast with the closest valid key suggested.

Angles in config files are degrees and are converted to radians exactly
once, at load time: the first channel of an ``azimuth-speed`` sensor and
any jammer channel listed in ``angle_channels`` are treated as angular.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .distribution import InternodalTransform
from .noise import JammerSpec
from .scenarios import BUILTIN_SCENARIOS, DEG2RAD, Scenario, builtin_scenario
from .statespace import MotionModel, SensorMeasurementModel

__all__ = ["RunConfig", "TrainingOverrides", "ConfigError", "load_config", "resolve_scenario"]


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class TrainingOverrides:
    learning_rate: float = 1e-3
    batch_size: int = 20
    weight_decay: float = 1e-4
    epochs: int = 60
    scheduler: str = "fixed"
    lr_min: float = 1e-4
    lr_max: float = 1e-3
    lr_period: int = 20
    grad_clip: float = 100.0
    out_scale: float = 0.01
    width_factor: int = 2


@dataclass
class RunConfig:
    scenario: str = "linear-cv"
    seed: int = 0
    out: str = "runs/latest"
    methods: list = field(
        default_factory=lambda: ["centralized-exact", "dif-exact", "dif-inexact", "cumn"]
    )
    sigmas: list = field(
        default_factory=lambda: [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75]
    )
    bench_reps: int = 50
    threads: int = 1
    sigma: float | None = None
    noise_period: int | None = None
    plots: bool = False
    training: TrainingOverrides = field(default_factory=TrainingOverrides)


def _reject_unknown(data: dict, valid, context: str) -> None:
    for key in data:
        if key not in valid:
            suggestion = difflib.get_close_matches(str(key), list(valid), n=1)
            hint = f"; did you mean {suggestion[0]!r}?" if suggestion else ""
            raise ConfigError(f"unknown config key {context}{key!r}{hint}")


def _apply_runconfig(config: RunConfig, data: dict) -> None:
    valid = {f.name for f in fields(RunConfig)}
    _reject_unknown(data, valid, "")
    for key, value in data.items():
        if key == "training":
            if not isinstance(value, dict):
                raise ConfigError("'training' must be a mapping")
            _reject_unknown(value, {f.name for f in fields(TrainingOverrides)}, "training.")
            for k, v in value.items():
                setattr(config.training, k, v)
        elif key == "methods":
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            config.methods = [str(v) for v in value]
        elif key == "sigmas":
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            config.sigmas = [float(v) for v in value]
        else:
            setattr(config, key, value)


def load_config(path: str | Path | None) -> RunConfig:
    """Load a YAML run config; a missing path yields the defaults."""
    config = RunConfig()
    if path is None:
        return config
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _apply_runconfig(config, data)
    return config


def resolve_scenario(config: RunConfig) -> Scenario:
    """Scenario by builtin name or by YAML scenario-file path."""
    name = config.scenario
    if name in BUILTIN_SCENARIOS:
        scn = builtin_scenario(name, sigma=config.sigma)
    elif Path(name).exists():
        scn = load_scenario_file(name)
        if config.sigma is not None:
            scn = replace(scn, sigma=float(config.sigma))
    else:
        raise ConfigError(
            f"unknown scenario {name!r}; available: {', '.join(BUILTIN_SCENARIOS)} "
            "or a scenario YAML file path"
        )
    if config.noise_period is not None:
        scn = replace(scn, noise_period=int(config.noise_period))
    return scn


# ---------------------------------------------------------------------------
# Scenario files

_SCENARIO_KEYS = {
    "name", "motion", "steps", "x0", "init_mean", "init_cov", "init_cov_scale",
    "split_sizes", "inexact_q", "inexact_noise", "sigma", "noise_period",
    "sensors", "jammer",
}
_MOTION_KEYS = {"kind", "dt", "q", "omega"}
_SENSOR_KEYS = {
    "id", "kind", "selector_rows", "position", "noise_std", "transform_rows",
}
_JAMMER_KEYS = {"std", "angle_channels", "betas", "selector_rows"}


def _selector_from_rows(rows, m: int) -> np.ndarray:
    sel = np.zeros((len(rows), m))
    for r, c in enumerate(rows):
        sel[r, int(c)] = 1.0
    return sel


def load_scenario_file(path: str | Path) -> Scenario:
    """Build a Scenario from a YAML description (stds in SI units, angles in
    degrees; selector and transform matrices given as global-index rows)."""
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario file must be a mapping")
    _reject_unknown(data, _SCENARIO_KEYS, "")
    for required in ("motion", "x0", "init_mean", "sensors", "jammer"):
        if required not in data:
            raise ConfigError(f"{path}: missing required key {required!r}")

    motion_data = dict(data["motion"])
    _reject_unknown(motion_data, _MOTION_KEYS, "motion.")
    motion = MotionModel(
        kind=motion_data.get("kind", "constant-velocity"),
        dt=float(motion_data.get("dt", 1.0)),
        q=float(motion_data.get("q", 1.0)),
        omega=float(motion_data.get("omega", 0.0)),
    )
    x0 = np.asarray(data["x0"], dtype=float)
    m = x0.shape[0]
    init_mean = np.asarray(data["init_mean"], dtype=float)
    if "init_cov" in data:
        init_cov = np.asarray(data["init_cov"], dtype=float)
    else:
        init_cov = float(data.get("init_cov_scale", 1.0)) * np.eye(m)

    sensors = []
    transforms = []
    for entry in data["sensors"]:
        entry = dict(entry)
        _reject_unknown(entry, _SENSOR_KEYS, "sensors[].")
        sid = int(entry["id"])
        kind = entry["kind"]
        stds = [float(v) for v in entry["noise_std"]]
        if kind == "azimuth-speed":
            stds[0] = stds[0] * DEG2RAD
        noise = np.diag(np.square(stds))
        selector = None
        position = None
        if kind == "linear-selector":
            selector = _selector_from_rows(entry["selector_rows"], m)
        else:
            position = np.asarray(entry["position"], dtype=float)
        sensors.append(
            SensorMeasurementModel(
                sid, kind, noise, selector=selector, position=position
            )
        )
        transforms.append(
            InternodalTransform(sid, _selector_from_rows(entry["transform_rows"], m))
        )

    jam = dict(data["jammer"])
    _reject_unknown(jam, _JAMMER_KEYS, "jammer.")
    jam_std = [float(v) for v in jam["std"]]
    for ch in jam.get("angle_channels", []):
        jam_std[int(ch)] = jam_std[int(ch)] * DEG2RAD
    r0 = np.diag(np.square(jam_std))
    betas = {int(k): float(v) for k, v in jam["betas"].items()}
    selectors = {
        int(k): _selector_from_rows(rows, r0.shape[0])
        for k, rows in jam["selector_rows"].items()
    }
    jammer = JammerSpec(r0=r0, betas=betas, selectors=selectors)

    return Scenario(
        name=str(data.get("name", Path(path).stem)),
        motion=motion,
        sensors=sensors,
        transforms=transforms,
        jammer=jammer,
        x0=x0,
        init_mean=init_mean,
        init_cov=init_cov,
        steps=int(data.get("steps", 50)),
        inexact_q=float(data.get("inexact_q", 5.0)),
        inexact_noise=str(data.get("inexact_noise", "interpreted")),
        sigma=float(data.get("sigma", 0.0)),
        noise_period=int(data.get("noise_period", 50)),
        split_sizes=tuple(data.get("split_sizes", (100, 20, 40))),
    )
