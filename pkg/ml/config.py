"""
DriveLens Configuration Module
Key-value config file parsed with python-dotenv, DRIVELENS_* environment overrides
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values

from .errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "DRIVELENS_"


@dataclass(frozen=True)
class ManeuverConfig:
    """Numeric gates of the accelerometer and GPS detectors"""
    prominence: float = 0.1
    ay_gate: float = 0.3
    baseline: float = 0.2
    move_gate: float = 0.5
    stop_threshold: float = 0.1
    az_band: float = 1.0
    gravity_gate: float = 4.9
    opposite_ratio: float = 0.5
    peak_span_seconds: float = 2.0
    edge_seconds: float = 1.0
    slip_min_seconds: float = 0.5
    slip_max_seconds: float = 2.0
    slip_baseline_seconds: float = 0.25
    jerk_floor: float = 10.0
    turn_floor_deg: float = 1.0


@dataclass(frozen=True)
class SpatialConfig:
    min_confidence: float = 0.5
    min_area: float = 10000.0
    left_ratio: float = 0.2
    right_ratio: float = 0.2
    speed_threshold: float = 2.0
    distance_threshold: float = 10.0
    iou_threshold: float = 0.3


@dataclass(frozen=True)
class SomConfig:
    rows: int = 7
    cols: int = 21
    epochs: int = 500
    alpha0: float = 0.5
    radius0: Optional[float] = field(default=None, metadata={"type": float})
    grid_windows: int = 8
    grid_policy: str = "pad"
    min_weight: float = 0.5
    active_only: bool = True

    @property
    def initial_radius(self) -> float:
        if self.radius0 is not None:
            return self.radius0
        return max(self.rows, self.cols) / 2


@dataclass(frozen=True)
class ExplainConfig:
    corpus_path: Optional[str] = field(default=None, metadata={"type": str})
    lexicon_path: Optional[str] = field(default=None, metadata={"type": str})


@dataclass(frozen=True)
class EvalConfig:
    vote_threshold: float = 0.6
    k: int = 5


@dataclass(frozen=True)
class DriveLensConfig:
    """Complete configuration tree with the documented defaults"""
    delta_seconds: float = 5.0
    imu_rate_hz: float = 30.0
    lowpass_cutoff_hz: float = 5.0
    epsilon: float = 1.0
    topk: int = 5
    seed: int = 42
    scorer: str = "rules"
    causal_cutoff: float = 0.5
    maneuver: ManeuverConfig = field(default_factory=ManeuverConfig)
    spatial: SpatialConfig = field(default_factory=SpatialConfig)
    som: SomConfig = field(default_factory=SomConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


SECTIONS = ("maneuver", "spatial", "som", "explain", "eval")


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, f: dataclasses.Field, raw: str) -> Any:
    target = f.metadata.get("type") or type(f.default)
    try:
        if target is bool:
            return _to_bool(raw)
        if target is int:
            return int(raw)
        if target is float:
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for '{key}': {e}") from e


def known_keys() -> Dict[str, dataclasses.Field]:
    """All dotted keys accepted by the config file"""
    keys: Dict[str, dataclasses.Field] = {}
    for f in dataclasses.fields(DriveLensConfig):
        if f.name in SECTIONS:
            section_cls = type(getattr(DriveLensConfig(), f.name))
            for sub in dataclasses.fields(section_cls):
                keys[f"{f.name}.{sub.name}"] = sub
        else:
            keys[f.name] = f
    return keys


def env_name(key: str) -> str:
    """maneuver.ay_gate -> DRIVELENS_MANEUVER__AY_GATE"""
    return ENV_PREFIX + key.upper().replace(".", "__")


def config_from_mapping(values: Mapping[str, Optional[str]]) -> DriveLensConfig:
    """Build a config from dotted string values, unknown keys are ignored with a warning"""
    keys = known_keys()
    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}

    for key, raw in values.items():
        if key not in keys:
            logger.warning("Ignoring unknown config key '%s'", key)
            continue
        if raw is None or raw == "":
            continue
        value = _convert(key, keys[key], raw)
        if "." in key:
            section, name = key.split(".", 1)
            sections[section][name] = value
        else:
            top[key] = value

    base = DriveLensConfig()
    for section, overrides in sections.items():
        if overrides:
            top[section] = dataclasses.replace(getattr(base, section), **overrides)
    return dataclasses.replace(base, **top)


def load_config(path: Optional[str] = None,
                environ: Optional[Mapping[str, str]] = None) -> DriveLensConfig:
    """
    Load the key-value config file (if any) and apply DRIVELENS_* overrides.

    The file uses dotenv syntax: `key=value` lines with `#` comments.
    """
    values: Dict[str, Optional[str]] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        values.update(dotenv_values(path))

    environ = os.environ if environ is None else environ
    for key in known_keys():
        name = env_name(key)
        if name in environ:
            values[key] = environ[name]

    config = config_from_mapping(values)
    logger.debug("Loaded configuration: %s", config)
    return config
