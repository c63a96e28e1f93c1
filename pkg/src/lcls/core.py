"""Shared domain types, units, and configuration validation.

Local frame convention: right-handed ENU with the origin at the sensor
optical center, z up, y true north, x east. Azimuth is the clockwise
angle from north (+y), in degrees. Gyro rates are deg/s, accelerations
are in units of g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """A capture configuration violates an invariant."""


class Microstep(Enum):
    """Motor driver step resolution (fractions of the 1.8 deg full step)."""

    FULL = "full"
    HALF = "half"
    QUARTER = "quarter"
    EIGHTH = "eighth"

    @property
    def fraction(self) -> float:
        return _MICROSTEP_FRACTION[self.value]

    @property
    def step_millideg(self) -> int:
        """Effective motor step in millidegrees; exact for all four modes."""
        return _MICROSTEP_MILLIDEG[self.value]

    @classmethod
    def parse(cls, text: str) -> "Microstep":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown microstep {text!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


_MICROSTEP_FRACTION = {"full": 1.0, "half": 0.5, "quarter": 0.25, "eighth": 0.125}
_MICROSTEP_MILLIDEG = {"full": 1800, "half": 900, "quarter": 450, "eighth": 225}


@dataclass(frozen=True)
class SensorConstants:
    """Fixed characteristics of the 16-beam ranging head.

    The head is mounted sideways so the 16-beam fan spans azimuth; each
    beam sits at beam_start_deg + i * beam_spacing_deg for i in 0..15.
    """

    beam_count: int = 16
    beam_spacing_deg: float = 2.0
    beam_start_deg: float = -15.0
    packets_per_sweep: int = 82
    blocks_per_packet: int = 2
    returns_per_packet: int = 32
    min_range_m: float = 0.5
    max_range_m: float = 100.0
    range_accuracy_m: float = 0.03
    full_motor_step_deg: float = 1.8

    @property
    def returns_per_sweep(self) -> int:
        """Returns per full vertical rotation (the per-sweep data budget)."""
        return self.packets_per_sweep * self.returns_per_packet

    @property
    def blocks_per_sweep(self) -> int:
        return self.packets_per_sweep * self.blocks_per_packet

    def beam_offsets_deg(self) -> list[float]:
        return [
            self.beam_start_deg + self.beam_spacing_deg * i
            for i in range(self.beam_count)
        ]


SENSOR = SensorConstants()


@dataclass(frozen=True)
class ScanConfig:
    """User capture parameters.

    step_count: motor steps taken between consecutive samplings
    rep_count: vertical-plane sweeps captured per turntable position
    rotation_deg: total turntable rotation covered by the capture
    """

    step_count: int
    rep_count: int
    rotation_deg: float
    microstep: Microstep = Microstep.FULL
    tau_s: float = 0.1
    range_noise_sigma_m: float = 0.02
    dropout_prob: float = 0.0
    rng_seed: int = 0

    @property
    def step_increment_millideg(self) -> int:
        """Table rotation between consecutive positions, exact millidegrees."""
        return self.step_count * self.microstep.step_millideg

    @property
    def effective_step_deg(self) -> float:
        return SENSOR.full_motor_step_deg * self.microstep.fraction

    @property
    def position_count(self) -> int:
        """Number of capture positions; rotation must divide evenly."""
        rot_md = _exact_millideg(self.rotation_deg, "rotation_deg")
        inc_md = self.step_increment_millideg
        if rot_md % inc_md != 0:
            raise ConfigError(
                f"rotation {self.rotation_deg} deg is not a whole multiple of "
                f"the position increment {inc_md / 1000} deg "
                f"(step_count={self.step_count}, microstep={self.microstep.value})"
            )
        return rot_md // inc_md

    @property
    def expected_point_count(self) -> int:
        """Return budget of the capture: positions x sweeps x returns/sweep."""
        return self.position_count * self.rep_count * SENSOR.returns_per_sweep

    def position_angles_deg(self) -> list[float]:
        """Table angle of every capture position, starting at zero."""
        inc_md = self.step_increment_millideg
        return [j * inc_md / 1000.0 for j in range(self.position_count)]


def _exact_millideg(value_deg: float, name: str) -> int:
    md = round(value_deg * 1000)
    if not math.isclose(value_deg * 1000, md, abs_tol=1e-6):
        raise ConfigError(f"{name} must be a whole number of millidegrees, got {value_deg}")
    return md


def validate_config(cfg: ScanConfig) -> ScanConfig:
    """Check every invariant of cfg and return it unchanged.

    Raises ConfigError on the first violation. Validation is idempotent:
    a config that passes once passes again and is returned as-is; the
    derived position and point counts are available as properties.
    """
    if not isinstance(cfg.step_count, int) or cfg.step_count < 1:
        raise ConfigError(f"step_count must be an integer >= 1, got {cfg.step_count!r}")
    if not isinstance(cfg.rep_count, int) or cfg.rep_count < 1:
        raise ConfigError(f"rep_count must be an integer >= 1, got {cfg.rep_count!r}")
    if not (0.0 < cfg.rotation_deg <= 360.0):
        raise ConfigError(f"rotation_deg must be in (0, 360], got {cfg.rotation_deg!r}")
    if not isinstance(cfg.microstep, Microstep):
        raise ConfigError(f"microstep must be a Microstep, got {cfg.microstep!r}")
    if not (cfg.tau_s > 0):
        raise ConfigError(f"tau_s must be > 0, got {cfg.tau_s!r}")
    if not (cfg.range_noise_sigma_m >= 0):
        raise ConfigError(f"range_noise_sigma_m must be >= 0, got {cfg.range_noise_sigma_m!r}")
    if not (0.0 <= cfg.dropout_prob < 1.0):
        raise ConfigError(f"dropout_prob must be in [0, 1), got {cfg.dropout_prob!r}")
    if not isinstance(cfg.rng_seed, int) or not (0 <= cfg.rng_seed < 2**64):
        raise ConfigError(f"rng_seed must be an unsigned 64-bit integer, got {cfg.rng_seed!r}")
    n = cfg.position_count
    if n < 1:
        raise ConfigError("capture must cover at least one position")
    return cfg


_CONFIG_KEYS = ("step", "rep", "rot", "microstep", "tau", "noise_sigma", "dropout", "seed")


def parse_config_text(text: str, overrides: dict | None = None) -> ScanConfig:
    """Build a validated ScanConfig from flat key=value lines.

    Recognized keys: step, rep, rot, microstep, tau, noise_sigma,
    dropout, seed. Values from `overrides` (same keys) win over the file.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = val.strip()
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config override {key!r}")
            values[key] = str(val)
    missing = [k for k in ("step", "rep", "rot") if k not in values]
    if missing:
        raise ConfigError(f"config is missing required keys: {missing}")

    def _int(key: str, default: int | None = None) -> int:
        if key not in values:
            return default
        try:
            return int(values[key])
        except ValueError:
            raise ConfigError(f"config key {key}={values[key]!r} is not an integer") from None

    def _float(key: str, default: float) -> float:
        if key not in values:
            return default
        try:
            return float(values[key])
        except ValueError:
            raise ConfigError(f"config key {key}={values[key]!r} is not a number") from None

    cfg = ScanConfig(
        step_count=_int("step"),
        rep_count=_int("rep"),
        rotation_deg=_float("rot", 0.0),
        microstep=Microstep.parse(values.get("microstep", "full")),
        tau_s=_float("tau", 0.1),
        range_noise_sigma_m=_float("noise_sigma", 0.02),
        dropout_prob=_float("dropout", 0.0),
        rng_seed=_int("seed", 0),
    )
    return validate_config(cfg)


def load_config(path: str | Path, overrides: dict | None = None) -> ScanConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), overrides)


def config_to_text(cfg: ScanConfig) -> str:
    lines = [
        f"step={cfg.step_count}",
        f"rep={cfg.rep_count}",
        f"rot={cfg.rotation_deg!r}",
        f"microstep={cfg.microstep.value}",
        f"tau={cfg.tau_s!r}",
        f"noise_sigma={cfg.range_noise_sigma_m!r}",
        f"dropout={cfg.dropout_prob!r}",
        f"seed={cfg.rng_seed}",
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Attitude:
    """Roll/pitch/yaw state plus the compass heading.

    heading_deg is the clockwise angle from true north to the sensor's
    table-zero azimuth, normalized into [0, 360).
    """

    roll_deg: float = 0.0
    pitch_deg: float = 0.0
    yaw_deg: float = 0.0
    heading_deg: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading_deg", self.heading_deg % 360.0)


@dataclass(frozen=True)
class GeoFix:
    """Single WGS84 fix recorded once per capture for georeferencing."""

    latitude_deg: float = 0.0
    longitude_deg: float = 0.0
    altitude_m: float = 0.0
    fix_time: float = 0.0

    def __post_init__(self) -> None:
        if not (-90.0 <= self.latitude_deg <= 90.0):
            raise ValueError(f"latitude out of range: {self.latitude_deg}")
        if not (-180.0 <= self.longitude_deg <= 180.0):
            raise ValueError(f"longitude out of range: {self.longitude_deg}")


@dataclass(frozen=True)
class ImuSample:
    """One inertial sample: gyro rates (deg/s), accel (g), period (s)."""

    gx: float
    gy: float
    gz: float
    ax: float
    ay: float
    az: float
    dt_s: float

    def __post_init__(self) -> None:
        if not (self.dt_s > 0):
            raise ValueError(f"dt_s must be > 0, got {self.dt_s}")


@dataclass
class CloudMeta:
    """Georeferencing and provenance carried alongside the points.

    `config` is populated when the cloud was assembled in-process; a
    cloud read back from CSV only recovers step/rep/rot.
    """

    geo: GeoFix | None = None
    attitude: Attitude | None = None
    step: int | None = None
    rep: int | None = None
    rot: float | None = None
    config: ScanConfig | None = None


@dataclass
class PointCloud:
    """Immutable-by-convention point set in the local sensor frame.

    xyz: (N, 3) float64 meters; intensity: (N,) uint8;
    timestamp_us: (N,) uint64 microseconds since sensor power-on.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    timestamp_us: np.ndarray
    meta: CloudMeta = field(default_factory=CloudMeta)

    def __post_init__(self) -> None:
        self.xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        self.intensity = np.asarray(self.intensity, dtype=np.uint8).reshape(-1)
        self.timestamp_us = np.asarray(self.timestamp_us, dtype=np.uint64).reshape(-1)
        n = len(self.xyz)
        if len(self.intensity) != n or len(self.timestamp_us) != n:
            raise ValueError(
                f"field lengths differ: xyz={n} intensity={len(self.intensity)} "
                f"timestamp={len(self.timestamp_us)}"
            )

    def __len__(self) -> int:
        return len(self.xyz)

    @property
    def is_empty(self) -> bool:
        return len(self.xyz) == 0

    def with_xyz(self, xyz: np.ndarray, meta: CloudMeta | None = None) -> "PointCloud":
        return PointCloud(xyz, self.intensity, self.timestamp_us, meta or self.meta)

    def take(self, index: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.xyz[index], self.intensity[index], self.timestamp_us[index], self.meta
        )


def empty_cloud(meta: CloudMeta | None = None) -> PointCloud:
    return PointCloud(
        np.empty((0, 3)), np.empty(0, np.uint8), np.empty(0, np.uint64),
        meta or CloudMeta(),
    )
