"""Deterministic stand-in for the physical scanning rig.

Covers the whole capture workflow: describe a scene of analytic
primitives, settle the tilt filter on a synthetic inertial stream, then
alternate vertical-plane sweeps with turntable steps until the
requested rotation is covered. Rays are ideal (no footprint), returns
are first-hit only, and the only noise sources are Gaussian range noise
and Bernoulli dropout, both driven by per-position substreams of the
configured seed, so identical inputs give byte-identical captures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, fusion
from .assembly import attitude_rotation, sweep_directions
from .core import (
    GeoFix,
    ImuSample,
    ScanConfig,
    parse_config_text,
    config_to_text,
    validate_config,
)

_EPS = 1e-9

# one vertical rotation every ~0.1 s; packets are spaced evenly within it
PACKET_PERIOD_US = 1220

# invented inertial stream characteristics (the rig cares only that the
# filter output converges; see synth_imu_stream)
IMU_DT_S = 0.01
IMU_SAMPLES = 1200
IMU_ACCEL_NOISE_G = 0.004
IMU_GYRO_NOISE_DPS = 0.2
IMU_GYRO_BIAS_SIGMA_DPS = 0.3


class SceneError(ValueError):
    """Scene text cannot be parsed or violates a primitive invariant."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Ground:
    """Plane z = g0 + sx * x + sy * y."""

    g0: float
    sx: float
    sy: float
    reflectivity: int = 100

    def height_at(self, x: float, y: float) -> float:
        return self.g0 + self.sx * x + self.sy * y


@dataclass(frozen=True)
class Cylinder:
    cx: float
    cy: float
    radius: float
    z0: float
    z1: float
    reflectivity: int


@dataclass(frozen=True)
class Ellipsoid:
    cx: float
    cy: float
    cz: float
    rx: float
    ry: float
    rz: float
    reflectivity: int


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    z0: float
    x1: float
    y1: float
    z1: float
    reflectivity: int


@dataclass(frozen=True)
class Scene:
    ground: Ground | None = None
    primitives: tuple = ()

    def max_surface_height(self) -> float | None:
        """Largest z any primitive surface reaches (ground excluded)."""
        tops = []
        for p in self.primitives:
            if isinstance(p, Cylinder):
                tops.append(p.z1)
            elif isinstance(p, Ellipsoid):
                tops.append(p.cz + p.rz)
            elif isinstance(p, Box):
                tops.append(p.z1)
        return max(tops) if tops else None


def _parse_reflectivity(value: str, lineno: int) -> int:
    try:
        refl = int(value)
    except ValueError:
        raise SceneError(f"reflectivity must be an integer, got {value!r}", lineno) from None
    if not 0 <= refl <= 255:
        raise SceneError(f"reflectivity must be in 0..255, got {refl}", lineno)
    return refl


def parse_scene(text: str) -> Scene:
    """Parse the .scene format: one primitive per line, # comments.

    Directives: `ground g0 sx sy [reflectivity]`,
    `cylinder cx cy r z0 z1 refl`, `ellipsoid cx cy cz rx ry rz refl`,
    `box x0 y0 z0 x1 y1 z1 refl`.
    """
    ground: Ground | None = None
    prims: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0].lower(), parts[1:]

        def floats(n: int) -> list[float]:
            if len(args) != n:
                raise SceneError(
                    f"{kind} expects {n} arguments, got {len(args)}", lineno
                )
            try:
                return [float(a) for a in args]
            except ValueError:
                raise SceneError(f"bad number in {kind} arguments: {args}", lineno) from None

        if kind == "ground":
            if ground is not None:
                raise SceneError("duplicate ground directive", lineno)
            if len(args) == 4:
                refl = _parse_reflectivity(args[3], lineno)
                args = args[:3]
            elif len(args) == 3:
                refl = 100
            else:
                raise SceneError(f"ground expects 3 or 4 arguments, got {len(args)}", lineno)
            try:
                g0, sx, sy = (float(a) for a in args)
            except ValueError:
                raise SceneError(f"bad number in ground arguments: {args}", lineno) from None
            ground = Ground(g0, sx, sy, refl)
        elif kind == "cylinder":
            cx, cy, r, z0, z1, refl = floats(6)
            refl = _parse_reflectivity(args[5], lineno)
            if r <= 0:
                raise SceneError(f"cylinder radius must be > 0, got {r}", lineno)
            if not z1 > z0:
                raise SceneError(f"cylinder needs z1 > z0, got {z0}..{z1}", lineno)
            prims.append(Cylinder(cx, cy, r, z0, z1, refl))
        elif kind == "ellipsoid":
            cx, cy, cz, rx, ry, rz, refl = floats(7)
            refl = _parse_reflectivity(args[6], lineno)
            if min(rx, ry, rz) <= 0:
                raise SceneError(f"ellipsoid radii must be > 0, got {(rx, ry, rz)}", lineno)
            prims.append(Ellipsoid(cx, cy, cz, rx, ry, rz, refl))
        elif kind == "box":
            x0, y0, z0, x1, y1, z1, refl = floats(7)
            refl = _parse_reflectivity(args[6], lineno)
            if not (x1 > x0 and y1 > y0 and z1 > z0):
                raise SceneError("box needs min < max on every axis", lineno)
            prims.append(Box(x0, y0, z0, x1, y1, z1, refl))
        else:
            raise SceneError(f"unknown directive {kind!r}", lineno)
    return Scene(ground=ground, primitives=tuple(prims))


def load_scene(path: str | Path) -> Scene:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def _hit_ground(g: Ground, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    denom = dirs[:, 2] - g.sx * dirs[:, 0] - g.sy * dirs[:, 1]
    num = g.g0 + g.sx * origin[0] + g.sy * origin[1] - origin[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    t = np.where((np.abs(denom) > 1e-300) & (t > _EPS), t, np.inf)
    return t


def _hit_cylinder(c: Cylinder, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    ox, oy = origin[0] - c.cx, origin[1] - c.cy
    ux, uy = dirs[:, 0], dirs[:, 1]
    a = ux * ux + uy * uy
    b = 2.0 * (ox * ux + oy * uy)
    cc = ox * ox + oy * oy - c.radius * c.radius
    disc = b * b - 4.0 * a * cc
    t_best = np.full(len(dirs), np.inf)
    valid = (disc >= 0) & (a > 0)
    if not valid.any():
        return t_best
    sq = np.sqrt(np.where(valid, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        for sign in (-1.0, 1.0):  # near root first, far root for inside rays
            t = np.where(valid, (-b + sign * sq) / (2.0 * a), np.inf)
            z = origin[2] + t * dirs[:, 2]
            ok = valid & (t > _EPS) & (z >= c.z0) & (z <= c.z1)
            t_best = np.where(ok & (t < t_best), t, t_best)
    return t_best


def _hit_ellipsoid(e: Ellipsoid, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    radii = np.array([e.rx, e.ry, e.rz])
    o = (origin - np.array([e.cx, e.cy, e.cz])) / radii
    u = dirs / radii
    a = (u * u).sum(axis=1)
    b = 2.0 * (o * u).sum(axis=1)
    c = (o * o).sum() - 1.0
    disc = b * b - 4.0 * a * c
    t_best = np.full(len(dirs), np.inf)
    valid = disc >= 0
    if not valid.any():
        return t_best
    sq = np.sqrt(np.where(valid, disc, 0.0))
    for sign in (-1.0, 1.0):
        t = np.where(valid, (-b + sign * sq) / (2.0 * a), np.inf)
        ok = valid & (t > _EPS)
        t_best = np.where(ok & (t < t_best), t, t_best)
    return t_best


def _hit_box(bx: Box, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    lo = np.array([bx.x0, bx.y0, bx.z0])
    hi = np.array([bx.x1, bx.y1, bx.z1])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (lo[None, :] - origin[None, :]) * inv
    t2 = (hi[None, :] - origin[None, :]) * inv
    t_near = np.nanmax(np.minimum(t1, t2), axis=1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = t_near <= t_far
    t = np.where(t_near > _EPS, t_near, t_far)  # entry, or exit when inside
    return np.where(hit & (t > _EPS), t, np.inf)


def raycast_batch(
    scene: Scene, origin: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """First-return distances and reflectivities for unit rays from origin.

    Returns (t, refl): t is NaN where no surface lies within the 0.5..100
    m gate along the ray (a nearer out-of-gate surface still shadows).
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    t_best = np.full(len(dirs), np.inf)
    refl = np.zeros(len(dirs), dtype=np.uint8)
    surfaces = list(scene.primitives)
    if scene.ground is not None:
        surfaces.append(scene.ground)
    for prim in surfaces:
        if isinstance(prim, Ground):
            t = _hit_ground(prim, origin, dirs)
        elif isinstance(prim, Cylinder):
            t = _hit_cylinder(prim, origin, dirs)
        elif isinstance(prim, Ellipsoid):
            t = _hit_ellipsoid(prim, origin, dirs)
        elif isinstance(prim, Box):
            t = _hit_box(prim, origin, dirs)
        else:  # pragma: no cover
            raise TypeError(f"unknown primitive {prim!r}")
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        refl = np.where(closer, prim.reflectivity, refl)

    in_gate = (t_best >= 0.5) & (t_best <= 100.0)
    t_out = np.where(in_gate, t_best, np.nan)
    refl = np.where(in_gate, refl, 0).astype(np.uint8)
    return t_out, refl


def raycast(
    scene: Scene, origin, direction
) -> tuple[float, int] | None:
    """Single-ray convenience wrapper; direction must be unit length."""
    direction = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(direction))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, |d| = {norm}")
    t, refl = raycast_batch(scene, np.asarray(origin, dtype=np.float64), direction[None, :])
    if not np.isfinite(t[0]):
        return None
    return float(t[0]), int(refl[0])


@dataclass(frozen=True)
class RigPose:
    """Where and how the rig stands: tripod height, terrain tilt to be
    recovered by the filter, compass heading, and the GPS fix."""

    sensor_height_m: float = 1.5
    true_roll_deg: float = 0.0
    true_pitch_deg: float = 0.0
    true_heading_deg: float = 0.0
    geo: GeoFix = field(default_factory=GeoFix)

    def __post_init__(self) -> None:
        if not self.sensor_height_m > 0:
            raise ValueError(f"sensor height must be > 0, got {self.sensor_height_m}")
        if abs(self.true_roll_deg) >= 45 or abs(self.true_pitch_deg) >= 45:
            raise ValueError("rig tilt beyond +/-45 deg is not supported")
        object.__setattr__(self, "true_heading_deg", self.true_heading_deg % 360.0)


@dataclass(frozen=True)
class MotorState:
    """Turntable angle tracked in exact millidegrees."""

    commanded_microsteps: int = 0
    table_angle_millideg: int = 0

    @property
    def table_angle_deg(self) -> float:
        return self.table_angle_millideg / 1000.0


def motor_advance(state: MotorState, steps: int, microstep) -> MotorState:
    """Advance the table by `steps` pulses at the given microstep mode."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    return MotorState(
        commanded_microsteps=state.commanded_microsteps + steps,
        table_angle_millideg=state.table_angle_millideg + steps * microstep.step_millideg,
    )


def sensor_origin(scene: Scene, pose: RigPose) -> np.ndarray:
    """World position of the optical center: tripod height above the
    ground under the rig (or above z = 0 when the scene has no ground)."""
    base = scene.ground.height_at(0.0, 0.0) if scene.ground is not None else 0.0
    return np.array([0.0, 0.0, base + pose.sensor_height_m])


def rig_rotation(pose: RigPose) -> np.ndarray:
    return attitude_rotation(pose.true_roll_deg, pose.true_pitch_deg, pose.true_heading_deg)


def _position_returns(
    scene: Scene, pose: RigPose, table_angle_deg: float
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free (distance, reflectivity) grids for one table angle."""
    dirs = sweep_directions(table_angle_deg).reshape(-1, 3)
    world_dirs = dirs @ rig_rotation(pose).T
    t, refl = raycast_batch(scene, sensor_origin(scene, pose), world_dirs)
    shape = (codec.BLOCKS_PER_SWEEP, codec.CHANNELS)
    return t.reshape(shape), refl.reshape(shape)


def _noisy_sweep_bytes(
    dist: np.ndarray,
    refl: np.ndarray,
    cfg: ScanConfig,
    rng: np.random.Generator,
    base_timestamp_us: int,
) -> bytes:
    d = dist.copy()
    present = np.isfinite(d)
    if cfg.range_noise_sigma_m > 0:
        d = d + rng.normal(0.0, cfg.range_noise_sigma_m, d.shape)
        np.clip(d, 0.5, 100.0, out=d)  # keep noisy ranges encodable
    if cfg.dropout_prob > 0:
        keep = rng.random(d.shape) >= cfg.dropout_prob
        present = present & keep
    d[~present] = np.nan
    ts = (
        base_timestamp_us
        + np.arange(codec.PACKETS_PER_SWEEP, dtype=np.int64) * PACKET_PERIOD_US
    ) % (1 << 32)
    return codec.encode_sweep(d, refl, ts.astype(np.uint32))


def simulate_sweep(
    scene: Scene,
    pose: RigPose,
    table_angle_deg: float,
    cfg: ScanConfig,
    rng: np.random.Generator,
    base_timestamp_us: int = 0,
) -> bytes:
    """One full vertical rotation at a fixed table angle, as 82 packets."""
    cfg = validate_config(cfg)
    dist, refl = _position_returns(scene, pose, table_angle_deg)
    return _noisy_sweep_bytes(dist, refl, cfg, rng, base_timestamp_us)


def synth_imu_stream(
    roll_deg: float,
    pitch_deg: float,
    rng: np.random.Generator,
    gyro_bias_dps: tuple[float, float, float] = (0.0, 0.0, 0.0),
    n_samples: int = IMU_SAMPLES,
    dt_s: float = IMU_DT_S,
    accel_noise_g: float = IMU_ACCEL_NOISE_G,
    gyro_noise_dps: float = IMU_GYRO_NOISE_DPS,
) -> list[ImuSample]:
    """Stationary inertial stream consistent with a rig tilt.

    The gravity reaction seen by the tilted sensor is
    (-sin p, sin r cos p, cos r cos p) in g, which is exactly the vector
    the complementary filter maps back to (roll, pitch) = (r, p). Gyro
    channels carry only bias plus noise since the rig is motionless.
    """
    r = math.radians(roll_deg)
    p = math.radians(pitch_deg)
    gravity = np.array(
        [-math.sin(p), math.sin(r) * math.cos(p), math.cos(r) * math.cos(p)]
    )
    accel = np.tile(gravity, (n_samples, 1))
    if accel_noise_g > 0:
        accel += rng.normal(0.0, accel_noise_g, (n_samples, 3))
    gyro = np.tile(np.asarray(gyro_bias_dps, dtype=np.float64), (n_samples, 1))
    if gyro_noise_dps > 0:
        gyro += rng.normal(0.0, gyro_noise_dps, (n_samples, 3))
    return [
        ImuSample(
            gx=float(gyro[i, 0]),
            gy=float(gyro[i, 1]),
            gz=float(gyro[i, 2]),
            ax=float(accel[i, 0]),
            ay=float(accel[i, 1]),
            az=float(accel[i, 2]),
            dt_s=dt_s,
        )
        for i in range(n_samples)
    ]


@dataclass
class CaptureRecord:
    """Everything a capture run leaves behind.

    raw[j][k] holds the bytes of sweep k at position j. `truth` is kept
    for test oracles only and never feeds the processing chain.
    """

    raw: list[list[bytes]]
    motor_angles_deg: list[float]
    imu_stream: list[ImuSample]
    heading_deg: float
    geo: GeoFix
    cfg: ScanConfig
    truth: RigPose

    def __post_init__(self) -> None:
        n = self.cfg.position_count
        if len(self.raw) != n or len(self.motor_angles_deg) != n:
            raise ValueError(
                f"record holds {len(self.raw)} positions, config implies {n}"
            )
        for j, sweeps in enumerate(self.raw):
            if len(sweeps) != self.cfg.rep_count:
                raise ValueError(
                    f"position {j} holds {len(sweeps)} sweeps, "
                    f"config implies {self.cfg.rep_count}"
                )

    def raw_bytes(self) -> bytes:
        return b"".join(b for sweeps in self.raw for b in sweeps)

    def save(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "raw.lcraw", out / "imu.csv", out / "meta.txt"]
        paths[0].write_bytes(self.raw_bytes())
        fusion.write_imu_csv(paths[1], self.imu_stream)
        paths[2].write_text(self._meta_text(), encoding="utf-8")
        return paths

    def _meta_text(self) -> str:
        lines = [
            f"heading_deg={self.heading_deg!r}",
            f"lat={self.geo.latitude_deg!r}",
            f"lon={self.geo.longitude_deg!r}",
            f"alt={self.geo.altitude_m!r}",
            f"fix_time={self.geo.fix_time!r}",
            f"sensor_height_m={self.truth.sensor_height_m!r}",
            f"truth_roll_deg={self.truth.true_roll_deg!r}",
            f"truth_pitch_deg={self.truth.true_pitch_deg!r}",
            f"truth_heading_deg={self.truth.true_heading_deg!r}",
        ]
        return "\n".join(lines) + "\n" + config_to_text(self.cfg)

    @classmethod
    def load(cls, in_dir: str | Path) -> "CaptureRecord":
        src = Path(in_dir)
        meta: dict[str, str] = {}
        for lineno, raw in enumerate(
            (src / "meta.txt").read_text(encoding="utf-8").splitlines(), start=1
        ):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"meta.txt line {lineno}: expected key=value")
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
        cfg_keys = ("step", "rep", "rot", "microstep", "tau", "noise_sigma", "dropout", "seed")
        cfg = parse_config_text(
            "\n".join(f"{k}={meta[k]}" for k in cfg_keys if k in meta)
        )
        geo = GeoFix(
            float(meta.get("lat", 0.0)),
            float(meta.get("lon", 0.0)),
            float(meta.get("alt", 0.0)),
            float(meta.get("fix_time", 0.0)),
        )
        truth = RigPose(
            sensor_height_m=float(meta.get("sensor_height_m", 1.5)),
            true_roll_deg=float(meta.get("truth_roll_deg", 0.0)),
            true_pitch_deg=float(meta.get("truth_pitch_deg", 0.0)),
            true_heading_deg=float(meta.get("truth_heading_deg", 0.0)),
            geo=geo,
        )
        stream = fusion.read_imu_csv(src / "imu.csv")
        blob = (src / "raw.lcraw").read_bytes()
        n, rep = cfg.position_count, cfg.rep_count
        expected = n * rep * codec.SWEEP_BYTES
        if len(blob) != expected:
            raise ValueError(
                f"raw.lcraw holds {len(blob)} bytes, config implies {expected}"
            )
        raw = [
            [
                blob[
                    (j * rep + k) * codec.SWEEP_BYTES : (j * rep + k + 1) * codec.SWEEP_BYTES
                ]
                for k in range(rep)
            ]
            for j in range(n)
        ]
        inc = cfg.step_increment_millideg
        angles = [j * inc / 1000.0 for j in range(n)]
        return cls(
            raw=raw,
            motor_angles_deg=angles,
            imu_stream=stream,
            heading_deg=float(meta.get("heading_deg", 0.0)),
            geo=geo,
            cfg=cfg,
            truth=truth,
        )


def run_capture(
    scene: Scene,
    pose: RigPose,
    cfg: ScanConfig,
    imu_accel_noise_g: float = IMU_ACCEL_NOISE_G,
    imu_gyro_noise_dps: float = IMU_GYRO_NOISE_DPS,
    imu_gyro_bias_sigma_dps: float = IMU_GYRO_BIAS_SIGMA_DPS,
) -> CaptureRecord:
    """Full capture workflow: settle tilt, then sweep/step to rotation.

    Capture happens first at table angle zero, then the motor advances
    by step_count pulses between positions. Each position draws its
    noise from an independent child of the seed, so positions could be
    simulated in parallel without changing a single byte. The inertial
    stream carries seeded noise and gyro bias at the given levels.
    """
    cfg = validate_config(cfg)
    n_positions = cfg.position_count
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(1 + n_positions)
    imu_rng = np.random.default_rng(seeds[0])
    if imu_gyro_bias_sigma_dps > 0:
        gyro_bias = tuple(imu_rng.normal(0.0, imu_gyro_bias_sigma_dps, 3))
    else:
        gyro_bias = (0.0, 0.0, 0.0)
    stream = synth_imu_stream(
        pose.true_roll_deg,
        pose.true_pitch_deg,
        imu_rng,
        gyro_bias_dps=gyro_bias,
        accel_noise_g=imu_accel_noise_g,
        gyro_noise_dps=imu_gyro_noise_dps,
    )

    raw: list[list[bytes]] = []
    angles: list[float] = []
    motor = MotorState()
    sweep_counter = 0
    for j in range(n_positions):
        angle = motor.table_angle_deg
        angles.append(angle)
        rng = np.random.default_rng(seeds[1 + j])
        dist, refl = _position_returns(scene, pose, angle)
        sweeps = []
        for _ in range(cfg.rep_count):
            base_ts = sweep_counter * codec.PACKETS_PER_SWEEP * PACKET_PERIOD_US
            sweeps.append(_noisy_sweep_bytes(dist, refl, cfg, rng, base_ts))
            sweep_counter += 1
        raw.append(sweeps)
        motor = motor_advance(motor, cfg.step_count, cfg.microstep)

    return CaptureRecord(
        raw=raw,
        motor_angles_deg=angles,
        imu_stream=stream,
        heading_deg=pose.true_heading_deg,
        geo=pose.geo,
        cfg=cfg,
        truth=pose,
    )
