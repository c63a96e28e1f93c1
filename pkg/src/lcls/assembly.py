"""Geometry of the sideways-mounted beam fan and point-cloud assembly.

A measurement is identified by (vertical sweep angle a, fan channel i,
table angle M, range d). The sweep angle covers the full vertical
circle; channel offsets w_i = -15 + 2 i deg and the table angle set the
horizontal azimuth phi = M + w_i (clockwise from north), giving

    x = d cos(a) sin(phi),  y = d cos(a) cos(phi),  z = d sin(a)

so a = 90 is the zenith and a near 180 lands on azimuth phi + 180.
Attitude correction rotates an assembled cloud by
Rz(-heading) Ry(-pitch) Rx(-roll) so that +y points true north and z is
plumb; the same matrix doubles as the rig orientation in the simulator,
which keeps the correction an exact inverse.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import codec, fusion
from .core import (
    SENSOR,
    Attitude,
    CloudMeta,
    GeoFix,
    PointCloud,
    ScanConfig,
    validate_config,
)

BEAM_OFFSETS_DEG = np.array(SENSOR.beam_offsets_deg())
BLOCK_ANGLES_DEG = codec.BLOCK_ANGLES_CENTIDEG.astype(np.float64) / 100.0

DEDUP_GRID_M = codec.DIST_UNIT_M  # "identical XYZ" is defined on the 2 mm grid


class AssemblyError(ValueError):
    """A capture record cannot be assembled into a cloud."""


def sweep_directions(table_angle_deg: float) -> np.ndarray:
    """Unit ray directions of a full sweep at one table angle, (164, 16, 3).

    Shared by the simulator and the assembler so both sides evaluate the
    exact same trigonometry.
    """
    alpha = np.deg2rad(BLOCK_ANGLES_DEG)[:, None]
    phi = np.deg2rad(table_angle_deg + BEAM_OFFSETS_DEG)[None, :]
    out = np.empty((codec.BLOCKS_PER_SWEEP, codec.CHANNELS, 3))
    cos_a = np.cos(alpha)
    out[..., 0] = cos_a * np.sin(phi)
    out[..., 1] = cos_a * np.cos(phi)
    out[..., 2] = np.broadcast_to(np.sin(alpha), out.shape[:2])
    return out


def measurement_to_point(
    vertical_angle_deg: float,
    channel: int,
    table_angle_deg: float,
    distance_m: float,
) -> np.ndarray:
    """Nominal local-frame point of one return."""
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    if not 0 <= channel < SENSOR.beam_count:
        raise ValueError(f"channel out of range 0..15: {channel}")
    a = math.radians(vertical_angle_deg)
    phi = math.radians(table_angle_deg + BEAM_OFFSETS_DEG[channel])
    return distance_m * np.array(
        [math.cos(a) * math.sin(phi), math.cos(a) * math.cos(phi), math.sin(a)]
    )


def rot_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def attitude_rotation(roll_deg: float, pitch_deg: float, heading_deg: float) -> np.ndarray:
    """Rz(-heading) @ Ry(-pitch) @ Rx(-roll), right-handed about x, y, z."""
    return rot_z(-heading_deg) @ rot_y(-pitch_deg) @ rot_x(-roll_deg)


def correct_attitude(
    cloud: PointCloud, attitude: Attitude, heading_deg: float | None = None
) -> PointCloud:
    """Undo rig tilt and heading so +y is true north and z is plumb.

    heading_deg defaults to the heading carried by `attitude`. The
    applied angles are recorded in the returned cloud's metadata.
    """
    h = attitude.heading_deg if heading_deg is None else heading_deg
    rot = attitude_rotation(attitude.roll_deg, attitude.pitch_deg, h)
    applied = Attitude(attitude.roll_deg, attitude.pitch_deg, attitude.yaw_deg, h)
    meta = replace(cloud.meta, attitude=applied)
    return cloud.with_xyz(cloud.xyz @ rot.T, meta=meta)


def expected_point_count(cfg: ScanConfig) -> int:
    """Exact return budget: ROT / (STEP x step angle) x REP x 2624."""
    return validate_config(cfg).expected_point_count


def effective_resolution(step_deg: float, fan_spacing_deg: float = 2.0) -> float:
    """Finest azimuth spacing achievable by interleaving step and fan.

    Consecutive positions shift the 2-degree fan by the step angle, so
    over many positions the achieved azimuths fill the lattice generated
    by both, whose pitch is their gcd (taken over exact tenths of a
    degree).
    """
    tenths = []
    for name, val in (("step", step_deg), ("fan spacing", fan_spacing_deg)):
        t = round(val * 10)
        if t <= 0 or not math.isclose(val * 10, t, abs_tol=1e-9):
            raise ValueError(
                f"{name} {val} deg is not a positive multiple of 0.1 deg"
            )
        tenths.append(t)
    return math.gcd(*tenths) / 10.0


def assemble_capture(rec) -> PointCloud:
    """Decode, convert, and correct a CaptureRecord into a point cloud.

    Points come out in (position, sweep, block, channel) order. The tilt
    applied is the settled filter output over the record's pre-capture
    stream (gyro bias taken as the stream mean; the rig is static), the
    heading is the record's compass value, and the single GPS fix is
    attached as metadata. Duplicates are NOT removed here.
    """
    cfg = validate_config(rec.cfg)
    data = rec.raw_bytes()
    sweeps, diags = codec.decode_stream(data)
    if diags.issues:
        first = diags.issues[0]
        raise AssemblyError(f"raw stream is damaged: {first.message}")
    expected_sweeps = cfg.position_count * cfg.rep_count
    if len(sweeps) != expected_sweeps:
        raise AssemblyError(
            f"sweep count mismatch: raw stream holds {len(sweeps)}, "
            f"config implies {expected_sweeps}"
        )

    bias = fusion.gyro_bias_from_stream(rec.imu_stream)
    settle = fusion.settle_tilt(rec.imu_stream, bias, tau_s=cfg.tau_s)
    attitude = replace(settle.attitude, heading_deg=rec.heading_deg)

    xyz_parts: list[np.ndarray] = []
    refl_parts: list[np.ndarray] = []
    ts_parts: list[np.ndarray] = []
    rep = cfg.rep_count
    for j, angle in enumerate(cfg.position_angles_deg()):
        dirs = sweep_directions(angle).reshape(-1, 3)
        pos_sweeps = sweeps[j * rep : (j + 1) * rep]
        dist = np.stack([s.distances_m().reshape(-1) for s in pos_sweeps])
        refl = np.stack([s.reflectivity.reshape(-1) for s in pos_sweeps])
        # packet timestamps apply to both blocks, hence all 32 returns
        ts = np.stack(
            [np.repeat(s.timestamps_us, 2 * codec.CHANNELS) for s in pos_sweeps]
        )
        mask = np.isfinite(dist)
        if not mask.any():
            continue
        sweep_idx, flat_idx = np.nonzero(mask)
        xyz_parts.append(dist[mask][:, None] * dirs[flat_idx])
        refl_parts.append(refl[mask])
        ts_parts.append(ts[mask])

    if xyz_parts:
        xyz = np.vstack(xyz_parts)
        intensity = np.concatenate(refl_parts)
        timestamps = np.concatenate(ts_parts).astype(np.uint64)
    else:
        xyz = np.empty((0, 3))
        intensity = np.empty(0, np.uint8)
        timestamps = np.empty(0, np.uint64)

    meta = CloudMeta(
        geo=rec.geo,
        step=cfg.step_count,
        rep=cfg.rep_count,
        rot=cfg.rotation_deg,
        config=cfg,
    )
    cloud = PointCloud(xyz, intensity, timestamps, meta)
    return correct_attitude(cloud, attitude)


def _quantized_keys(xyz: np.ndarray) -> np.ndarray:
    """Pack 2 mm-grid coordinates into one int64 key per point."""
    q = np.rint(xyz / DEDUP_GRID_M).astype(np.int64) + (1 << 20)
    return (q[:, 0] << 42) | (q[:, 1] << 21) | q[:, 2]


def filter_duplicates(cloud: PointCloud) -> PointCloud:
    """Drop points whose 2 mm-quantized coordinates repeat.

    Keeps the first occurrence of each quantized (x, y, z) triple and
    preserves the original order; idempotent.
    """
    if cloud.is_empty:
        return cloud
    keys = _quantized_keys(cloud.xyz)
    _, first = np.unique(keys, return_index=True)
    return cloud.take(np.sort(first))


XYZIT_HEADER_KEYS = ("lat", "lon", "alt", "heading", "roll", "pitch", "step", "rep", "rot")


def _xyzit_header(cloud: PointCloud) -> list[str]:
    geo = cloud.meta.geo
    att = cloud.meta.attitude
    values = {
        "lat": geo.latitude_deg if geo else 0.0,
        "lon": geo.longitude_deg if geo else 0.0,
        "alt": geo.altitude_m if geo else 0.0,
        "heading": att.heading_deg if att else 0.0,
        "roll": att.roll_deg if att else 0.0,
        "pitch": att.pitch_deg if att else 0.0,
        "step": cloud.meta.step if cloud.meta.step is not None else 0,
        "rep": cloud.meta.rep if cloud.meta.rep is not None else 0,
        "rot": cloud.meta.rot if cloud.meta.rot is not None else 0.0,
    }
    return [f"# {k}={values[k]!r}" for k in XYZIT_HEADER_KEYS]


def write_xyzit(path, cloud: PointCloud) -> None:
    """Write the .xyzit.csv interchange file: # key=value headers, then
    x,y,z,intensity,timestamp_us rows with 6-decimal coordinates."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for line in _xyzit_header(cloud):
            fh.write(line + "\n")
        x, y, z = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
        inten = cloud.intensity
        ts = cloud.timestamp_us
        chunk = 200_000
        for lo in range(0, len(cloud), chunk):
            hi = min(lo + chunk, len(cloud))
            fh.writelines(
                f"{x[i]:.6f},{y[i]:.6f},{z[i]:.6f},{inten[i]:d},{ts[i]:d}\n"
                for i in range(lo, hi)
            )


def read_xyzit(path) -> PointCloud:
    header: dict[str, float] = {}
    body_start = 0
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    for line in lines:
        if not line.startswith("#"):
            break
        body_start += 1
        stripped = line.lstrip("#").strip()
        if "=" in stripped:
            k, _, v = stripped.partition("=")
            header[k.strip()] = float(v)
    rows = [ln for ln in lines[body_start:] if ln.strip()]
    if rows:
        table = np.loadtxt(rows, delimiter=",", dtype=np.float64, ndmin=2)
        if table.shape[1] != 5:
            raise ValueError(f"expected 5 columns in {path}, got {table.shape[1]}")
        xyz = table[:, :3]
        intensity = table[:, 3].astype(np.uint8)
        timestamps = table[:, 4].astype(np.uint64)
    else:
        xyz = np.empty((0, 3))
        intensity = np.empty(0, np.uint8)
        timestamps = np.empty(0, np.uint64)

    geo = None
    if {"lat", "lon", "alt"} <= header.keys():
        geo = GeoFix(header["lat"], header["lon"], header["alt"])
    att = None
    if {"roll", "pitch", "heading"} <= header.keys():
        att = Attitude(header["roll"], header["pitch"], 0.0, header["heading"])
    meta = CloudMeta(
        geo=geo,
        attitude=att,
        step=int(header["step"]) if "step" in header else None,
        rep=int(header["rep"]) if "rep" in header else None,
        rot=header.get("rot"),
    )
    return PointCloud(xyz, intensity, timestamps, meta)
