"""Complementary-filter attitude estimation and drift calibration.

Angles are degrees, gyro rates deg/s, accelerations in g. Each update
blends the integrated gyro rates (high-pass) with the accelerometer
gravity angles (low-pass):

    roll  = a * (roll  + gx * dt) + (1 - a) * atan2(ay, az)
    pitch = a * (pitch + gy * dt) + (1 - a) * atan2(-ax, sqrt(ay^2 + az^2))
    yaw   = yaw + gz * dt
    a     = tau / (tau + dt)

Yaw has no gravity reference, so it integrates the vertical-axis rate
and drifts; heading comes from the compass instead.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .core import Attitude, ImuSample

SETTLE_WINDOW = 50
SETTLE_THRESHOLD_DEG = 0.01


@dataclass(frozen=True)
class DriftBias:
    """Stationary sensor offsets: gyro in deg/s, accel in g."""

    gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        for v in (*self.gyro, *self.accel):
            if not math.isfinite(v):
                raise ValueError(f"bias components must be finite, got {v}")


@dataclass(frozen=True)
class FilterState:
    """Filter state after some number of updates.

    alpha and last_dt_s are None until the first sample arrives;
    afterwards alpha == tau / (tau + last_dt_s).
    """

    attitude: Attitude
    tau_s: float
    alpha: float | None = None
    last_dt_s: float | None = None
    accel_degenerate: bool = False

    @classmethod
    def initial(cls, tau_s: float = 0.1) -> "FilterState":
        if not (tau_s > 0):
            raise ValueError(f"tau_s must be > 0, got {tau_s}")
        return cls(attitude=Attitude(), tau_s=tau_s)


def compute_alpha(tau_s: float, dt_s: float) -> float:
    """Blend weight tau / (tau + dt); in (0, 1) for positive inputs."""
    if not (tau_s > 0):
        raise ValueError(f"tau_s must be > 0, got {tau_s}")
    if not (dt_s > 0):
        raise ValueError(f"dt_s must be > 0, got {dt_s}")
    return tau_s / (tau_s + dt_s)


def calibrate_drift(samples: Sequence[ImuSample]) -> DriftBias:
    """Mean stationary offsets from a level, motionless recording.

    The gyro bias is the component-wise mean rate; the accel bias is the
    mean reading minus the expected gravity reaction (0, 0, 1) g.
    """
    if len(samples) == 0:
        raise ValueError("calibration needs at least one sample")
    n = len(samples)
    gx = sum(s.gx for s in samples) / n
    gy = sum(s.gy for s in samples) / n
    gz = sum(s.gz for s in samples) / n
    ax = sum(s.ax for s in samples) / n
    ay = sum(s.ay for s in samples) / n
    az = sum(s.az for s in samples) / n
    return DriftBias(gyro=(gx, gy, gz), accel=(ax, ay, az - 1.0))


def subtract_bias(sample: ImuSample, bias: DriftBias) -> ImuSample:
    return ImuSample(
        gx=sample.gx - bias.gyro[0],
        gy=sample.gy - bias.gyro[1],
        gz=sample.gz - bias.gyro[2],
        ax=sample.ax - bias.accel[0],
        ay=sample.ay - bias.accel[1],
        az=sample.az - bias.accel[2],
        dt_s=sample.dt_s,
    )


def update_attitude(state: FilterState, s: ImuSample) -> FilterState:
    """One filter step over a bias-corrected sample.

    A fully degenerate accelerometer vector (ax = ay = az = 0) carries
    no gravity information; the update falls back to pure gyro
    integration and flags the state.
    """
    alpha = compute_alpha(state.tau_s, s.dt_s)
    att = state.attitude
    roll_gyro = att.roll_deg + s.gx * s.dt_s
    pitch_gyro = att.pitch_deg + s.gy * s.dt_s
    yaw = att.yaw_deg + s.gz * s.dt_s

    degenerate = s.ax == 0.0 and s.ay == 0.0 and s.az == 0.0
    if degenerate:
        roll, pitch = roll_gyro, pitch_gyro
    else:
        roll_accel = math.degrees(math.atan2(s.ay, s.az))
        pitch_accel = math.degrees(math.atan2(-s.ax, math.hypot(s.ay, s.az)))
        roll = alpha * roll_gyro + (1.0 - alpha) * roll_accel
        pitch = alpha * pitch_gyro + (1.0 - alpha) * pitch_accel

    return FilterState(
        attitude=Attitude(roll, pitch, yaw, att.heading_deg),
        tau_s=state.tau_s,
        alpha=alpha,
        last_dt_s=s.dt_s,
        accel_degenerate=degenerate,
    )


def run_filter(
    samples: Iterable[ImuSample],
    bias: DriftBias | None = None,
    state: FilterState | None = None,
    tau_s: float = 0.1,
) -> FilterState:
    """Fold update_attitude over a sample stream, in order."""
    st = state if state is not None else FilterState.initial(tau_s)
    if bias is None:
        bias = DriftBias()
    for s in samples:
        st = update_attitude(st, subtract_bias(s, bias))
    return st


@dataclass(frozen=True)
class SettleResult:
    attitude: Attitude
    settled: bool
    updates: int


def settle_tilt(
    stream: Sequence[ImuSample],
    bias: DriftBias | None = None,
    tau_s: float = 0.1,
) -> SettleResult:
    """Run the filter from rest over a pre-capture stream.

    Settled means each of the last 50 updates moved roll and pitch by
    less than 0.01 degrees; otherwise the final attitude is still
    returned, flagged as not settled.
    """
    if len(stream) == 0:
        raise ValueError("settle needs at least one sample")
    if bias is None:
        bias = DriftBias()
    st = FilterState.initial(tau_s)
    recent: deque[tuple[float, float]] = deque(maxlen=SETTLE_WINDOW)
    for s in stream:
        prev = st.attitude
        st = update_attitude(st, subtract_bias(s, bias))
        recent.append(
            (
                abs(st.attitude.roll_deg - prev.roll_deg),
                abs(st.attitude.pitch_deg - prev.pitch_deg),
            )
        )
    settled = len(recent) == SETTLE_WINDOW and all(
        dr < SETTLE_THRESHOLD_DEG and dp < SETTLE_THRESHOLD_DEG for dr, dp in recent
    )
    return SettleResult(attitude=st.attitude, settled=settled, updates=len(stream))


def gyro_bias_from_stream(stream: Sequence[ImuSample]) -> DriftBias:
    """Gyro-only bias estimate from a static stream of unknown tilt.

    The mean gyro rate of a motionless rig is its bias regardless of
    orientation; the accel reading cannot be separated from tilt in the
    field, so the accel bias is left at zero.
    """
    if len(stream) == 0:
        raise ValueError("need at least one sample")
    n = len(stream)
    return DriftBias(
        gyro=(
            sum(s.gx for s in stream) / n,
            sum(s.gy for s in stream) / n,
            sum(s.gz for s in stream) / n,
        )
    )


IMU_CSV_FIELDS = ("dt_s", "gx", "gy", "gz", "ax", "ay", "az")


def imu_stream_to_csv(stream: Sequence[ImuSample]) -> str:
    lines = [
        f"{s.dt_s!r},{s.gx!r},{s.gy!r},{s.gz!r},{s.ax!r},{s.ay!r},{s.az!r}"
        for s in stream
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def imu_stream_from_csv(text: str) -> list[ImuSample]:
    out = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        if len(row) != 7:
            raise ValueError(f"imu csv line {lineno}: expected 7 fields, got {len(row)}")
        dt, gx, gy, gz, ax, ay, az = (float(v) for v in row)
        out.append(ImuSample(gx=gx, gy=gy, gz=gz, ax=ax, ay=ay, az=az, dt_s=dt))
    return out


def write_imu_csv(path: str | Path, stream: Sequence[ImuSample]) -> None:
    Path(path).write_text(imu_stream_to_csv(stream), encoding="utf-8")


def read_imu_csv(path: str | Path) -> list[ImuSample]:
    return imu_stream_from_csv(Path(path).read_text(encoding="utf-8"))
