"""Shared scene builders and capture helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from lcls import assembly, core, sim

ENCLOSING_BOX = "box -20 -20 -3 20 20 15 120\n"


def make_cfg(step=5, rep=1, rot=90.0, sigma=0.02, dropout=0.0, seed=0, **kw):
    return core.validate_config(
        core.ScanConfig(
            step_count=step,
            rep_count=rep,
            rotation_deg=rot,
            range_noise_sigma_m=sigma,
            dropout_prob=dropout,
            rng_seed=seed,
            **kw,
        )
    )


def quiet_capture(scene, pose, cfg):
    """Capture with a noise-free inertial stream (exact attitude recovery)."""
    return sim.run_capture(
        scene,
        pose,
        cfg,
        imu_accel_noise_g=0.0,
        imu_gyro_noise_dps=0.0,
        imu_gyro_bias_sigma_dps=0.0,
    )


def two_strata_scene_text(
    area_half_m: float = 12.0,
    shrub_cover: float = 0.6,
    shrub_top_m: float = 2.0,
    canopy_low_m: float = 8.0,
    canopy_high_m: float = 12.0,
) -> str:
    """Flat plot with a shrub layer at ~60% cover plus a canopy layer.

    The shrub field (ellipsoids on a grid, footprints sized to the
    requested cover) occupies the southern half; the canopy ellipsoids,
    spanning [canopy_low, canopy_high], float over open ground on the
    northern half so the terrain model beneath them stays clean. Nothing
    returns between shrub_top and canopy_low: the height histogram's gap
    is constructed to be exactly that band.
    """
    lines = ["ground 0 0 0 60"]
    spacing = 2.5
    n = int(2 * area_half_m / spacing)
    # footprint pi r^2 per spacing^2 cell = cover  ->  r
    r = float(np.sqrt(shrub_cover * spacing**2 / np.pi))
    rz = shrub_top_m / 2.0
    for i in range(n):
        for j in range(n // 2):
            cx = -area_half_m + spacing * (i + 0.5)
            cy = -area_half_m + spacing * (j + 0.5)
            lines.append(f"ellipsoid {cx} {cy} {rz} {r} {r} {rz} 90")
    cz = (canopy_low_m + canopy_high_m) / 2.0
    crz = (canopy_high_m - canopy_low_m) / 2.0
    for cx, cy in [(-7.0, 6.0), (-2.5, 7.5), (2.5, 6.0), (7.0, 7.5)]:
        lines.append(f"ellipsoid {cx} {cy} {cz} 3.5 3.5 {crz} 140")
    return "\n".join(lines) + "\n"


def treeless_scene_text(shrub_top_m: float = 2.4) -> str:
    """Shrub-only plot: nothing returns above shrub_top_m."""
    lines = ["ground 0 0 0 60"]
    rz = shrub_top_m / 2.0
    for i in range(8):
        for j in range(8):
            cx = -10.0 + 2.5 * (i + 0.5)
            cy = -10.0 + 2.5 * (j + 0.5)
            lines.append(f"ellipsoid {cx} {cy} {rz} 1.1 1.1 {rz} 90")
    return "\n".join(lines) + "\n"


def dense_canopy_scene_text(
    top_m: float = 11.0, bottom_m: float = 8.0, half_m: float = 60.0
) -> str:
    """Near-closed canopy: a broad slab overhead plus a few trunks."""
    lines = [
        "ground 0 0 0 60",
        f"box {-half_m} {-half_m} {bottom_m} {half_m} {half_m} {top_m} 150",
    ]
    for cx, cy in [(-6, -6), (6, -6), (-6, 6), (6, 6)]:
        lines.append(f"cylinder {cx} {cy} 0.25 0 {bottom_m} 170")
    return "\n".join(lines) + "\n"


def cloud_from(scene_text, cfg, pose=None, quiet=False):
    scene = sim.parse_scene(scene_text)
    pose = pose or sim.RigPose()
    capture = quiet_capture if quiet else sim.run_capture
    return assembly.assemble_capture(capture(scene, pose, cfg))
