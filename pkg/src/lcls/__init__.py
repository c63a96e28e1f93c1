"""Software twin of a low-cost turntable LiDAR scanner.

Simulates a 16-beam ranging head mounted sideways on a geared stepper
turntable, encodes and decodes its firing packets, fuses inertial data
for tilt correction, assembles corrected georeferenced point clouds,
and computes vegetation-structure metrics from them.
"""

__version__ = "0.1.0"

from .core import (
    SENSOR,
    Attitude,
    CloudMeta,
    ConfigError,
    GeoFix,
    ImuSample,
    Microstep,
    PointCloud,
    ScanConfig,
    SensorConstants,
    validate_config,
)

__all__ = [
    "SENSOR",
    "Attitude",
    "CloudMeta",
    "ConfigError",
    "GeoFix",
    "ImuSample",
    "Microstep",
    "PointCloud",
    "ScanConfig",
    "SensorConstants",
    "validate_config",
    "__version__",
]
