"""Vegetation-structure metrics over ground-normalized point heights.

The processing chain mirrors a plot-level field survey: grid a terrain
model from per-cell minima, normalize every point against it, then
summarize the height distribution as a 20 cm histogram (ground bin
counted but hidden), a Shannon diversity index over 50 cm classes, a
shrub/tree cut-off read from the histogram valley, the shrub return
ratio, and 1 m planar point-density grids.

Height-class membership is decided on a 1 um grid so that exact bin
boundaries (0.2, 0.4, ...) classify predictably in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .core import PointCloud

GROUND_LIMIT_M = 0.2
DEFAULT_HIST_BIN_M = 0.2
DEFAULT_SHANNON_CLASS_M = 0.5
DEFAULT_DTM_CELL_M = 0.5
DEFAULT_DENSITY_CELL_M = 1.0
GROUND_BAND_M = 0.15
NODATA = -9999.0


class EmptyCloudError(ValueError):
    pass


class StrataNotSeparableError(ValueError):
    """The height histogram has no valley separating two strata."""


def _micro(values) -> np.ndarray:
    """Quantize meters to integer micrometers for boundary-stable binning."""
    return np.rint(np.asarray(values, dtype=np.float64) * 1e6).astype(np.int64)


def _micro_scalar(value: float, name: str) -> int:
    if not (value > 0):
        raise ValueError(f"{name} must be > 0, got {value}")
    return int(round(value * 1e6))


@dataclass
class DtmGrid:
    """Gridded ground elevation; row 0 is the southernmost row.

    Cells never seen by a ground return are filled from their nearest
    filled cell, so queries inside the grid extent always resolve;
    `filled` records which cells held real minima.
    """

    origin_x: float
    origin_y: float
    cell_m: float
    values: np.ndarray
    filled: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def value_at(self, x, y) -> np.ndarray:
        """Bilinear interpolation between cell centers, clamped at edges."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        nrows, ncols = self.values.shape
        cx = (x - self.origin_x) / self.cell_m - 0.5
        cy = (y - self.origin_y) / self.cell_m - 0.5
        cx = np.clip(cx, 0.0, ncols - 1.0)
        cy = np.clip(cy, 0.0, nrows - 1.0)
        ix = np.clip(np.floor(cx).astype(int), 0, max(ncols - 2, 0))
        iy = np.clip(np.floor(cy).astype(int), 0, max(nrows - 2, 0))
        fx = cx - ix
        fy = cy - iy
        ix1 = np.minimum(ix + 1, ncols - 1)
        iy1 = np.minimum(iy + 1, nrows - 1)
        v00 = self.values[iy, ix]
        v01 = self.values[iy, ix1]
        v10 = self.values[iy1, ix]
        v11 = self.values[iy1, ix1]
        return (
            v00 * (1 - fx) * (1 - fy)
            + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy
            + v11 * fx * fy
        )


def build_dtm(cloud: PointCloud, cell_m: float = DEFAULT_DTM_CELL_M) -> DtmGrid:
    """Terrain model from per-cell elevation minima.

    The ground elevation of a cell is the lowest z among its points no
    higher than 0.15 m above the cell minimum, which for a minimum
    estimator is the cell minimum itself. Cells without points copy
    their nearest filled neighbor.
    """
    if cloud.is_empty:
        raise EmptyCloudError("empty cloud")
    if not cell_m > 0:
        raise ValueError(f"cell size must be > 0, got {cell_m}")
    x, y, z = cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]
    ix = np.floor(x / cell_m).astype(np.int64)
    iy = np.floor(y / cell_m).astype(np.int64)
    x0, y0 = ix.min(), iy.min()
    ncols = int(ix.max() - x0) + 1
    nrows = int(iy.max() - y0) + 1
    values = np.full((nrows, ncols), np.inf)
    np.minimum.at(values, (iy - y0, ix - x0), z)
    filled = np.isfinite(values)
    if not filled.all():
        nearest = ndimage.distance_transform_edt(
            ~filled, return_distances=False, return_indices=True
        )
        values = values[tuple(nearest)]
    return DtmGrid(
        origin_x=float(x0) * cell_m,
        origin_y=float(y0) * cell_m,
        cell_m=cell_m,
        values=values,
        filled=filled,
    )


def normalize_heights(cloud: PointCloud, dtm: DtmGrid) -> np.ndarray:
    """Per-point height above the terrain model, clamped at zero."""
    if cloud.is_empty:
        return np.empty(0)
    h = cloud.xyz[:, 2] - dtm.value_at(cloud.xyz[:, 0], cloud.xyz[:, 1])
    return np.maximum(h, 0.0)


@dataclass
class HeightHistogram:
    """Counts per [k*bin, (k+1)*bin) for k >= 1; the ground bin (k = 0)
    is folded into total_points but never displayed."""

    bin_m: float
    counts: np.ndarray  # displayed bins, index 0 <-> k = 1
    ground_count: int
    total_points: int

    @property
    def percentages(self) -> np.ndarray:
        if self.total_points == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return 100.0 * self.counts / self.total_points

    @property
    def ground_percentage(self) -> float:
        if self.total_points == 0:
            return 0.0
        return 100.0 * self.ground_count / self.total_points

    def bin_low(self, index: int) -> float:
        return (index + 1) * self.bin_m

    def bin_high(self, index: int) -> float:
        return (index + 2) * self.bin_m

    def rows(self) -> list[tuple[float, float, int, float]]:
        pct = self.percentages
        return [
            (self.bin_low(i), self.bin_high(i), int(self.counts[i]), float(pct[i]))
            for i in range(len(self.counts))
        ]

    def to_csv(self) -> str:
        lines = ["bin_low_m,bin_high_m,count,percent"]
        lines += [
            f"{lo:.2f},{hi:.2f},{count},{pct:.6f}" for lo, hi, count, pct in self.rows()
        ]
        return "\n".join(lines) + "\n"


def vegetation_histogram(
    heights: np.ndarray, bin_m: float = DEFAULT_HIST_BIN_M
) -> HeightHistogram:
    """Histogram of normalized heights with the ground bin hidden.

    Percentages are shares of ALL points, ground included, so the
    displayed bars plus the hidden ground bar always total 100%.
    """
    h = np.asarray(heights, dtype=np.float64)
    bin_um = _micro_scalar(bin_m, "bin_m")
    total = len(h)
    if total == 0:
        return HeightHistogram(bin_m, np.zeros(0, dtype=np.int64), 0, 0)
    k = _micro(h) // bin_um
    k = np.maximum(k, 0)
    ground = int((k == 0).sum())
    above = k[k >= 1]
    if len(above) == 0:
        return HeightHistogram(bin_m, np.zeros(0, dtype=np.int64), ground, total)
    counts = np.bincount((above - 1).astype(np.int64))
    return HeightHistogram(bin_m, counts.astype(np.int64), ground, total)


def shannon_index(heights: np.ndarray, class_m: float = DEFAULT_SHANNON_CLASS_M) -> float:
    """Shannon diversity -sum(p ln p) over occupied height classes.

    Heights below the 0.2 m ground limit are excluded, matching the
    histogram's hidden bin; classes are [k*class_m, (k+1)*class_m).
    """
    h = np.asarray(heights, dtype=np.float64)
    class_um = _micro_scalar(class_m, "class_m")
    hq = _micro(h)
    hq = hq[hq >= int(GROUND_LIMIT_M * 1e6)]
    if len(hq) == 0:
        raise ValueError("no points above the ground limit; Shannon index undefined")
    _, counts = np.unique(hq // class_um, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _smooth3(values: np.ndarray) -> np.ndarray:
    """Centered moving average, window 3, truncated at the ends."""
    if len(values) == 0:
        return values.astype(np.float64)
    padded = np.concatenate([values[:1], values, values[-1:]])
    kernel = np.ones(3) / 3.0
    sm = np.convolve(padded, kernel, mode="valid")
    # ends: average of the two available samples, not a mirrored triple
    if len(values) >= 2:
        sm[0] = values[:2].mean()
        sm[-1] = values[-2:].mean()
    return sm


def detect_shco(hist: HeightHistogram, search_max_m: float = 6.0) -> float:
    """Shrub height cut-off: the valley between the two strata modes.

    The displayed percentages are smoothed with a centered window of 3;
    the cut-off is the upper edge of the deepest bin strictly between
    the first local maximum and the largest maximum above it (the
    midmost bin when a flat gap ties). Raises StrataNotSeparableError
    when no such valley exists within the search ceiling, in which case
    a cut-off must be supplied manually.
    """
    pct = hist.percentages
    if len(pct) < 3 or hist.total_points == 0:
        raise StrataNotSeparableError("histogram too small to hold two strata")
    smooth = _smooth3(pct)
    padded = np.concatenate([[-1.0], smooth, [-1.0]])
    peaks, _ = signal.find_peaks(padded)
    peaks = np.asarray(
        [p - 1 for p in peaks if smooth[p - 1] > 0.0], dtype=np.int64
    )
    if len(peaks) < 2:
        raise StrataNotSeparableError("fewer than two height modes found")
    first = int(peaks[0])
    if hist.bin_high(first) > search_max_m:
        raise StrataNotSeparableError(
            f"first height mode lies above the {search_max_m} m search ceiling"
        )
    later = peaks[peaks > first]
    big = int(later[np.argmax(smooth[later])])
    if big <= first + 1:
        raise StrataNotSeparableError("no interior bin between the two modes")
    valley = smooth[first + 1 : big]
    vmin = valley.min()
    tied = np.nonzero(np.isclose(valley, vmin, rtol=0.0, atol=1e-12))[0]
    runs = np.split(tied, np.nonzero(np.diff(tied) > 1)[0] + 1)
    run = runs[0]
    chosen = first + 1 + int(run[(len(run) - 1) // 2])
    shco = hist.bin_high(chosen)
    if shco > search_max_m:
        raise StrataNotSeparableError(
            f"valley at {shco} m lies above the {search_max_m} m search ceiling"
        )
    return shco


@dataclass(frozen=True)
class StrataCounts:
    """Ground / shrub / tree partition of the normalized heights."""

    ngp: int
    nsp: int
    ntp: int
    shco_m: float

    @property
    def nsr(self) -> float:
        return shrub_return_ratio(self.nsp, self.ngp)

    @property
    def nsr_percent(self) -> float:
        return 100.0 * self.nsr


def shrub_return_ratio(nsp: int, ngp: int) -> float:
    """Shrub-cover proxy NSP / (NSP + NGP), in [0, 1]."""
    if nsp < 0 or ngp < 0:
        raise ValueError("counts must be non-negative")
    if nsp + ngp == 0:
        raise ValueError("no shrub or ground points; ratio undefined")
    return nsp / (nsp + ngp)


def classify_and_nsr(heights: np.ndarray, shco_m: float) -> StrataCounts:
    """Partition heights at the ground limit and the shrub cut-off.

    Ground: 0 <= h < 0.2; shrub: 0.2 <= h <= shco (inclusive); tree:
    h > shco.
    """
    if not shco_m > GROUND_LIMIT_M:
        raise ValueError(f"shrub cut-off must exceed {GROUND_LIMIT_M} m, got {shco_m}")
    hq = _micro(np.asarray(heights, dtype=np.float64))
    ground_um = int(GROUND_LIMIT_M * 1e6)
    shco_um = int(round(shco_m * 1e6))
    ngp = int((hq < ground_um).sum())
    nsp = int(((hq >= ground_um) & (hq <= shco_um)).sum())
    ntp = int((hq > shco_um).sum())
    return StrataCounts(ngp=ngp, nsp=nsp, ntp=ntp, shco_m=shco_m)


@dataclass
class DensityGrid:
    """Point counts per planar cell; row 0 is the southernmost row."""

    origin_x: float
    origin_y: float
    cell_m: float
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def point_density_grid(cloud: PointCloud, cell_m: float = DEFAULT_DENSITY_CELL_M) -> DensityGrid:
    """Counts of points per half-open [k*cell, (k+1)*cell) planar cell."""
    if not cell_m > 0:
        raise ValueError(f"cell size must be > 0, got {cell_m}")
    if cloud.is_empty:
        return DensityGrid(0.0, 0.0, cell_m, np.zeros((1, 1), dtype=np.int64))
    ix = np.floor(cloud.xyz[:, 0] / cell_m).astype(np.int64)
    iy = np.floor(cloud.xyz[:, 1] / cell_m).astype(np.int64)
    x0, y0 = ix.min(), iy.min()
    counts = np.zeros((int(iy.max() - y0) + 1, int(ix.max() - x0) + 1), dtype=np.int64)
    np.add.at(counts, (iy - y0, ix - x0), 1)
    return DensityGrid(float(x0) * cell_m, float(y0) * cell_m, cell_m, counts)


@dataclass
class SummaryMetrics:
    """Plot-level roll-up; `empty` flags a cloud with no usable points."""

    empty: bool
    point_count: int = 0
    max_height_m: float | None = None
    shco_m: float | None = None
    ngp: int | None = None
    nsp: int | None = None
    ntp: int | None = None
    nsr: float | None = None

    def to_lines(self) -> list[str]:
        def fmt(v):
            return "n/a" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))

        return [
            f"empty={str(self.empty).lower()}",
            f"point_count={self.point_count}",
            f"max_height_m={fmt(self.max_height_m)}",
            f"shco_m={fmt(self.shco_m)}",
            f"ngp={fmt(self.ngp)}",
            f"nsp={fmt(self.nsp)}",
            f"ntp={fmt(self.ntp)}",
            f"nsr={fmt(self.nsr)}",
        ]


def summary_metrics(heights: np.ndarray, counts: StrataCounts | None = None) -> SummaryMetrics:
    """Roll heights and an optional strata partition into one record."""
    h = np.asarray(heights, dtype=np.float64)
    if len(h) == 0:
        return SummaryMetrics(empty=True)
    out = SummaryMetrics(empty=False, point_count=len(h), max_height_m=float(h.max()))
    if counts is not None:
        out.shco_m = counts.shco_m
        out.ngp = counts.ngp
        out.nsp = counts.nsp
        out.ntp = counts.ntp
        out.nsr = counts.nsr
    return out


def write_ascii_grid(
    path: str | Path,
    values: np.ndarray,
    xllcorner: float,
    yllcorner: float,
    cell_m: float,
    nodata: float = NODATA,
    fmt: str = "%.4f",
) -> None:
    """Write a south-origin grid as an ASCII raster (north row first)."""
    values = np.asarray(values)
    nrows, ncols = values.shape
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"ncols {ncols}\n")
        fh.write(f"nrows {nrows}\n")
        fh.write(f"xllcorner {xllcorner!r}\n")
        fh.write(f"yllcorner {yllcorner!r}\n")
        fh.write(f"cellsize {cell_m!r}\n")
        fh.write(f"nodata_value {nodata!r}\n")
        for row in values[::-1]:
            fh.write(" ".join(fmt % v for v in row) + "\n")


def read_ascii_grid(path: str | Path) -> tuple[np.ndarray, dict[str, float]]:
    """Read an ASCII raster back into a south-origin grid plus header."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header: dict[str, float] = {}
    body_start = 0
    for line in lines:
        parts = line.split()
        if len(parts) == 2 and parts[0].lower() in {
            "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value",
        }:
            header[parts[0].lower()] = float(parts[1])
            body_start += 1
        else:
            break
    rows = [np.array(ln.split(), dtype=np.float64) for ln in lines[body_start:] if ln.strip()]
    values = np.vstack(rows)[::-1]
    if "nrows" in header and values.shape[0] != int(header["nrows"]):
        raise ValueError("nrows header does not match raster body")
    if "ncols" in header and values.shape[1] != int(header["ncols"]):
        raise ValueError("ncols header does not match raster body")
    return values, header
