"""Batch command-line surface wiring the pipeline end to end.

Subcommands: simulate, decode, assemble, analyze, density,
expected-count. Summaries go to stdout as key=value lines; every
artifact is written to a temporary name in its destination directory
and renamed on success, so a failing run leaves no partial files.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__, analytics, assembly, codec, core, sim

SEED_ENV_VAR = "LCLS_SEED"


@dataclass
class CommandOutcome:
    exit_code: int
    artifacts_written: list[Path] = field(default_factory=list)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting."""

    def error(self, message: str):
        raise _UsageError(message)


def _atomic_write_text(path: Path, text: str) -> Path:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class _StagedDir:
    """Build a directory next to its destination, renaming on success."""

    def __init__(self, dest: Path):
        self.dest = dest
        if dest.exists() and any(dest.iterdir()):
            raise ValueError(f"output directory {dest} already exists and is not empty")
        dest.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(
            tempfile.mkdtemp(dir=dest.parent, prefix=f".{dest.name}.", suffix=".tmp")
        )

    def commit(self) -> Path:
        if self.dest.exists():
            self.dest.rmdir()
        os.replace(self.tmp, self.dest)
        return self.dest

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lcls", description=__doc__, add_help=True)
    parser.add_argument(
        "--version",
        action="version",
        version=f"lcls {__version__} (codec format version {codec.FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add_config_overrides(p: _Parser) -> None:
        p.add_argument("--step", type=int, help="motor steps between samplings")
        p.add_argument("--rep", type=int, help="sweeps per position")
        p.add_argument("--rot", type=float, help="total table rotation, degrees")
        p.add_argument("--microstep", choices=[m.value for m in core.Microstep])
        p.add_argument("--tau", type=float, help="filter time constant, seconds")
        p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
        p.add_argument("--dropout", type=float)
        p.add_argument("--seed", type=int)

    p_sim = sub.add_parser("simulate", help="run a capture against a scene file")
    p_sim.add_argument("--scene", required=True)
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True, help="capture directory to create")
    add_config_overrides(p_sim)
    p_sim.add_argument("--roll", type=float, default=0.0, help="true rig roll, degrees")
    p_sim.add_argument("--pitch", type=float, default=0.0, help="true rig pitch, degrees")
    p_sim.add_argument("--heading", type=float, default=0.0, help="compass heading, degrees")
    p_sim.add_argument("--height", type=float, default=1.5, help="sensor height, meters")
    p_sim.add_argument("--lat", type=float, default=0.0)
    p_sim.add_argument("--lon", type=float, default=0.0)
    p_sim.add_argument("--alt", type=float, default=0.0)
    p_sim.add_argument("--fix-time", type=float, default=0.0, dest="fix_time")

    p_dec = sub.add_parser("decode", help="frame a raw packet file and report")
    p_dec.add_argument("--raw", required=True)

    p_asm = sub.add_parser("assemble", help="capture directory -> point cloud CSV")
    p_asm.add_argument("--capture", required=True)
    p_asm.add_argument("--out", required=True, help="output .xyzit.csv path")
    p_asm.add_argument("--no-dedup", action="store_true", dest="no_dedup")

    p_ana = sub.add_parser("analyze", help="vegetation metrics from a cloud CSV")
    p_ana.add_argument("--cloud", required=True)
    p_ana.add_argument("--out", required=True, help="analysis directory to create")
    p_ana.add_argument("--shco", type=float, help="manual shrub cut-off, meters")
    p_ana.add_argument("--bin", type=float, default=analytics.DEFAULT_HIST_BIN_M, dest="bin_m")
    p_ana.add_argument(
        "--class", type=float, default=analytics.DEFAULT_SHANNON_CLASS_M, dest="class_m"
    )

    p_den = sub.add_parser("density", help="planar point-density raster")
    p_den.add_argument("--cloud", required=True)
    p_den.add_argument("--cell", type=float, default=analytics.DEFAULT_DENSITY_CELL_M)
    p_den.add_argument("--out", required=True, help="output .asc path")

    p_exp = sub.add_parser("expected-count", help="print the capture's point budget")
    p_exp.add_argument("--config", required=True)
    add_config_overrides(p_exp)

    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    mapping = {
        "step": args.step,
        "rep": args.rep,
        "rot": args.rot,
        "microstep": args.microstep,
        "tau": args.tau,
        "noise_sigma": args.noise_sigma,
        "dropout": args.dropout,
        "seed": args.seed,
    }
    if mapping["seed"] is None and os.environ.get(SEED_ENV_VAR):
        mapping["seed"] = int(os.environ[SEED_ENV_VAR])
    return {k: v for k, v in mapping.items() if v is not None}


def _cmd_simulate(args) -> CommandOutcome:
    scene = sim.load_scene(args.scene)
    cfg = core.load_config(args.config, _overrides_from_args(args))
    pose = sim.RigPose(
        sensor_height_m=args.height,
        true_roll_deg=args.roll,
        true_pitch_deg=args.pitch,
        true_heading_deg=args.heading,
        geo=core.GeoFix(args.lat, args.lon, args.alt, args.fix_time),
    )
    record = sim.run_capture(scene, pose, cfg)
    staged = _StagedDir(Path(args.out))
    try:
        record.save(staged.tmp)
        out = staged.commit()
    except BaseException:
        staged.abort()
        raise
    print(f"positions={cfg.position_count}")
    print(f"sweeps={cfg.position_count * cfg.rep_count}")
    print(f"packets={cfg.position_count * cfg.rep_count * codec.PACKETS_PER_SWEEP}")
    print(f"out={out}")
    return CommandOutcome(0, [out / n for n in ("raw.lcraw", "imu.csv", "meta.txt")])


def _cmd_decode(args) -> CommandOutcome:
    data = Path(args.raw).read_bytes()
    sweeps, diags = codec.decode_stream(data)
    print(f"bytes={len(data)}")
    print(f"packets={len(data) // codec.PACKET_SIZE}")
    print(f"sweeps={len(sweeps)}")
    print(f"returns={sum(int((s.distance_2mm > 0).sum()) for s in sweeps)}")
    print(f"issues={len(diags.issues)}")
    print(f"residue_bytes={diags.residue_bytes}")
    for issue in diags.issues:
        loc = "" if issue.packet_index is None else f" packet={issue.packet_index}"
        print(f"issue: kind={issue.kind} offset={issue.byte_offset}{loc} {issue.message}")
    return CommandOutcome(0)


def _cmd_assemble(args) -> CommandOutcome:
    record = sim.CaptureRecord.load(args.capture)
    cloud = assembly.assemble_capture(record)
    assembled = len(cloud)
    if not args.no_dedup:
        cloud = assembly.filter_duplicates(cloud)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp")
    os.close(fd)
    try:
        assembly.write_xyzit(tmp, cloud)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"points_assembled={assembled}")
    print(f"points_written={len(cloud)}")
    print(f"duplicates_removed={assembled - len(cloud)}")
    print(f"out={out}")
    return CommandOutcome(0, [out])


def _cmd_analyze(args) -> CommandOutcome:
    cloud = assembly.read_xyzit(args.cloud)
    if cloud.is_empty:
        raise analytics.EmptyCloudError("empty cloud")
    dtm = analytics.build_dtm(cloud)
    heights = analytics.normalize_heights(cloud, dtm)
    hist = analytics.vegetation_histogram(heights, bin_m=args.bin_m)

    try:
        shannon = analytics.shannon_index(heights, class_m=args.class_m)
    except ValueError:
        shannon = None

    shco: float | None = args.shco
    shco_note = "manual" if shco is not None else ""
    if shco is None:
        try:
            shco = analytics.detect_shco(hist)
            shco_note = "detected"
        except analytics.StrataNotSeparableError as exc:
            shco_note = f"not separable ({exc})"
    counts = analytics.classify_and_nsr(heights, shco) if shco is not None else None
    summary = analytics.summary_metrics(heights, counts)

    staged = _StagedDir(Path(args.out))
    try:
        analytics.write_ascii_grid(
            staged.tmp / "dtm.asc", dtm.values, dtm.origin_x, dtm.origin_y, dtm.cell_m
        )
        (staged.tmp / "histogram.csv").write_text(hist.to_csv(), encoding="utf-8")
        summary_lines = summary.to_lines()
        summary_lines.insert(
            1, f"shannon={'n/a' if shannon is None else f'{shannon:.6f}'}"
        )
        summary_lines.insert(2, f"shco_source={shco_note or 'n/a'}")
        (staged.tmp / "summary.txt").write_text(
            "\n".join(summary_lines) + "\n", encoding="utf-8"
        )
        out = staged.commit()
    except BaseException:
        staged.abort()
        raise
    for line in summary_lines:
        print(line)
    print(f"out={out}")
    return CommandOutcome(0, [out / n for n in ("dtm.asc", "histogram.csv", "summary.txt")])


def _cmd_density(args) -> CommandOutcome:
    cloud = assembly.read_xyzit(args.cloud)
    grid = analytics.point_density_grid(cloud, cell_m=args.cell)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp")
    os.close(fd)
    try:
        analytics.write_ascii_grid(
            tmp, grid.counts, grid.origin_x, grid.origin_y, grid.cell_m, fmt="%d"
        )
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    print(f"cells={grid.counts.size}")
    print(f"total_points={grid.total}")
    print(f"out={out}")
    return CommandOutcome(0, [out])


def _cmd_expected_count(args) -> CommandOutcome:
    cfg = core.load_config(args.config, _overrides_from_args(args))
    print(f"positions={cfg.position_count}")
    print(f"np={cfg.expected_point_count}")
    try:
        res = assembly.effective_resolution(cfg.effective_step_deg * cfg.step_count)
        print(f"effective_resolution_deg={res}")
    except ValueError:
        print("effective_resolution_deg=n/a")
    return CommandOutcome(0)


_HANDLERS = {
    "simulate": _cmd_simulate,
    "decode": _cmd_decode,
    "assemble": _cmd_assemble,
    "analyze": _cmd_analyze,
    "density": _cmd_density,
    "expected-count": _cmd_expected_count,
}


def dispatch(argv: list[str]) -> CommandOutcome:
    """Run one CLI invocation; returns instead of exiting."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandOutcome(1)
    except SystemExit as exc:  # --help / --version print and stop
        return CommandOutcome(0 if exc.code in (0, None) else 1)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return CommandOutcome(1)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CommandOutcome(2)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]).exit_code)


if __name__ == "__main__":
    main()
