from pathlib import Path

import numpy as np
import pytest

from lcls import analytics, assembly, codec, core
from lcls.cli import dispatch

from conftest import ENCLOSING_BOX, two_strata_scene_text

BASE_CONFIG = "step=5\nrep=1\nrot=18\nnoise_sigma=0.02\nseed=4\n"


@pytest.fixture()
def ws(tmp_path):
    (tmp_path / "scene.scene").write_text(ENCLOSING_BOX)
    (tmp_path / "cap.cfg").write_text(BASE_CONFIG)
    return tmp_path


def run(argv, capsys):
    outcome = dispatch([str(a) for a in argv])
    captured = capsys.readouterr()
    return outcome, captured.out, captured.err


class TestExpectedCount:
    def test_reference_budget(self, ws, capsys):
        outcome, out, _ = run(
            ["expected-count", "--config", ws / "cap.cfg", "--step", 1, "--rep", 10, "--rot", 180],
            capsys,
        )
        assert outcome.exit_code == 0
        assert "np=2624000" in out
        assert "positions=100" in out
        assert "effective_resolution_deg=0.2" in out

    def test_unrepresentable_resolution(self, ws, capsys):
        outcome, out, _ = run(
            ["expected-count", "--config", ws / "cap.cfg", "--microstep", "eighth",
             "--step", 1, "--rot", 18],
            capsys,
        )
        assert outcome.exit_code == 0
        assert "effective_resolution_deg=n/a" in out

    def test_bad_config_is_data_error(self, ws, capsys):
        (ws / "bad.cfg").write_text("step=3\nrep=1\nrot=100\n")
        outcome, _, err = run(["expected-count", "--config", ws / "bad.cfg"], capsys)
        assert outcome.exit_code == 2
        assert "error:" in err


class TestSimulateAssemble:
    def test_end_to_end_count_matches_budget(self, ws, capsys):
        outcome, out, _ = run(
            ["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "cap"],
            capsys,
        )
        assert outcome.exit_code == 0
        assert (ws / "cap" / "raw.lcraw").exists()

        outcome2, out2, _ = run(
            ["expected-count", "--config", ws / "cap.cfg"], capsys
        )
        budget = int(next(l for l in out2.splitlines() if l.startswith("np=")).split("=")[1])

        outcome3, out3, _ = run(
            ["assemble", "--capture", ws / "cap", "--out", ws / "cloud.xyzit.csv",
             "--no-dedup"],
            capsys,
        )
        assert outcome3.exit_code == 0
        cloud = assembly.read_xyzit(ws / "cloud.xyzit.csv")
        assert len(cloud) == budget
        assert f"points_written={budget}" in out3

    def test_dedup_default_removes_repeats(self, ws, capsys):
        (ws / "rep.cfg").write_text("step=5\nrep=2\nrot=18\nnoise_sigma=0\nseed=1\n")
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "rep.cfg",
             "--out", ws / "cap2"], capsys)
        outcome, out, _ = run(
            ["assemble", "--capture", ws / "cap2", "--out", ws / "c2.xyzit.csv"], capsys
        )
        assert outcome.exit_code == 0
        removed = int(next(l for l in out.splitlines() if l.startswith("duplicates_removed=")).split("=")[1])
        assert removed > 0

    def test_existing_output_dir_is_error(self, ws, capsys):
        target = ws / "cap3"
        target.mkdir()
        (target / "junk.txt").write_text("x")
        outcome, _, err = run(
            ["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", target],
            capsys,
        )
        assert outcome.exit_code == 2
        assert (target / "junk.txt").exists()
        assert not (target / "raw.lcraw").exists()

    def test_failure_leaves_no_partial_dir(self, ws, capsys):
        outcome, _, err = run(
            ["simulate", "--scene", ws / "missing.scene", "--config", ws / "cap.cfg",
             "--out", ws / "cap4"],
            capsys,
        )
        assert outcome.exit_code == 2
        assert not (ws / "cap4").exists()
        assert not list(ws.glob(".cap4*"))

    def test_seed_env_fallback(self, ws, capsys, monkeypatch):
        monkeypatch.setenv("LCLS_SEED", "77")
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "e1"], capsys)
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "e2"], capsys)
        assert (ws / "e1" / "raw.lcraw").read_bytes() == (ws / "e2" / "raw.lcraw").read_bytes()
        meta = (ws / "e1" / "meta.txt").read_text()
        assert "seed=77" in meta


class TestDecode:
    def test_reports_diagnostics(self, ws, capsys):
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "cap"], capsys)
        raw = ws / "cap" / "raw.lcraw"
        blob = bytearray(raw.read_bytes())
        blob[0] ^= 0xFF
        bad = ws / "damaged.lcraw"
        bad.write_bytes(bytes(blob) + b"\x01\x02\x03")
        outcome, out, _ = run(["decode", "--raw", bad], capsys)
        assert outcome.exit_code == 0
        assert "issues=2" in out
        assert "residue_bytes=" in out
        assert "bad-packet" in out and "trailing-partial-packet" in out

    def test_clean_stream(self, ws, capsys):
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "cap"], capsys)
        outcome, out, _ = run(["decode", "--raw", ws / "cap" / "raw.lcraw"], capsys)
        assert outcome.exit_code == 0
        assert "sweeps=2" in out and "issues=0" in out

    def test_missing_file(self, ws, capsys):
        outcome, _, err = run(["decode", "--raw", ws / "nope.lcraw"], capsys)
        assert outcome.exit_code == 2


class TestAnalyze:
    def make_cloud(self, ws, capsys):
        (ws / "plot.scene").write_text(two_strata_scene_text())
        (ws / "plot.cfg").write_text("step=5\nrep=1\nrot=180\nseed=6\n")
        run(["simulate", "--scene", ws / "plot.scene", "--config", ws / "plot.cfg",
             "--out", ws / "plotcap"], capsys)
        run(["assemble", "--capture", ws / "plotcap", "--out", ws / "plot.xyzit.csv"],
            capsys)
        return ws / "plot.xyzit.csv"

    def test_full_analysis(self, ws, capsys):
        cloud_path = self.make_cloud(ws, capsys)
        outcome, out, _ = run(
            ["analyze", "--cloud", cloud_path, "--out", ws / "analysis"], capsys
        )
        assert outcome.exit_code == 0
        for name in ("dtm.asc", "histogram.csv", "summary.txt"):
            assert (ws / "analysis" / name).exists()
        summary = (ws / "analysis" / "summary.txt").read_text()
        assert "shannon=" in summary and "nsr=" in summary
        assert "shco_source=detected" in summary
        hist_lines = (ws / "analysis" / "histogram.csv").read_text().splitlines()
        assert hist_lines[0] == "bin_low_m,bin_high_m,count,percent"

    def test_manual_shco_override(self, ws, capsys):
        cloud_path = self.make_cloud(ws, capsys)
        outcome, out, _ = run(
            ["analyze", "--cloud", cloud_path, "--out", ws / "a2", "--shco", 2.5], capsys
        )
        assert outcome.exit_code == 0
        assert "shco_source=manual" in (ws / "a2" / "summary.txt").read_text()
        assert "shco_m=2.500000" in (ws / "a2" / "summary.txt").read_text()

    def test_empty_cloud_is_data_error(self, ws, capsys):
        empty = ws / "empty.xyzit.csv"
        assembly.write_xyzit(empty, core.empty_cloud())
        outcome, _, err = run(["analyze", "--cloud", empty, "--out", ws / "a3"], capsys)
        assert outcome.exit_code == 2
        assert "empty cloud" in err
        assert not (ws / "a3").exists()


class TestDensity:
    def test_raster_written(self, ws, capsys):
        run(["simulate", "--scene", ws / "scene.scene", "--config", ws / "cap.cfg",
             "--out", ws / "cap"], capsys)
        run(["assemble", "--capture", ws / "cap", "--out", ws / "c.xyzit.csv"], capsys)
        outcome, out, _ = run(
            ["density", "--cloud", ws / "c.xyzit.csv", "--cell", 1.0,
             "--out", ws / "d.asc"],
            capsys,
        )
        assert outcome.exit_code == 0
        values, header = analytics.read_ascii_grid(ws / "d.asc")
        cloud = assembly.read_xyzit(ws / "c.xyzit.csv")
        assert int(values.sum()) == len(cloud)
        assert header["cellsize"] == 1.0


class TestUsage:
    def test_unknown_command(self, capsys):
        outcome, _, err = run(["frobnicate"], capsys)
        assert outcome.exit_code == 1

    def test_missing_required_flag(self, capsys):
        outcome, _, err = run(["decode"], capsys)
        assert outcome.exit_code == 1
        assert "error:" in err

    def test_no_command(self, capsys):
        outcome, _, err = run([], capsys)
        assert outcome.exit_code == 1

    def test_version_names_codec_format(self, capsys):
        outcome, out, _ = run(["--version"], capsys)
        assert outcome.exit_code == 0
        assert "codec format version 1" in out
