import numpy as np
import pytest

from lcls import core
from lcls.core import ConfigError, Microstep, ScanConfig, SENSOR, validate_config


class TestMicrostep:
    def test_fractions(self):
        assert Microstep.FULL.fraction == 1.0
        assert Microstep.HALF.fraction == 0.5
        assert Microstep.QUARTER.fraction == 0.25
        assert Microstep.EIGHTH.fraction == 0.125

    def test_exact_millidegrees(self):
        assert [m.step_millideg for m in Microstep] == [1800, 900, 450, 225]

    def test_parse(self):
        assert Microstep.parse(" Half ") is Microstep.HALF
        with pytest.raises(ConfigError):
            Microstep.parse("sixteenth")


class TestSensorConstants:
    def test_per_sweep_budget(self):
        assert SENSOR.returns_per_sweep == 2624
        assert SENSOR.packets_per_sweep * SENSOR.returns_per_packet == 2624
        assert SENSOR.blocks_per_sweep == 164

    def test_beam_fan(self):
        offs = SENSOR.beam_offsets_deg()
        assert len(offs) == 16
        assert offs[0] == -15.0 and offs[-1] == 15.0
        assert np.allclose(np.diff(offs), 2.0)

    def test_range_limits(self):
        assert SENSOR.min_range_m == 0.5
        assert SENSOR.max_range_m == 100.0
        assert SENSOR.range_accuracy_m == 0.03
        assert SENSOR.full_motor_step_deg == 1.8


class TestValidateConfig:
    def test_full_step_180(self):
        cfg = validate_config(ScanConfig(1, 1, 180.0))
        assert cfg.position_count == 100
        assert cfg.expected_point_count == 262400

    def test_single_step_rotation(self):
        cfg = validate_config(ScanConfig(1, 1, 1.8))
        assert cfg.position_count == 1

    def test_indivisible_rotation_rejected(self):
        with pytest.raises(ConfigError, match="not a whole multiple"):
            validate_config(ScanConfig(3, 1, 100.0)).position_count

    def test_idempotent_and_identity(self):
        cfg = ScanConfig(2, 5, 180.0, microstep=Microstep.HALF)
        once = validate_config(cfg)
        twice = validate_config(once)
        assert once is cfg and twice is cfg

    def test_derived_budget_uses_constant_sweep_size(self):
        for cfg in (ScanConfig(1, 1, 360.0), ScanConfig(5, 10, 90.0, microstep=Microstep.QUARTER)):
            cfg = validate_config(cfg)
            assert cfg.expected_point_count == cfg.position_count * cfg.rep_count * 2624

    def test_microstep_scales_positions(self):
        assert validate_config(ScanConfig(1, 1, 180.0, microstep=Microstep.HALF)).position_count == 200
        assert validate_config(ScanConfig(1, 1, 180.0, microstep=Microstep.EIGHTH)).position_count == 800

    @pytest.mark.parametrize(
        "kw",
        [
            dict(step_count=0),
            dict(rep_count=0),
            dict(rotation_deg=0.0),
            dict(rotation_deg=360.1),
            dict(rotation_deg=-10.0),
            dict(tau_s=0.0),
            dict(range_noise_sigma_m=-0.1),
            dict(dropout_prob=1.0),
            dict(dropout_prob=-0.2),
            dict(rng_seed=-1),
            dict(rng_seed=2**64),
        ],
    )
    def test_invalid_fields(self, kw):
        base = dict(step_count=1, rep_count=1, rotation_deg=180.0)
        base.update(kw)
        with pytest.raises(ConfigError):
            validate_config(ScanConfig(**base))

    def test_non_millidegree_rotation_rejected(self):
        with pytest.raises(ConfigError, match="millidegree"):
            validate_config(ScanConfig(1, 1, 1.8000003)).position_count

    def test_position_angles(self):
        cfg = validate_config(ScanConfig(2, 1, 18.0, microstep=Microstep.HALF))
        assert cfg.position_angles_deg() == pytest.approx([0.0, 1.8, 3.6, 5.4, 7.2, 9.0, 10.8, 12.6, 14.4, 16.2])


class TestConfigFile:
    def test_parse_and_defaults(self):
        cfg = core.parse_config_text("step=1\nrep=10\nrot=180\n")
        assert (cfg.step_count, cfg.rep_count, cfg.rotation_deg) == (1, 10, 180.0)
        assert cfg.microstep is Microstep.FULL
        assert cfg.tau_s == 0.1
        assert cfg.range_noise_sigma_m == 0.02
        assert cfg.dropout_prob == 0.0
        assert cfg.rng_seed == 0

    def test_comments_and_blank_lines(self):
        cfg = core.parse_config_text("# capture\n\nstep=5\nrep=1\nrot=90\nmicrostep=quarter\n")
        assert cfg.microstep is Microstep.QUARTER

    def test_overrides_win(self):
        cfg = core.parse_config_text("step=1\nrep=1\nrot=180\nseed=3\n", {"rep": 5, "seed": 9})
        assert cfg.rep_count == 5 and cfg.rng_seed == 9

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            core.parse_config_text("step=1\nrep=1\nrot=180\nbogus=1\n")

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="missing required"):
            core.parse_config_text("step=1\nrep=1\n")

    def test_round_trip(self):
        cfg = core.parse_config_text("step=2\nrep=3\nrot=90\nmicrostep=half\nseed=7\n")
        again = core.parse_config_text(core.config_to_text(cfg))
        assert again == cfg


class TestSmallTypes:
    def test_attitude_heading_wraps(self):
        assert core.Attitude(heading_deg=370.0).heading_deg == pytest.approx(10.0)
        assert core.Attitude(heading_deg=-90.0).heading_deg == pytest.approx(270.0)

    def test_geofix_bounds(self):
        core.GeoFix(38.7, -9.1, 50.0)
        with pytest.raises(ValueError):
            core.GeoFix(91.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            core.GeoFix(0.0, 181.0, 0.0)

    def test_imu_sample_dt(self):
        with pytest.raises(ValueError):
            core.ImuSample(0, 0, 0, 0, 0, 1, dt_s=0.0)

    def test_point_cloud_shape_checks(self):
        with pytest.raises(ValueError, match="lengths differ"):
            core.PointCloud(np.zeros((3, 3)), np.zeros(2, np.uint8), np.zeros(3, np.uint64))

    def test_empty_cloud(self):
        c = core.empty_cloud()
        assert len(c) == 0 and c.is_empty
