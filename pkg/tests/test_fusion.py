import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcls import fusion, sim
from lcls.core import Attitude, ImuSample
from lcls.fusion import (
    DriftBias,
    FilterState,
    calibrate_drift,
    compute_alpha,
    run_filter,
    settle_tilt,
    update_attitude,
)


def level_sample(dt=0.01, **kw):
    base = dict(gx=0.0, gy=0.0, gz=0.0, ax=0.0, ay=0.0, az=1.0, dt_s=dt)
    base.update(kw)
    return ImuSample(**base)


class TestAlpha:
    def test_anchor_values(self):
        assert compute_alpha(0.1, 0.025) == pytest.approx(0.8, abs=1e-12)
        assert compute_alpha(0.1, 0.1) == pytest.approx(0.5, abs=1e-12)
        assert compute_alpha(10.0, 0.01) == pytest.approx(0.999001, abs=1e-6)

    @pytest.mark.parametrize("tau,dt", [(0.0, 0.01), (-1.0, 0.01), (0.1, 0.0), (0.1, -0.5)])
    def test_rejects_non_positive(self, tau, dt):
        with pytest.raises(ValueError):
            compute_alpha(tau, dt)

    @settings(max_examples=100, deadline=None)
    @given(
        tau=st.floats(1e-6, 1e3, allow_nan=False),
        dt=st.floats(1e-6, 1e3, allow_nan=False),
    )
    def test_open_unit_interval_and_monotonicity(self, tau, dt):
        a = compute_alpha(tau, dt)
        assert 0.0 < a < 1.0
        assert compute_alpha(tau * 2, dt) > a  # increasing in tau
        assert compute_alpha(tau, dt * 2) < a  # decreasing in dt


class TestCalibrateDrift:
    def test_constant_gyro_offset(self):
        samples = [level_sample(gx=0.5) for _ in range(20)]
        bias = calibrate_drift(samples)
        assert bias.gyro == pytest.approx((0.5, 0.0, 0.0))
        assert bias.accel == pytest.approx((0.0, 0.0, 0.0))

    def test_alternating_rates_cancel(self):
        samples = [level_sample(gx=0.2 if i % 2 == 0 else -0.2) for i in range(10)]
        assert calibrate_drift(samples).gyro[0] == pytest.approx(0.0)

    def test_accel_bias_relative_to_gravity(self):
        samples = [level_sample(az=1.02), level_sample(az=0.98)]
        assert calibrate_drift(samples).accel[2] == pytest.approx(0.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            calibrate_drift([])


class TestUpdate:
    def test_level_stationary_stays_zero(self):
        st0 = FilterState.initial(0.1)
        st1 = update_attitude(st0, level_sample())
        assert st1.attitude.roll_deg == pytest.approx(0.0, abs=1e-12)
        assert st1.attitude.pitch_deg == pytest.approx(0.0, abs=1e-12)
        assert st1.alpha == pytest.approx(compute_alpha(0.1, 0.01))

    def test_roll_fixed_point(self):
        st0 = FilterState(attitude=Attitude(roll_deg=10.0), tau_s=0.1)
        s = level_sample(ay=math.sin(math.radians(10)), az=math.cos(math.radians(10)))
        st1 = update_attitude(st0, s)
        assert st1.attitude.roll_deg == pytest.approx(10.0, abs=1e-9)

    def test_half_alpha_blend(self):
        # tau = dt = 0.1 -> alpha = 0.5; gyro-integrated roll 0.5 deg,
        # level accel pulls toward 0 -> blended 0.25
        st0 = FilterState.initial(0.1)
        st1 = update_attitude(st0, level_sample(dt=0.1, gx=5.0))
        assert st1.alpha == pytest.approx(0.5)
        assert st1.attitude.roll_deg == pytest.approx(0.25, abs=1e-12)

    def test_degenerate_accel_falls_back_to_gyro(self):
        st0 = FilterState.initial(0.1)
        s = ImuSample(gx=3.0, gy=-2.0, gz=1.0, ax=0.0, ay=0.0, az=0.0, dt_s=0.1)
        st1 = update_attitude(st0, s)
        assert st1.accel_degenerate
        assert st1.attitude.roll_deg == pytest.approx(0.3)
        assert st1.attitude.pitch_deg == pytest.approx(-0.2)

    def test_yaw_integrates_exactly(self):
        st = FilterState.initial(0.1)
        for _ in range(250):
            st = update_attitude(st, level_sample(gz=2.0))
        assert st.attitude.yaw_deg == pytest.approx(250 * 2.0 * 0.01, rel=1e-12)

    def test_geometric_convergence_rate(self):
        # constant accel at 20 deg roll: error shrinks by alpha each step
        target = 20.0
        s = level_sample(
            dt=0.1, ay=math.sin(math.radians(target)), az=math.cos(math.radians(target))
        )
        st = FilterState.initial(0.1)
        errs = []
        for _ in range(6):
            st = update_attitude(st, s)
            errs.append(target - st.attitude.roll_deg)
        ratios = [errs[i + 1] / errs[i] for i in range(5)]
        assert np.allclose(ratios, 0.5, atol=1e-9)


class TestSettle:
    def test_level_stream(self):
        stream = [level_sample() for _ in range(1000)]
        res = settle_tilt(stream)
        assert abs(res.attitude.roll_deg) < 0.01
        assert abs(res.attitude.pitch_deg) < 0.01
        assert res.settled

    def test_noiseless_convergence_within_observed_error(self):
        rng = np.random.default_rng(0)
        stream = sim.synth_imu_stream(
            14.0, 0.0, rng, n_samples=1000, accel_noise_g=0.0, gyro_noise_dps=0.0
        )
        res = settle_tilt(stream)
        assert abs(res.attitude.roll_deg - 14.0) <= 0.24
        assert res.settled

    def test_noisy_biased_stream_within_3deg(self):
        rng = np.random.default_rng(8)
        stream = sim.synth_imu_stream(37.0, -32.0, rng, gyro_bias_dps=(0.4, -0.3, 0.2))
        bias = fusion.gyro_bias_from_stream(stream)
        res = settle_tilt(stream, bias)
        assert abs(res.attitude.roll_deg - 37.0) <= 3.0
        assert abs(res.attitude.pitch_deg - (-32.0)) <= 3.0

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError):
            settle_tilt([])

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), split=st.integers(1, 59))
    def test_concatenation_invariance(self, seed, split):
        rng = np.random.default_rng(seed)
        stream = sim.synth_imu_stream(9.0, -4.0, rng, n_samples=60)
        whole = run_filter(stream)
        part = run_filter(stream[split:], state=run_filter(stream[:split]))
        assert part.attitude.roll_deg == pytest.approx(whole.attitude.roll_deg, abs=1e-12)
        assert part.attitude.pitch_deg == pytest.approx(whole.attitude.pitch_deg, abs=1e-12)
        assert part.attitude.yaw_deg == pytest.approx(whole.attitude.yaw_deg, abs=1e-12)


class TestStreamCsv:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(4)
        stream = sim.synth_imu_stream(3.0, 7.0, rng, n_samples=25)
        text = fusion.imu_stream_to_csv(stream)
        back = fusion.imu_stream_from_csv(text)
        assert back == stream

    def test_bad_field_count(self):
        with pytest.raises(ValueError, match="7 fields"):
            fusion.imu_stream_from_csv("0.01,0,0,0,0,1\n")

    def test_gyro_bias_from_stream(self):
        stream = [level_sample(gx=0.25, gy=-0.5) for _ in range(8)]
        bias = fusion.gyro_bias_from_stream(stream)
        assert bias.gyro == pytest.approx((0.25, -0.5, 0.0))
        assert bias.accel == (0.0, 0.0, 0.0)
