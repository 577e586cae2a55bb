from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acas_sim.signal_gen import (
    CHIP_EDGE_TOL,
    E6_CARRIER_HZ,
    PAPER_DYNAMICS,
    SPEED_OF_LIGHT,
    CodeSequence,
    DynamicsParams,
    SignalParams,
    code_phase,
    code_value,
    generate_samples,
    los_range,
    los_range_accel,
    los_range_rate,
    random_code,
    shifted_dynamics,
)

from conftest import CHIP_RATE, FS, make_code

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_los_range_at_zero_is_s0():
    p = DynamicsParams(s0=123.4, v=5, a=-2, A=3, omega=0.7)
    assert los_range(0.0, p) == 123.4


def test_los_range_paper_parameters_at_one_second():
    expected = 51.023 + 0.5012 * math.sin(2 * math.pi * 0.5012)
    assert los_range(1.0, PAPER_DYNAMICS) == pytest.approx(expected, rel=1e-15)


def test_peak_acceleration_is_a_omega_squared():
    p = PAPER_DYNAMICS
    t = np.linspace(0, 10, 200001)
    observed = np.max(np.abs(los_range_accel(t, p)))
    assert observed == pytest.approx(p.A * p.omega**2, rel=1e-6)
    # The listed parameters give about half a g, far from the quoted 9 g.
    assert 4.9 < p.peak_acceleration < 5.0


@given(s0=finite, v=finite, a=finite)
def test_quadratic_model_recovered_by_finite_differences(s0, v, a):
    p = DynamicsParams(s0=s0, v=v, a=a)
    h, t = 0.5, 3.0
    rate = (los_range(t + h, p) - los_range(t - h, p)) / (2 * h)
    acc = (los_range(t + h, p) - 2 * los_range(t, p) + los_range(t - h, p)) / h**2
    assert rate == pytest.approx(v + a * t, rel=1e-6, abs=1e-6)
    assert acc == pytest.approx(a, rel=1e-6, abs=1e-5)


@given(t=st.floats(0, 100), A=st.floats(0, 10), omega=st.floats(0, 10))
def test_rate_and_accel_match_numerical_derivatives(t, A, omega):
    p = DynamicsParams(s0=1.0, v=50.0, a=0.3, A=A, omega=omega)
    h = 1e-5
    num_rate = (los_range(t + h, p) - los_range(t - h, p)) / (2 * h)
    assert los_range_rate(t, p) == pytest.approx(num_rate, abs=1e-4)
    num_acc = (los_range_rate(t + h, p) - los_range_rate(t - h, p)) / (2 * h)
    assert los_range_accel(t, p) == pytest.approx(num_acc, abs=1e-3)


def test_dynamics_validation():
    with pytest.raises(ValueError):
        DynamicsParams(A=-1)
    with pytest.raises(ValueError):
        DynamicsParams(omega=-1)
    with pytest.raises(ValueError):
        DynamicsParams(v=math.inf)


def test_shifted_dynamics_adds_offset_and_rate():
    p = DynamicsParams(s0=10, v=2, A=1, omega=1)
    q = shifted_dynamics(p, extra_range=5, extra_rate=0.5, t_ref=4)
    t = np.linspace(0, 10, 11)
    np.testing.assert_allclose(los_range(t, q) - los_range(t, p), 5 + 0.5 * (t - 4), atol=1e-12)


@pytest.mark.parametrize("t, expected", [(0.5, 1), (1.5, -1), (2.5, 1)])
def test_code_value_examples(t, expected):
    code = CodeSequence(np.array([1, -1]), 1.0)
    assert code_value(code, t) == expected


def test_code_validation():
    with pytest.raises(ValueError):
        CodeSequence(np.array([1, 0, -1]), 1.0)
    with pytest.raises(ValueError):
        CodeSequence(np.array([], dtype=int), 1.0)
    with pytest.raises(ValueError):
        CodeSequence(np.array([1]), 0.0)


def test_random_code_is_seeded_and_balanced():
    a = random_code(10000, 1e6, 7)
    b = random_code(10000, 1e6, 7)
    assert np.array_equal(a.chips, b.chips)
    assert abs(a.chips.mean()) < 0.05
    assert a.chip_length == pytest.approx(SPEED_OF_LIGHT / 1e6)
    assert not np.array_equal(a.chips, random_code(10000, 1e6, 8).chips)


def test_segment_keeps_timing():
    code = make_code(100, epoch=0.25)
    seg = code.segment(10, 20)
    t = code.epoch + (10 + np.arange(20) + 0.5) / code.chip_rate
    assert np.array_equal(code_value(seg, t), code_value(code, t))


def test_static_samples_are_the_resampled_code():
    code = make_code(64)
    sig = SignalParams(0.0, code, code.period)
    n = 256
    x = generate_samples(sig, DynamicsParams(), 0.0, FS, n)
    expected = code.chips[(np.arange(n) * CHIP_RATE / FS).astype(int)]
    assert np.array_equal(x, expected.astype(complex))


@given(
    s0=st.floats(0, 3e5), v=st.floats(-800, 800), f_off=st.floats(-2e4, 2e4),
    t_start=st.floats(0, 50), amp=st.floats(0.1, 3),
)
def test_samples_follow_the_modulation_formula(s0, v, f_off, t_start, amp):
    code = make_code(200)
    sig = SignalParams(f_off, code, code.period, amp)
    dyn = DynamicsParams(s0=s0, v=v)
    n = 64
    x = generate_samples(sig, dyn, t_start, FS, n)
    t = t_start + np.arange(n) / FS
    s = s0 + v * t
    # Same edge rule as the library: an instant on a chip edge belongs to the new chip.
    idx = np.floor((t - s / SPEED_OF_LIGHT) * CHIP_RATE + CHIP_EDGE_TOL).astype(int)
    chips = code.chips[idx % code.length]
    phase = 2 * np.pi * (f_off * t - E6_CARRIER_HZ * s / SPEED_OF_LIGHT)
    np.testing.assert_allclose(x, amp * chips * np.exp(1j * phase), atol=1e-6 * amp)


def test_carrier_phase_slope_matches_range_rate():
    code = CodeSequence(np.ones(10, dtype=int), CHIP_RATE)
    v = 120.0
    sig = SignalParams(0.0, code, code.period)
    x = generate_samples(sig, DynamicsParams(v=v), 0.0, FS, 20000)
    phase = np.unwrap(np.angle(x))
    slope = np.polyfit(np.arange(x.size) / FS, phase, 1)[0]
    expected = -2 * np.pi * E6_CARRIER_HZ * v / SPEED_OF_LIGHT
    assert slope == pytest.approx(expected, rel=1e-9)


def test_code_drift_over_one_second():
    v = 300.0
    code = make_code(1023)
    dyn = DynamicsParams(v=v)
    sig = SignalParams(0.0, code, code.period)
    n = 4000
    drift = []
    for t0 in (0.0, 1.0):
        x = generate_samples(sig, dyn, t0, FS, n)
        t = t0 + np.arange(n) / FS
        # Best whole-sample alignment against the undelayed code.
        lags = np.arange(-4, 40)
        score = [abs(np.dot(x, code_value(code, t - k / FS))) for k in lags]
        drift.append(lags[int(np.argmax(score))])
    expected_chips = v / SPEED_OF_LIGHT * CHIP_RATE
    measured_chips = (drift[1] - drift[0]) * CHIP_RATE / FS
    assert abs(measured_chips - expected_chips) <= CHIP_RATE / FS


def test_double_rate_sampling_decimates_exactly():
    code = make_code(500)
    sig = SignalParams(1234.5, code, code.period)
    dyn = DynamicsParams(s0=1000.0, v=51.0, A=0.5, omega=3.1)
    x1 = generate_samples(sig, dyn, 7.0, FS, 2000)
    x2 = generate_samples(sig, dyn, 7.0, 2 * FS, 4000)
    assert np.array_equal(x1, x2[::2])


def test_unit_amplitude_energy():
    code = make_code(500)
    sig = SignalParams(2e3, code, code.period)
    n = 10000
    x = generate_samples(sig, PAPER_DYNAMICS, 3.0, FS, n)
    assert abs(np.vdot(x, x).real - n) < 1e-9 * n


def test_generate_samples_preconditions():
    code = make_code(10)
    with pytest.raises(ValueError):
        generate_samples(SignalParams(3e6, code, code.period), DynamicsParams(), 0.0, FS, 10)
    with pytest.raises(ValueError):
        generate_samples(SignalParams(0.0, code, code.period), DynamicsParams(), 0.0, FS, 0)
    with pytest.raises(ValueError):
        generate_samples(SignalParams(0.0, code, code.period), DynamicsParams(a=1.0), 1e200, FS, 4)
    with pytest.raises(ValueError):
        SignalParams(0.0, code, 0.0)


def test_code_phase_is_linear_in_time():
    code = make_code(10, epoch=2.0)
    assert code_phase(code, 2.0 + 3 / CHIP_RATE) == pytest.approx(3.0)
