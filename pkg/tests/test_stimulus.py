import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swaybench.errors import ConfigurationError
from swaybench.stimulus import (PRIMITIVE_TAPS, PrtsConfig, SampledSignal, generate_prts,
                                peak_frequencies, realized_period, samples_per_period,
                                ternary_sequence, write_stimulus_csv)


@pytest.mark.parametrize("degree", sorted(PRIMITIVE_TAPS))
def test_taps_give_maximal_period(degree):
    seq = ternary_sequence(degree)
    n = 3 ** degree - 1
    assert seq.size == n
    # no shorter period divides the sequence
    for d in range(1, n):
        if n % d == 0:
            assert not np.array_equal(seq, np.roll(seq, d))


def test_sequence_is_antiperiodic_over_half_period():
    seq = ternary_sequence(5)
    unit = np.where(seq == 2, -1, seq)
    assert np.array_equal(unit[121:], -unit[:121])
    assert np.count_nonzero(seq == 0) == 80


def test_default_profile_shape():
    sig = generate_prts(PrtsConfig())
    assert len(sig) == 2000
    assert sig.units == "deg"
    assert np.ptp(sig.values) == pytest.approx(1.0, abs=1e-12)
    assert abs(sig.values.mean()) < 1e-12
    assert sig.meta["realized_period"] == pytest.approx(20.0)
    assert not sig.meta["period_adjusted"]


def test_profile_is_exact_integral_at_state_boundaries():
    cfg = PrtsConfig(peak_to_peak=2.0)
    sig = generate_prts(cfg)
    scale = sig.meta["velocity_scale"]
    # between consecutive samples inside one state the slope equals the state velocity
    from swaybench.stimulus import velocity_states

    v = velocity_states(cfg) * scale
    slope = np.diff(sig.values) * cfg.sample_rate
    t = np.arange(1999) / 100.0
    state = np.floor(t / cfg.state_duration + 1e-12).astype(int)
    inside = np.floor((t + 0.01) / cfg.state_duration - 1e-12).astype(int) == state
    assert np.allclose(slope[inside], v[state[inside]], atol=1e-9)


def test_repeated_periods_tile():
    sig = generate_prts(PrtsConfig(n_periods=3))
    assert len(sig) == 6000
    assert np.array_equal(sig.values[:2000], sig.values[4000:])


def test_zero_velocity_gives_zero_profile():
    sig = generate_prts(PrtsConfig(velocity_amplitude=0.0))
    assert np.all(sig.values == 0.0)


def test_non_integral_period_is_adjusted():
    cfg = PrtsConfig(state_duration=0.0837)
    n = samples_per_period(cfg)
    assert n == 242 * 8
    assert realized_period(cfg) == pytest.approx(19.36)
    assert generate_prts(cfg).meta["period_adjusted"]


def test_peak_frequencies():
    f = peak_frequencies(PrtsConfig())
    assert f.size == 25
    assert f[0] == pytest.approx(0.05)
    assert f[-1] == pytest.approx(2.45)
    assert np.allclose(np.diff(f), 0.1)


def test_peak_frequencies_capped_at_nyquist():
    f = peak_frequencies(PrtsConfig(sample_rate=4.0, state_duration=0.25, analysis_bandwidth=10.0))
    assert f.max() <= 2.0


@pytest.mark.parametrize("field, value", [
    ("register_length", 9), ("state_duration", 0.0), ("peak_to_peak", -1.0),
    ("sample_rate", float("nan")), ("velocity_amplitude", -1.0), ("n_periods", 0),
])
def test_invalid_config(field, value):
    with pytest.raises(ConfigurationError) as info:
        generate_prts(PrtsConfig(**{field: value}))
    assert info.value.field == field


def test_sampled_signal_validation():
    with pytest.raises(ConfigurationError):
        SampledSignal(np.array([1.0, np.nan]), 100.0)
    with pytest.raises(ConfigurationError):
        SampledSignal(np.zeros(3), 100.0, units="furlong")
    s = SampledSignal(np.zeros(5), 10.0, t0=1.0)
    assert s.duration == 0.5
    assert s.times[-1] == pytest.approx(1.4)


def test_csv_writer(tmp_path):
    sig = generate_prts(PrtsConfig())
    path = write_stimulus_csv(sig, tmp_path / "s.csv")
    rows = path.read_text().splitlines()
    assert rows[0] == "time_s,tilt_deg"
    assert len(rows) == 2001
    assert float(rows[5].split(",")[1]) == sig.values[4]


@settings(max_examples=20, deadline=None)
@given(pp=st.floats(0.1, 10.0), degree=st.sampled_from([3, 4, 5]))
def test_even_harmonics_vanish(pp, degree):
    n_states = 3 ** degree - 1
    cfg = PrtsConfig(register_length=degree, state_duration=0.1, peak_to_peak=pp)
    x = generate_prts(cfg).values
    spec = np.abs(np.fft.rfft(x)) ** 2
    assert len(x) == n_states * 10
    assert spec[2::2].max() < 1e-20 * spec[1::2].max() + 1e-28
    assert np.ptp(x) == pytest.approx(pp, rel=1e-12)
