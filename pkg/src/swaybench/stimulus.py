"""Pseudorandom ternary (PRTS) support-tilt stimulus.

The tilt profile is the running integral of a three-valued velocity
sequence taken from a maximum-length shift register over GF(3). Because the
second half of such a sequence is the negation of the first half, the
position profile only carries power at odd harmonics of ``1 / period``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

UNITS = ("deg", "rad", "deg/s", "rad/s", "N*m", "J", "1")

# Feedback taps c_0..c_{n-1} of s[k+n] = sum_i c_i s[k+i] (mod 3); each
# recurrence has period 3**n - 1 (checked in tests).
PRIMITIVE_TAPS = {
    2: (1, 1),
    3: (2, 0, 1),
    4: (1, 0, 0, 1),
    5: (2, 0, 0, 0, 1),
    6: (1, 0, 0, 0, 0, 1),
    7: (2, 0, 0, 0, 0, 1, 0),
}


@dataclass
class SampledSignal:
    """Uniformly sampled scalar time series."""

    values: np.ndarray
    sample_rate: float
    units: str = "deg"
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ConfigurationError("values", "must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("values", "contains non-finite samples")
        if not self.sample_rate > 0:
            raise ConfigurationError("sample_rate", f"must be > 0, got {self.sample_rate}")
        if self.units not in UNITS:
            raise ConfigurationError("units", f"unknown unit tag {self.units!r}")

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.values.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.values.size / self.sample_rate


@dataclass(frozen=True)
class PrtsConfig:
    register_length: int = 5
    state_duration: float = 20.0 / 242.0
    velocity_amplitude: float = 1.0
    peak_to_peak: float = 1.0
    sample_rate: float = 100.0
    n_periods: int = 1
    # highest frequency reported by peak_frequencies()
    analysis_bandwidth: float = 2.5

    def validate(self) -> "PrtsConfig":
        if self.register_length not in PRIMITIVE_TAPS:
            raise ConfigurationError(
                "register_length", f"supported values are {sorted(PRIMITIVE_TAPS)}"
            )
        for name in ("state_duration", "peak_to_peak", "sample_rate", "analysis_bandwidth"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(name, f"must be a finite value > 0, got {value}")
        if not (math.isfinite(self.velocity_amplitude) and self.velocity_amplitude >= 0):
            raise ConfigurationError(
                "velocity_amplitude", f"must be >= 0, got {self.velocity_amplitude}"
            )
        if int(self.n_periods) != self.n_periods or self.n_periods < 1:
            raise ConfigurationError("n_periods", f"must be an integer >= 1, got {self.n_periods}")
        return self

    @property
    def n_states(self) -> int:
        return 3 ** self.register_length - 1

    @property
    def nominal_period(self) -> float:
        return self.n_states * self.state_duration


def _is_integral(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


def samples_per_period(config: PrtsConfig) -> int:
    """Number of samples in one realized stimulus period."""
    raw = config.nominal_period * config.sample_rate
    if _is_integral(raw):
        return int(round(raw))
    per_state = max(1, int(round(config.state_duration * config.sample_rate)))
    return per_state * config.n_states


def realized_period(config: PrtsConfig) -> float:
    return samples_per_period(config) / config.sample_rate


def ternary_sequence(register_length: int) -> np.ndarray:
    """One period of the GF(3) maximum-length sequence, values in {0, 1, 2}."""
    taps = PRIMITIVE_TAPS[register_length]
    state = [0] * (register_length - 1) + [1]
    out = np.empty(3 ** register_length - 1, dtype=np.int8)
    for k in range(out.size):
        out[k] = state[0]
        nxt = sum(c * s for c, s in zip(taps, state)) % 3
        state = state[1:] + [nxt]
    return out


def velocity_states(config: PrtsConfig) -> np.ndarray:
    """Ternary velocity levels {-v, 0, +v} (deg/s); symbol 2 maps to -v."""
    seq = ternary_sequence(config.register_length)
    unit = np.where(seq == 2, -1.0, seq.astype(float))
    return unit * config.velocity_amplitude


def generate_prts(config: PrtsConfig) -> SampledSignal:
    """Tilt-angle profile in degrees, ``n_periods`` repetitions.

    The position is the exact integral of the piecewise-constant velocity
    sampled at ``1/sample_rate``, zero-mean shifted, then rescaled so the
    sampled peak-to-peak equals ``config.peak_to_peak``.
    """
    config.validate()
    n = samples_per_period(config)
    velocity = velocity_states(config)
    exact = _is_integral(config.nominal_period * config.sample_rate)
    state_duration = (
        config.state_duration if exact else (n // config.n_states) / config.sample_rate
    )
    period = n / config.sample_rate
    meta = {
        "register_length": config.register_length,
        "n_states": config.n_states,
        "state_duration": state_duration,
        "realized_period": period,
        "samples_per_period": n,
        "n_periods": int(config.n_periods),
        "period_adjusted": not exact,
    }
    if config.velocity_amplitude == 0:
        return SampledSignal(np.zeros(n * int(config.n_periods)), config.sample_rate, "deg", 0.0,
                             {**meta, "velocity_scale": 0.0})

    knot_times = np.arange(config.n_states + 1) * state_duration
    knots = np.concatenate([[0.0], np.cumsum(velocity) * state_duration])
    t = np.arange(n) / config.sample_rate
    x = np.interp(t, knot_times, knots)
    x = x - x.mean()
    scale = config.peak_to_peak / (x.max() - x.min())
    x = x * scale
    meta["velocity_scale"] = scale * config.velocity_amplitude
    return SampledSignal(np.tile(x, int(config.n_periods)), config.sample_rate, "deg", 0.0, meta)


def peak_frequencies(config: PrtsConfig) -> np.ndarray:
    """Odd harmonics of the fundamental up to the analysis bandwidth and Nyquist."""
    config.validate()
    f0 = 1.0 / realized_period(config)
    limit = min(config.analysis_bandwidth, config.sample_rate / 2.0)
    n_max = int(math.floor(limit / f0 * (1 + 1e-12)))
    harmonics = np.arange(1, n_max + 1, 2)
    return harmonics * f0


def write_stimulus_csv(signal: SampledSignal, path: str | Path) -> Path:
    """Two-column CSV (time_s, tilt_deg) with a header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "tilt_deg"])
        for t, x in zip(signal.times, signal.values):
            writer.writerow([repr(float(t)), repr(float(x))])
    return path
