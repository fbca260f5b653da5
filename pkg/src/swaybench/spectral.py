"""Band-averaged frequency response of sway to support tilt.

DFT convention used throughout (and written into every exported spectrum)::

    X[k] = (1/N) * sum_{n=0}^{N-1} x[n] * exp(-2j*pi*k*n/N)

so a unit cosine on an exact bin yields a peak of magnitude 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DegenerateExcitationError, DimensionError
from .stimulus import SampledSignal

DFT_NORMALIZATION = "X[k] = (1/N) sum_n x[n] exp(-2j pi k n / N), one stimulus period per transform"
SPECTRUM_SCHEMA = "swaybench.spectrum/1"
BANDPLAN_SCHEMA = "swaybench.bandplan/1"

DEFAULT_F_PEAK = tuple(round(0.05 + 0.1 * i, 10) for i in range(25))
# Index sets over DEFAULT_F_PEAK. Widths grow with frequency so the band
# centres spread roughly logarithmically; neighbours share one boundary peak
# from band 3 upward.
DEFAULT_BANDS = (
    (0,),
    (1,),
    (2, 3),
    (3, 4, 5),
    (5, 6, 7),
    (7, 8, 9, 10),
    (10, 11, 12, 13),
    (13, 14, 15, 16),
    (16, 17, 18, 19),
    (19, 20, 21, 22),
    (22, 23, 24),
)
DEGENERATE_POWER = 1e-15


@dataclass(frozen=True)
class BandPlan:
    f_peak: tuple
    bands: tuple

    def __post_init__(self):
        object.__setattr__(self, "f_peak", tuple(float(f) for f in self.f_peak))
        object.__setattr__(self, "bands", tuple(tuple(int(i) for i in b) for b in self.bands))
        covered = set()
        for b in self.bands:
            if not b:
                raise DimensionError("empty band")
            if min(b) < 0 or max(b) >= len(self.f_peak):
                raise DimensionError(f"band {b} indexes outside the {len(self.f_peak)} peaks")
            covered.update(b)
        if covered != set(range(len(self.f_peak))):
            raise DimensionError("every peak must belong to at least one band")

    @property
    def n_peaks(self) -> int:
        return len(self.f_peak)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def band_sizes(self) -> tuple:
        return tuple(len(b) for b in self.bands)

    @property
    def f_x(self) -> np.ndarray:
        fp = np.asarray(self.f_peak)
        return np.array([fp[list(b)].mean() for b in self.bands])

    def to_dict(self) -> dict:
        return {
            "schema": BANDPLAN_SCHEMA,
            "f_peak": list(self.f_peak),
            "bands": [list(b) for b in self.bands],
            "f_x": [float(f) for f in self.f_x],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BandPlan":
        if data.get("schema", BANDPLAN_SCHEMA) != BANDPLAN_SCHEMA:
            raise DimensionError(f"unsupported band plan schema {data.get('schema')!r}")
        return cls(tuple(data["f_peak"]), tuple(tuple(b) for b in data["bands"]))


def default_band_plan() -> BandPlan:
    """25 PRTS peaks (0.05 ... 2.45 Hz) grouped into 11 overlapping bands."""
    return BandPlan(DEFAULT_F_PEAK, DEFAULT_BANDS)


@dataclass(frozen=True)
class BandSpectrum:
    values: np.ndarray
    plan: BandPlan

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (self.plan.n_bands,):
            raise DimensionError(f"expected {self.plan.n_bands} band values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DimensionError("band spectrum contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Frf:
    h: np.ndarray
    plan: BandPlan

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.shape != (self.plan.n_bands,):
            raise DimensionError(f"expected {self.plan.n_bands} FRF components, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise DimensionError("FRF contains non-finite values")
        object.__setattr__(self, "h", h)

    def expand(self) -> np.ndarray:
        """Real vector ``[Re(h), Im(h)]``."""
        return np.concatenate([self.h.real, self.h.imag])

    @classmethod
    def from_real(cls, vector, plan: BandPlan) -> "Frf":
        vector = np.asarray(vector, dtype=float)
        n = plan.n_bands
        if vector.shape != (2 * n,):
            raise DimensionError(f"expected {2 * n} reals, got {vector.shape}")
        return cls(vector[:n] + 1j * vector[n:], plan)

    def to_dict(self) -> dict:
        return {
            "schema": SPECTRUM_SCHEMA,
            "kind": "frf",
            "normalization": DFT_NORMALIZATION,
            "band_plan": self.plan.to_dict(),
            "real": [float(x) for x in self.h.real],
            "imag": [float(x) for x in self.h.imag],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Frf":
        if data.get("schema") != SPECTRUM_SCHEMA:
            raise DimensionError(f"unsupported spectrum schema {data.get('schema')!r}")
        plan = BandPlan.from_dict(data["band_plan"])
        return cls(np.asarray(data["real"]) + 1j * np.asarray(data["imag"]), plan)


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DimensionError("weights must be a finite, non-negative vector")
        object.__setattr__(self, "w", w)

    @property
    def normalized(self) -> np.ndarray:
        """Weights divided by their maximum, so every entry is <= 1."""
        top = self.w.max()
        return self.w / top if top > 0 else self.w.copy()


def _check_peaks(values, plan: BandPlan) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    if values.shape != (plan.n_peaks,):
        raise DimensionError(f"expected {plan.n_peaks} peak values, got {values.shape}")
    return values


def band_average(peak_values, plan: BandPlan) -> BandSpectrum:
    """Arithmetic (complex) mean of the peak values over each band."""
    values = _check_peaks(peak_values, plan)
    return BandSpectrum(np.array([values[list(b)].mean() for b in plan.bands]), plan)


def extract_peaks(signal: SampledSignal, plan: BandPlan, n_periods: int) -> np.ndarray:
    """Per-period DFT at the plan's peak frequencies, averaged over periods.

    The mean of the whole record is removed first; no window is applied since
    every peak sits on an exact bin of the one-period transform.
    """
    x = np.asarray(signal.values, dtype=float)
    if n_periods < 1 or x.size % n_periods:
        raise AlignmentError(
            f"{x.size} samples is not a whole number of {n_periods} stimulus periods"
        )
    n = x.size // n_periods
    bins = np.asarray(plan.f_peak) * n / signal.sample_rate
    idx = np.rint(bins).astype(int)
    if np.any(np.abs(bins - idx) > 1e-6) or np.any(idx >= n // 2 + 1) or np.any(idx < 1):
        raise AlignmentError("peak frequencies do not fall on the DFT grid of one period")
    frames = (x - x.mean()).reshape(n_periods, n)
    spectra = np.fft.rfft(frames, axis=1) / n
    return spectra[:, idx].mean(axis=0)


def estimate_frf(u_peaks, y_peaks, plan: BandPlan) -> Frf:
    """H_k = band-mean(conj(U) Y) / band-mean(|U|^2)."""
    u = _check_peaks(u_peaks, plan)
    y = _check_peaks(y_peaks, plan)
    g_uy = band_average(np.conj(u) * y, plan).values
    g_u = band_average(np.conj(u) * u, plan).values
    for k, g in enumerate(g_u):
        if abs(g) < DEGENERATE_POWER:
            raise DegenerateExcitationError(k + 1, f"input power {abs(g):.3e} below {DEGENERATE_POWER}")
    return Frf(g_uy / g_u, plan)


def weights_from_input(u_peaks, plan: BandPlan) -> WeightVector:
    """w_k = sqrt(sum over band k of |U(f_peak)|^2)."""
    u = _check_peaks(u_peaks, plan)
    power = np.abs(u) ** 2
    return WeightVector(np.array([np.sqrt(power[list(b)].sum()) for b in plan.bands]))


def band_spectrum_to_dict(spectrum: BandSpectrum, kind: str) -> dict:
    return {
        "schema": SPECTRUM_SCHEMA,
        "kind": kind,
        "normalization": DFT_NORMALIZATION,
        "band_plan": spectrum.plan.to_dict(),
        "real": [float(x) for x in spectrum.values.real],
        "imag": [float(x) for x in spectrum.values.imag],
    }
