"""Trial orchestration: simulate or ingest, align, analyse, score, report."""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .dec import PRESETS, DecController, DecParams, preset
from .errors import (AlignmentError, ConfigurationError, DimensionError, FallEvent,
                     IngestionError, PipelineError, SwayBenchError)
from .plant import NoiseConfig, Plant, PlantParams, PlantState, default_params, read_sensors
from .scoring import DEFAULT_BOOTSTRAP, ReferenceStats, ScoreReport, score
from .spectral import (DFT_NORMALIZATION, BandPlan, Frf, WeightVector, default_band_plan,
                       estimate_frf, extract_peaks, weights_from_input)
from .stimulus import PrtsConfig, SampledSignal, generate_prts

TRIAL_SCHEMA = "swaybench.trial/1"
REPORT_SCHEMA = "swaybench.report/1"
TRIAL_CONFIG_SCHEMA = "swaybench.trial-config/1"

# Normalised correlation below which an alignment is rejected.
ALIGNMENT_FLOOR = 0.2
ENERGY_METHOD = "rectified mechanical work: trapezoid integral of |tau * d(angle)/dt|, central differences"

DEFAULT_NOISE = NoiseConfig(
    joint_angle=1e-4,
    joint_velocity=1e-3,
    vestibular_angle=5e-4,
    vestibular_velocity=1e-3,
    torque=0.05,
)


def _canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=1)


def config_hash(data: dict) -> str:
    return hashlib.sha256(_canonical_json(data).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- recordings


@dataclass
class TrialRecording:
    """Time-locked signals of one trial. Tilt and sway are in degrees."""

    stimulus: SampledSignal
    measured_tilt: SampledSignal
    com_sway: SampledSignal
    joint_angles: dict = field(default_factory=dict)
    joint_torques: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        signals = [self.stimulus, self.measured_tilt, self.com_sway,
                   *self.joint_angles.values(), *self.joint_torques.values()]
        rate = self.stimulus.sample_rate
        if any(s.sample_rate != rate for s in signals):
            raise DimensionError("all signals of a recording must share one sample rate")
        if len({len(s) for s in signals}) != 1:
            raise DimensionError("all signals of a recording must have the same length")
        self.meta.setdefault("source", "simulated")

    @property
    def sample_rate(self) -> float:
        return self.stimulus.sample_rate

    @property
    def period_samples(self) -> int:
        return int(self.meta.get("period_samples", round(20.0 * self.sample_rate)))

    def __len__(self):
        return len(self.stimulus)


# ---------------------------------------------------------------- alignment


def align(recorded: SampledSignal, ideal: SampledSignal, floor: float = ALIGNMENT_FLOOR) -> int:
    """Lag (samples) by which ``recorded`` trails one period of ``ideal``.

    Whole periods of the recording are averaged, then circularly
    cross-correlated with the ideal period. The peak is reported as the
    representative with the smallest |lag| in (-period/2, period/2]; exact
    ties go to the smaller |lag|, then to the positive one. A normalised
    peak below ``floor`` raises AlignmentError.
    """
    if recorded.sample_rate != ideal.sample_rate:
        raise AlignmentError("recorded and ideal signals have different sample rates")
    n = len(ideal)
    if n < 2:
        raise AlignmentError("ideal period needs at least two samples")
    if len(recorded) < n:
        raise AlignmentError(f"recording has {len(recorded)} samples, shorter than one period ({n})")
    m = len(recorded) // n
    folded = recorded.values[: m * n].reshape(m, n).mean(axis=0)
    folded = folded - folded.mean()
    ref = ideal.values - ideal.values.mean()
    norm = np.linalg.norm(folded) * np.linalg.norm(ref)
    if norm == 0:
        raise AlignmentError("cannot align a constant signal")
    rho = np.fft.irfft(np.fft.rfft(folded) * np.conj(np.fft.rfft(ref)), n) / norm
    best = rho.max()
    if best < floor:
        raise AlignmentError(f"correlation peak {best:.3f} below significance floor {floor}")
    idx = np.flatnonzero(rho >= best - 1e-12)
    lags = np.where(idx > n // 2, idx - n, idx)
    return int(min(lags, key=lambda lag: (abs(lag), -lag)))


# ---------------------------------------------------------------- energy


def estimate_energy(torque: SampledSignal, angle: SampledSignal) -> float:
    """Rectified mechanical work in J; angle in rad, torque in N*m."""
    if torque.sample_rate != angle.sample_rate or len(torque) != len(angle):
        raise DimensionError("torque and angle must share sample rate and length")
    if len(torque) < 2:
        return 0.0
    dt = 1.0 / torque.sample_rate
    omega = np.gradient(angle.values, dt)
    return float(trapezoid(np.abs(torque.values * omega), dx=dt))


def energy_summary(recording: TrialRecording) -> dict | None:
    names = [n for n in recording.joint_torques if n in recording.joint_angles]
    if not names:
        return None
    per_joint = {n: estimate_energy(recording.joint_torques[n], recording.joint_angles[n])
                 for n in names}
    ankles = [v for n, v in per_joint.items() if n.startswith("ankle")]
    return {
        "per_joint_J": per_joint,
        "ankle_total_J": float(sum(ankles)),
        "total_J": float(sum(per_joint.values())),
        "method": ENERGY_METHOD,
    }


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to reproduce one simulated trial."""

    label: str = "standard"
    prts: PrtsConfig = PrtsConfig(n_periods=2)
    plant: PlantParams = field(default_factory=default_params)
    controller: DecParams = field(default_factory=lambda: preset("standard"))
    noise: NoiseConfig = DEFAULT_NOISE
    seed: int = 0
    warmup_periods: int = 1
    substeps: int = 10

    def validate(self) -> "TrialConfig":
        self.prts.validate()
        if self.controller.rate != self.prts.sample_rate:
            raise ConfigurationError("controller.rate", "must equal the stimulus sample rate")
        if self.controller.n_joints != self.plant.n_links:
            raise ConfigurationError("controller", "one module per plant joint is required")
        if self.warmup_periods < 0 or self.substeps < 1:
            raise ConfigurationError("warmup_periods", "warm-up must be >= 0 and substeps >= 1")
        if not 1.0 / (self.prts.sample_rate * self.substeps) <= 0.01:
            raise ConfigurationError("substeps", "integration step must not exceed 10 ms")
        return self

    def to_dict(self) -> dict:
        return {
            "schema": TRIAL_CONFIG_SCHEMA,
            "label": self.label,
            "prts": asdict(self.prts),
            "plant": self.plant.to_dict(),
            "controller": self.controller.to_dict(),
            "noise": self.noise.to_dict(),
            "seed": int(self.seed),
            "warmup_periods": int(self.warmup_periods),
            "substeps": int(self.substeps),
            "integrator": "rk4",
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrialConfig":
        base = cls()
        controller = base.controller
        label = data.get("label", base.label)
        if "preset" in data:
            controller = preset(data["preset"])
            label = data.get("label", data["preset"])
        if "controller" in data:
            controller = DecParams.from_dict(data["controller"])
        try:
            return cls(
                label=label,
                prts=PrtsConfig(**data["prts"]) if "prts" in data else base.prts,
                plant=PlantParams.from_dict(data["plant"]) if "plant" in data else base.plant,
                controller=controller,
                noise=NoiseConfig(**data["noise"]) if "noise" in data else base.noise,
                seed=int(data.get("seed", base.seed)),
                warmup_periods=int(data.get("warmup_periods", base.warmup_periods)),
                substeps=int(data.get("substeps", base.substeps)),
            ).validate()
        except TypeError as exc:
            raise ConfigurationError("trial", str(exc)) from exc

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())


def run_trial(config: TrialConfig) -> TrialRecording:
    """Closed-loop simulation: warm-up periods, then ``prts.n_periods`` recorded periods.

    The controller runs at the stimulus sample rate with a zero-order hold;
    the plant integrates ``substeps`` RK4 steps per tick while the support
    follows the stimulus by linear interpolation. Raises FallEvent on a fall.
    """
    config.validate()
    one = generate_prts(replace(config.prts, n_periods=1))
    n = len(one)
    total = config.warmup_periods + config.prts.n_periods
    command = np.tile(one.values, total)
    alpha = np.radians(command)
    alpha_next = np.append(alpha[1:], alpha[0])
    frac = np.arange(1, config.substeps + 1) / config.substeps
    dt = 1.0 / (config.prts.sample_rate * config.substeps)

    plant = Plant(config.plant)
    controller = DecController(config.controller, config.plant)
    rng = np.random.default_rng(np.random.SeedSequence(int(config.seed)))
    state = PlantState.upright(config.plant.n_links, float(alpha[0]))
    controller.reset(read_sensors(state))

    joints = config.plant.n_links
    tilt = np.empty(alpha.size)
    sway = np.empty(alpha.size)
    angles = np.empty((alpha.size, joints))
    torques = np.empty((alpha.size, joints))
    applied = np.zeros(joints)
    for k in range(alpha.size):
        readout = read_sensors(state, config.noise, rng, applied[0])
        applied = controller.tick(readout)
        tilt[k] = readout.foot_in_space
        sway[k] = plant.com_sway(state)
        angles[k] = state.q
        torques[k] = applied
        state = plant.advance(state, applied, alpha[k] + (alpha_next[k] - alpha[k]) * frac, dt)

    keep = slice(config.warmup_periods * n, None)
    fs = config.prts.sample_rate
    t0 = config.warmup_periods * n / fs
    meta = {
        "source": "simulated",
        "label": config.label,
        "seed": int(config.seed),
        "config_hash": config.hash,
        "period_samples": n,
        "n_periods": int(config.prts.n_periods),
        "warmup_periods": int(config.warmup_periods),
    }

    def sig(values, units):
        return SampledSignal(values[keep], fs, units, t0)

    names = config.plant.names
    return TrialRecording(
        stimulus=sig(command, "deg"),
        measured_tilt=sig(np.degrees(tilt), "deg"),
        com_sway=sig(np.degrees(sway), "deg"),
        joint_angles={name: sig(angles[:, j], "rad") for j, name in enumerate(names)},
        joint_torques={name: sig(torques[:, j], "N*m") for j, name in enumerate(names)},
        meta=meta,
    )


# ---------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class IngestSchema:
    """Column mapping for trial CSV files.

    Joint channels are discovered by prefix/suffix, e.g. ``angle_knee_rad``
    and ``torque_knee_Nm``. ``period_samples`` overrides the header value.
    """

    time: str = "time_s"
    stimulus: str = "stimulus_deg"
    measured_tilt: str = "measured_tilt_deg"
    com_sway: str = "com_sway_deg"
    angle_prefix: str = "angle_"
    angle_suffix: str = "_rad"
    torque_prefix: str = "torque_"
    torque_suffix: str = "_Nm"
    period_samples: int | None = None
    jitter_tolerance: float = 0.01


def export_csv(recording: TrialRecording, path: str | Path, schema: IngestSchema = IngestSchema()) -> Path:
    """Write a recording with a ``#`` metadata header; floats use round-trip repr."""
    path = Path(path)
    columns = {
        schema.time: recording.stimulus.times,
        schema.stimulus: recording.stimulus.values,
        schema.measured_tilt: recording.measured_tilt.values,
        schema.com_sway: recording.com_sway.values,
    }
    for name, s in recording.joint_angles.items():
        columns[f"{schema.angle_prefix}{name}{schema.angle_suffix}"] = s.values
    for name, s in recording.joint_torques.items():
        columns[f"{schema.torque_prefix}{name}{schema.torque_suffix}"] = s.values
    header = {
        "schema": TRIAL_SCHEMA,
        "sample_rate": repr(float(recording.sample_rate)),
        "period_samples": str(recording.period_samples),
    }
    header.update({k: str(v) for k, v in sorted(recording.meta.items()) if k not in header})
    with path.open("w", newline="") as fh:
        for key, value in header.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(list(columns))
        for row in zip(*columns.values()):
            writer.writerow([repr(float(x)) for x in row])
    return path


def _read_header(path: Path) -> dict:
    header = {}
    with path.open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            value = value.strip()
            try:
                header[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                header[key.strip()] = value
    return header


def _bad_rows(mask) -> list[int]:
    return [int(i) + 1 for i in np.flatnonzero(mask)]


def ingest(path: str | Path, schema: IngestSchema = IngestSchema()) -> TrialRecording:
    """Load and validate a trial CSV.

    Row numbers in errors count data rows from 1 (the first line after the
    column header).
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    header = _read_header(path)
    if header.get("schema", TRIAL_SCHEMA) != TRIAL_SCHEMA:
        raise IngestionError(f"unsupported trial schema {header['schema']!r}")
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc
    required = [schema.time, schema.stimulus, schema.measured_tilt, schema.com_sway]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise IngestionError(f"missing column(s): {', '.join(missing)}")
    if len(frame) < 2:
        raise IngestionError("need at least two data rows")

    data = {}
    for col in frame.columns:
        values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
        bad = _bad_rows(~np.isfinite(values))
        if bad:
            raise IngestionError(f"column {col!r}: NaN or non-numeric value at row(s) "
                                 f"{', '.join(map(str, bad[:10]))}", bad)
        data[col] = values

    t = data[schema.time]
    steps = np.diff(t)
    dt = float(np.median(steps))
    if not dt > 0:
        raise IngestionError("timestamps must increase")
    jitter = np.abs(steps - dt) > schema.jitter_tolerance * dt
    if jitter.any():
        rows = [r + 1 for r in _bad_rows(jitter)]
        raise IngestionError(f"non-uniform timestamps (> {schema.jitter_tolerance:.0%} jitter) "
                             f"at row(s) {', '.join(map(str, rows[:10]))}", rows)
    rate = float(header["sample_rate"]) if "sample_rate" in header else 1.0 / dt
    if abs(rate * dt - 1.0) > schema.jitter_tolerance:
        raise IngestionError(f"header sample rate {rate} disagrees with timestamps")

    def channels(prefix, suffix, units):
        out = {}
        for col in frame.columns:
            if col.startswith(prefix) and col.endswith(suffix) and len(col) > len(prefix) + len(suffix):
                out[col[len(prefix): len(col) - len(suffix)]] = SampledSignal(data[col], rate, units, t[0])
        return out

    meta = {k: v for k, v in header.items() if k not in ("schema", "sample_rate")}
    meta["source"] = "ingested"
    meta["file"] = path.name
    period = schema.period_samples or header.get("period_samples")
    meta["period_samples"] = int(period) if period is not None else int(round(20.0 * rate))
    return TrialRecording(
        stimulus=SampledSignal(data[schema.stimulus], rate, "deg", t[0]),
        measured_tilt=SampledSignal(data[schema.measured_tilt], rate, "deg", t[0]),
        com_sway=SampledSignal(data[schema.com_sway], rate, "deg", t[0]),
        joint_angles=channels(schema.angle_prefix, schema.angle_suffix, "rad"),
        joint_torques=channels(schema.torque_prefix, schema.torque_suffix, "N*m"),
        meta=meta,
    )


# ---------------------------------------------------------------- analysis


@dataclass
class BenchmarkReport:
    label: str
    plan: BandPlan
    frf: Frf
    weights: WeightVector
    lag: int
    score: ScoreReport | None = None
    energy: dict | None = None
    manifest: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        h = self.frf.h
        return {
            "schema": REPORT_SCHEMA,
            "label": self.label,
            "band_plan": self.plan.to_dict(),
            "alignment_lag_samples": self.lag,
            "frf": {
                "f_x": [float(f) for f in self.plan.f_x],
                "real": [float(x) for x in h.real],
                "imag": [float(x) for x in h.imag],
                "gain": [float(x) for x in np.abs(h)],
                "phase_deg": [float(x) for x in np.degrees(np.angle(h))],
                "normalization": DFT_NORMALIZATION,
            },
            "weights": [float(x) for x in self.weights.w],
            "score": self.score.to_dict() if self.score else None,
            "energy": self.energy,
            "manifest": self.manifest,
        }

    def to_json(self) -> str:
        return _canonical_json(self.to_dict()) + "\n"

    def summary(self) -> str:
        lines = [f"{self.label}: lag {self.lag} samples"]
        if self.score:
            s = self.score
            cdf = "n/a" if s.cdf is None else f"{s.cdf:.3f} [{s.cdf_ci[0]:.3f}, {s.cdf_ci[1]:.3f}]"
            lines.append(f"  score D {s.score_d:.4f}  mahalanobis {s.mahalanobis:.4f}  cdf {cdf}")
        if self.energy:
            lines.append(f"  energy {self.energy['total_J']:.3f} J (ankle {self.energy['ankle_total_J']:.3f} J)")
        return "\n".join(lines)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except SwayBenchError as exc:
        raise PipelineError(name, exc) from exc


def _aligned(recording: TrialRecording):
    n = recording.period_samples
    if len(recording) < n:
        raise AlignmentError(f"recording has {len(recording)} samples, shorter than one period ({n})")
    ideal = SampledSignal(recording.stimulus.values[:n], recording.sample_rate, "deg")
    lag = align(recording.measured_tilt, ideal)
    m = len(recording) // n
    u = SampledSignal(recording.stimulus.values[: m * n], recording.sample_rate, "deg")
    y = SampledSignal(np.roll(recording.com_sway.values[: m * n], -lag), recording.sample_rate, "deg")
    return lag, m, u, y


def _spectra(u, y, m, plan):
    u_peaks = extract_peaks(u, plan, m)
    y_peaks = extract_peaks(y, plan, m)
    return estimate_frf(u_peaks, y_peaks, plan), weights_from_input(u_peaks, plan)


def analyze(recording: TrialRecording, ref: ReferenceStats | None = None, plan: BandPlan | None = None,
            n_bootstrap: int = DEFAULT_BOOTSTRAP, seed: int = 0) -> BenchmarkReport:
    """align -> extract_peaks -> estimate_frf -> score; energy when torques exist.

    Failures are re-raised as PipelineError tagged with the stage name.
    """
    plan = plan or (ref.plan if ref is not None else default_band_plan())
    if ref is not None and ref.plan != plan:
        raise PipelineError("score", DimensionError("reference band plan differs from analysis plan"))
    lag, m, u, y = _stage("align", _aligned, recording)
    frf, weights = _stage("spectral", _spectra, u, y, m, plan)
    report = _stage("score", score, frf, ref, n_bootstrap, seed) if ref is not None else None
    energy = _stage("energy", energy_summary, recording)
    manifest = {
        "recording": {k: recording.meta[k] for k in sorted(recording.meta)},
        "n_periods_analysed": m,
        "alignment_floor": ALIGNMENT_FLOOR,
        "bootstrap": {"n": n_bootstrap, "seed": seed} if ref is not None else None,
        "reference_provenance": ref.provenance if ref is not None else None,
    }
    return BenchmarkReport(recording.meta.get("label", "trial"), plan, frf, weights, lag,
                           report, energy, manifest)


# ---------------------------------------------------------------- surrogate population


@dataclass(frozen=True)
class SurrogateConfig:
    """Jitter model for synthetic reference subjects.

    Each subject is the base controller/plant with independent log-normal
    factors exp(sigma * z): segment masses (``mass_jitter``), COM heights
    (``com_jitter``, capped at segment length), every K_p (``kp_jitter``),
    every K_d (``kd_jitter``) and the loop gain G (``gain_jitter``). Sensor
    noise uses ``noise`` with a per-subject seed.
    """

    base_preset: str = "standard"
    mass_jitter: float = 0.08
    com_jitter: float = 0.05
    kp_jitter: float = 0.10
    kd_jitter: float = 0.20
    gain_jitter: float = 0.08
    noise: NoiseConfig = DEFAULT_NOISE
    prts: PrtsConfig = PrtsConfig(n_periods=2)
    warmup_periods: int = 1

    def to_dict(self) -> dict:
        data = asdict(self)
        data["noise"] = self.noise.to_dict()
        data["prts"] = asdict(self.prts)
        return data


@dataclass
class Population:
    frfs: list
    weights: WeightVector | None
    failures: list
    configs: list


def subject_config(index: int, seed: int, cfg: SurrogateConfig) -> TrialConfig:
    child = np.random.SeedSequence(int(seed)).spawn(index + 1)[index]
    rng = np.random.default_rng(child)
    base_plant = default_params(4)
    base_ctrl = preset(cfg.base_preset)
    n = base_plant.n_links

    def factor(sigma, size):
        return np.exp(sigma * rng.standard_normal(size))

    masses = np.asarray(base_plant.masses) * factor(cfg.mass_jitter, n)
    coms = np.minimum(np.asarray(base_plant.com_heights) * factor(cfg.com_jitter, n), base_plant.lengths)
    lengths = np.asarray(base_plant.lengths)
    plant = replace(base_plant, masses=tuple(masses), com_heights=tuple(coms),
                    inertias=tuple(masses * lengths ** 2 / 12.0), derived={"surrogate_subject": index})
    kp = factor(cfg.kp_jitter, n)
    kd = factor(cfg.kd_jitter, n)
    gain = float(factor(cfg.gain_jitter, 1)[0])
    joints = tuple(replace(g, kp=g.kp * kp[j], kd=g.kd * kd[j], gain=g.gain * gain)
                   for j, g in enumerate(base_ctrl.joints))
    trial_seed = int(child.generate_state(1)[0])
    return TrialConfig(label=f"subject-{index:03d}", prts=cfg.prts, plant=plant,
                       controller=replace(base_ctrl, joints=joints), noise=cfg.noise,
                       seed=trial_seed, warmup_periods=cfg.warmup_periods)


def _subject_frf(config: TrialConfig):
    try:
        rec = run_trial(config)
        report = analyze(rec)
    except (FallEvent, PipelineError) as exc:
        return None, None, f"{config.label}: {exc}"
    return report.frf, report.weights, None


def simulate_population(n_subjects: int, seed: int, cfg: SurrogateConfig | None = None,
                        workers: int = 1) -> Population:
    """Simulate jittered subjects; fallen or unanalysable subjects are listed in ``failures``."""
    cfg = cfg or SurrogateConfig()
    configs = [subject_config(i, seed, cfg) for i in range(n_subjects)]
    results = _map(_subject_frf, configs, workers)
    frfs = [f for f, _, _ in results if f is not None]
    weights = next((w for _, w, _ in results if w is not None), None)
    failures = [e for _, _, e in results if e is not None]
    return Population(frfs, weights, failures, configs)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- protocol


@dataclass
class ProtocolReport:
    """Ordered per-configuration reports plus the reference population scores."""

    reports: list
    failures: dict
    reference: ReferenceStats
    manifest: dict

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "configurations": [r.to_dict() for r in self.reports],
            "failures": self.failures,
            "reference": {
                "n_subjects": self.reference.n_subjects,
                "sample_scores": [float(x) for x in self.reference.sample_scores],
                "provenance": self.reference.provenance,
            },
            "manifest": self.manifest,
        }

    def to_json(self) -> str:
        return _canonical_json(self.to_dict()) + "\n"

    def summary(self) -> str:
        lines = [f"{'configuration':<12} {'score D':>9} {'CDF':>7} {'95% CI':>17} {'energy J':>9}"]
        for r in self.reports:
            s = r.score
            ci = f"[{s.cdf_ci[0]:.3f}, {s.cdf_ci[1]:.3f}]"
            energy = f"{r.energy['total_J']:.3f}" if r.energy else "n/a"
            lines.append(f"{r.label:<12} {s.score_d:>9.4f} {s.cdf:>7.3f} {ci:>17} {energy:>9}")
        for label, why in self.failures.items():
            lines.append(f"{label:<12} FAILED: {why}")
        lines.append(f"reference: {self.reference.n_subjects} subjects "
                     f"({self.reference.provenance.get('source', 'external')})")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> list[Path]:
        """report.json, summary.txt, frf.csv (gain/phase per f_x) and cdf.csv."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "summary.txt", out / "frf.csv", out / "cdf.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.summary())
        with paths[2].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["configuration", "f_x_hz", "gain", "phase_deg", "real", "imag"])
            for r in self.reports:
                h = r.frf.h
                for f, z in zip(r.plan.f_x, h):
                    w.writerow([r.label, repr(float(f)), repr(float(abs(z))),
                                repr(float(np.degrees(np.angle(z)))), repr(float(z.real)), repr(float(z.imag))])
        with paths[3].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "label", "score_d", "cdf"])
            ref = np.sort(self.reference.sample_scores)
            for i, s in enumerate(ref):
                w.writerow(["reference", f"subject-{i:03d}", repr(float(s)), repr((i + 1) / ref.size)])
            for r in self.reports:
                w.writerow(["configuration", r.label, repr(r.score.score_d), repr(r.score.cdf)])
        return paths


def _protocol_entry(args):
    config, ref, n_bootstrap, seed = args
    try:
        return analyze(run_trial(config), ref, n_bootstrap=n_bootstrap, seed=seed), None
    except FallEvent as exc:
        return None, f"fall at t={exc.time:.3f} s ({exc.reason})"
    except PipelineError as exc:
        return None, str(exc)


def run_protocol(ref: ReferenceStats, presets=PRESETS, seed: int = 0, base: TrialConfig | None = None,
                 n_bootstrap: int = DEFAULT_BOOTSTRAP, workers: int = 1) -> ProtocolReport:
    """Run and score each named controller preset; results keep the preset order."""
    base = base or TrialConfig()
    configs = [replace(base, label=name, controller=preset(name, base.plant.n_links), seed=seed)
               for name in presets]
    results = _map(_protocol_entry, [(c, ref, n_bootstrap, seed) for c in configs], workers)
    reports = [r for r, _ in results if r is not None]
    failures = {c.label: why for c, (_, why) in zip(configs, results) if why is not None}
    manifest = {
        "seed": int(seed),
        "presets": list(presets),
        "config_hashes": {c.label: c.hash for c in configs},
        "warmup_periods": base.warmup_periods,
        "energy_method": ENERGY_METHOD,
        "dft_normalization": DFT_NORMALIZATION,
    }
    return ProtocolReport(reports, failures, ref, manifest)
