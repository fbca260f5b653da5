"""One test per acceptance criterion; each prints a PASS/FAIL line with its measurements."""

import json
import math
import time

import numpy as np
import pytest
from scipy import signal as sps

from conftest import ACCEPTANCE_LINES, SURROGATE_SEED, SURROGATE_SUBJECTS
from oracles import ScalarSipDec, band_mean, com_angle, direct_dft
from swaybench.dec import (PRESETS, DecController, DecParams, DelayLine, JointGains, deadband)
from swaybench.pipeline import TrialConfig, align, estimate_energy, run_protocol, run_trial
from swaybench.plant import PlantParams, PlantState, SensorReadout, com_sway
from swaybench.scoring import ReferenceStats, distances, surrogate_reference
from swaybench.spectral import (BandPlan, Frf, WeightVector, band_average, default_band_plan,
                                estimate_frf, extract_peaks)
from swaybench.stimulus import PrtsConfig, SampledSignal, generate_prts


def verdict(name, ok, detail, elapsed, budget):
    passed = bool(ok) and elapsed < budget
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}; {elapsed:.2f} s (budget {budget} s)"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def test_prts_spectral_comb():
    start = time.perf_counter()
    x = generate_prts(PrtsConfig()).values
    odd = np.array([abs(direct_dft(x, k)) ** 2 for k in range(1, 50, 2)])
    even = np.array([abs(direct_dft(x, k)) ** 2 for k in range(2, 51, 2)])
    elapsed = time.perf_counter() - start
    rel = even.max() / odd.max()
    verdict("PRTS spectral comb", rel < 1e-10 and np.all(odd > 0) and odd.size == 25,
            f"max even/odd power {rel:.1e}, min odd power {odd.min():.2e} over {odd.size} peaks",
            elapsed, 1)


def test_frf_first_order_lowpass():
    start = time.perf_counter()
    fc = 1.0
    tau = 1.0 / (2 * math.pi * fc)
    one = generate_prts(PrtsConfig())
    n = len(one)
    x = np.tile(one.values, 3)
    t = np.arange(x.size) / one.sample_rate
    _, y, _ = sps.lsim(([1.0], [tau, 1.0]), x, t, interp=True)
    plan = default_band_plan()
    u_pk = extract_peaks(SampledSignal(x[n:], 100.0), plan, 2)
    y_pk = extract_peaks(SampledSignal(y[n:], 100.0), plan, 2)
    h = estimate_frf(u_pk, y_pk, plan).h
    exact = 1.0 / (1.0 + 2j * math.pi * plan.f_x * tau)
    mag = np.max(np.abs(np.abs(h) / np.abs(exact) - 1))
    phase = np.max(np.abs(np.degrees(np.angle(h / exact))))
    elapsed = time.perf_counter() - start
    verdict("FRF correctness (1 Hz low-pass)", mag < 0.02 and phase < 2.0,
            f"max magnitude error {mag:.2%}, max phase error {phase:.2f} deg", elapsed, 5)


@pytest.mark.xfail(strict=True, reason="weighted score exceeds the Mahalanobis distance for a "
                                       "correlated covariance; see README")
def test_scoring_identities(surrogate):
    ref, _ = surrogate
    plan = ref.plan
    start = time.perf_counter()
    d_mu, _ = distances(Frf.from_real(ref.mu, plan), ref)
    rng = np.random.default_rng(0)
    unit = ReferenceStats(plan, np.zeros(22), np.eye(22), WeightVector(np.ones(11)))
    euclid = max(abs(distances(Frf.from_real(v, plan), unit)[0] - np.linalg.norm(v))
                 for v in rng.normal(size=(100, 22)))
    draws = ref.cholesky @ rng.standard_normal((22, 1000))
    pairs = np.array([distances(Frf.from_real(ref.mu + d, plan), ref) for d in draws.T])
    violations = int(np.count_nonzero(pairs[:, 0] > pairs[:, 1]))
    worst = float(np.max(pairs[:, 0] / pairs[:, 1]))
    elapsed = time.perf_counter() - start
    verdict("Scoring identities", d_mu <= 1e-12 and euclid <= 1e-12 and violations == 0,
            f"D(mu)={d_mu:.1e}, |D-||v|||<={euclid:.1e}, D>Mahalanobis in {violations}/1000 draws "
            f"from N(0, Sigma) of the {ref.n_subjects}-subject surrogate (max ratio {worst:.3f})",
            elapsed, 1)


def test_threshold_and_delay_units():
    start = time.perf_counter()
    theta = math.radians(0.17)
    branches = (deadband(0.5 * theta, theta) == 0.0, deadband(2 * theta, theta) == theta,
                deadband(-2 * theta, theta) == -theta)
    rng = np.random.default_rng(1)
    shifts_ok = True
    for k in range(0, 11):
        x = rng.normal(size=60)
        line = DelayLine(k)
        out = [line.push(v) for v in x]
        shifts_ok &= out[:k] == [0.0] * k and out[k:] == list(x[: 60 - k])
    elapsed = time.perf_counter() - start
    verdict("Threshold/delay unit suite", all(branches) and shifts_ok,
            f"dead-band branches exact {sum(branches)}/3, k-tick shift exact for k=0..10: {shifts_ok}",
            elapsed, 1)


def test_closed_loop_stability_gate():
    start = time.perf_counter()
    config = TrialConfig(prts=PrtsConfig(peak_to_peak=1.0, n_periods=2))
    rec = run_trial(config)
    peak = float(np.max(np.abs(rec.com_sway.values)))
    elapsed = time.perf_counter() - start
    verdict("Closed-loop stability gate", peak < 5.0 and len(rec) == 4000,
            f"no fall over warm-up + 2 periods, peak |COM sway| {peak:.3f} deg", elapsed, 60)


def test_protocol_replication(surrogate):
    ref, build_time = surrogate
    start = time.perf_counter()
    first = run_protocol(ref, PRESETS, seed=SURROGATE_SEED)
    second = run_protocol(ref, PRESETS, seed=SURROGATE_SEED)
    rebuilt = surrogate_reference(SURROGATE_SUBJECTS, SURROGATE_SEED)
    elapsed = time.perf_counter() - start + build_time
    scores = [r.score.score_d for r in first.reports]
    cdfs = [r.score.cdf for r in first.reports]
    same_report = first.to_json() == second.to_json()
    same_ref = json.dumps(rebuilt.to_dict(), sort_keys=True) == json.dumps(ref.to_dict(), sort_keys=True)
    ok = (len(scores) == 5 and not first.failures and all(map(math.isfinite, scores))
          and len(set(scores)) == 5 and all(0.0 <= c <= 1.0 for c in cdfs) and same_report and same_ref
          and ref.n_subjects == SURROGATE_SUBJECTS)
    table = ", ".join(f"{r.label} D={r.score.score_d:.3f} cdf={r.score.cdf:.3f}" for r in first.reports)
    verdict("Protocol replication in silico", ok,
            f"{ref.n_subjects}-subject surrogate; {table}; byte-identical report {same_report}, "
            f"reference {same_ref}", elapsed, 600)


def test_alignment_monte_carlo():
    start = time.perf_counter()
    one = generate_prts(PrtsConfig())
    base = np.tile(one.values, 2)
    noise_std = math.sqrt(np.mean(one.values ** 2) / 10.0)  # SNR 10 dB
    worst = 0
    for rep in range(100):
        rng = np.random.default_rng(rep)
        lag = int(rng.integers(-200, 201))
        x = np.roll(base, lag) + noise_std * rng.standard_normal(base.size)
        worst = max(worst, abs(align(SampledSignal(x, 100.0), one) - lag))
    elapsed = time.perf_counter() - start
    verdict("Alignment", worst <= 1, f"worst lag error {worst} samples over 100 seeded lags in [-200, 200]",
            elapsed, 30)


def test_energy_estimator():
    start = time.perf_counter()
    fs, f, a, b, periods = 100.0, 0.5, 3.0, 0.2, 10
    t = np.arange(int(periods / f * fs) + 1) / fs
    w = 2 * math.pi * f
    torque = SampledSignal(a * np.sin(w * t), fs, "N*m")
    angle = SampledSignal(b * np.cos(w * t), fs, "rad")
    exact = a * b * w * (periods / f) / 2.0  # integral of |a b w sin^2|
    got = estimate_energy(torque, angle)
    zero = estimate_energy(SampledSignal(np.zeros(t.size), fs, "N*m"), angle)
    elapsed = time.perf_counter() - start
    err = abs(got / exact - 1)
    verdict("Energy estimator", err < 0.005 and zero == 0.0,
            f"sinusoid error {err:.3%} ({got:.5f} vs {exact:.5f} J), zero-torque {zero}", elapsed, 1)


def test_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    # band averaging on random peak values and random covering band plans
    band_err = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 30))
        bands = [tuple(sorted(rng.choice(n, size=int(rng.integers(1, min(n, 5) + 1)), replace=False)))
                 for _ in range(int(rng.integers(1, 12)))]
        bands.append(tuple(range(n)))
        plan = BandPlan(tuple(np.arange(n) * 0.1 + 0.05), tuple(bands))
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        band_err = max(band_err, np.max(np.abs(band_average(v, plan).values - band_mean(v, plan.bands))))
    # COM sway on random chains and postures
    com_err = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 5))
        lengths = rng.uniform(0.1, 0.6, k)
        coms = lengths * rng.uniform(0, 1, k)
        masses = rng.uniform(0.5, 10, k)
        params = PlantParams(tuple(masses), tuple(coms), tuple(lengths), tuple(masses * lengths ** 2 / 12))
        state = PlantState(rng.normal(scale=0.4, size=k), np.zeros(k), float(rng.normal(scale=0.1)))
        com_err = max(com_err, abs(com_sway(state, params) - com_angle(state.phi, masses, coms, lengths)))
    # single-joint DEC tick on random gains and readout sequences
    dec_err = 0.0
    for _ in range(100):
        delay = int(rng.integers(0, 8))
        gains = JointGains(kp=float(rng.uniform(0, 200)), kd=float(rng.uniform(0, 30)),
                           kp_pass=float(rng.uniform(0, 20)), kd_pass=float(rng.uniform(0, 30)),
                           gain=float(rng.uniform(0.5, 1.5)), delay=delay / 100.0,
                           threshold=float(rng.uniform(0, 0.01)), controlled="com")
        params = DecParams((gains,), ("ankle",))
        plant = PlantParams((15.3,), (0.68,), (1.52,), (2.9,))
        ctrl = DecController(params, plant)
        oracle = ScalarSipDec(gains.kp, gains.kd, gains.kp_pass, gains.kd_pass, gains.gain, delay,
                              gains.threshold, 100.0)
        for _ in range(40):
            q, qd, head, head_v = rng.normal(scale=[0.05, 0.2, 0.05, 0.2])
            r = SensorReadout(np.array([q]), np.array([qd]), head, head_v)
            dec_err = max(dec_err, abs(ctrl.tick(r)[0] - oracle.tick(head, head_v, q, qd)))
    elapsed = time.perf_counter() - start
    ok = band_err <= 1e-12 and com_err <= 1e-12 and dec_err <= 1e-9
    verdict("Oracle equivalence", ok,
            f"band mean max err {band_err:.1e} (tol 1e-12), COM sway {com_err:.1e} rad (tol 1e-12), "
            f"DEC tick {dec_err:.1e} N m (tol 1e-9); 100 cases each", elapsed, 30)
