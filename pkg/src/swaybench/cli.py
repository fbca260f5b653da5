"""Command-line entry point: ``swaybench <verb> [options]``.

Exit codes: 0 ok, 2 validation error, 3 trial failure (fall), 4 analysis error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .dec import PRESETS, DecParams, preset
from .errors import (AlignmentError, ConfigurationError, DegenerateExcitationError, DimensionError,
                     FallEvent, IngestionError, PipelineError, StatisticsError)
from .pipeline import (IngestSchema, SurrogateConfig, TrialConfig, analyze, export_csv, ingest,
                       run_protocol, run_trial)
from .scoring import DEFAULT_BOOTSTRAP, ReferenceStats, score, surrogate_reference
from .spectral import Frf
from .stimulus import PrtsConfig, generate_prts, peak_frequencies, write_stimulus_csv

EXIT_OK, EXIT_VALIDATION, EXIT_FALL, EXIT_ANALYSIS = 0, 2, 3, 4


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(str(path), f"cannot read JSON: {exc}") from exc


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    return path


def _trial_config(args) -> TrialConfig:
    config = TrialConfig.from_dict(_load_json(args.config)) if args.config else TrialConfig()
    if args.preset:
        config = replace(config, label=args.preset, controller=preset(args.preset, config.plant.n_links))
    if args.controller_config:
        config = replace(config, controller=DecParams.load(args.controller_config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.periods is not None:
        config = replace(config, prts=replace(config.prts, n_periods=args.periods))
    return config.validate()


def _load_reference(path) -> ReferenceStats:
    try:
        return ReferenceStats.load(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigurationError("reference", f"cannot load {path}: {exc}") from exc


def cmd_generate_stimulus(args) -> int:
    data = _load_json(args.config) if args.config else {}
    config = PrtsConfig(**data)
    if args.peak_to_peak is not None:
        config = replace(config, peak_to_peak=args.peak_to_peak)
    if args.periods is not None:
        config = replace(config, n_periods=args.periods)
    signal = generate_prts(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stimulus_csv(signal, out / "stimulus.csv")
    _write_json(out / "stimulus.json", {
        "config": config.__dict__,
        "meta": signal.meta,
        "peak_frequencies_hz": [float(f) for f in peak_frequencies(config)],
    })
    print(f"wrote {out / 'stimulus.csv'} ({len(signal)} samples)")
    return EXIT_OK


def cmd_run_trial(args) -> int:
    config = _trial_config(args)
    recording = run_trial(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(recording, out / "trial.csv")
    _write_json(out / "trial_config.json", config.to_dict())
    print(f"wrote {out / 'trial.csv'} ({len(recording)} samples, config {config.hash})")
    return EXIT_OK


def _schema(args) -> IngestSchema:
    return IngestSchema(**_load_json(args.schema)) if args.schema else IngestSchema()


def cmd_ingest(args) -> int:
    recording = ingest(args.csv, _schema(args))
    info = {
        "samples": len(recording),
        "sample_rate": recording.sample_rate,
        "period_samples": recording.period_samples,
        "joints": sorted(recording.joint_angles),
        "torques": sorted(recording.joint_torques),
        "meta": recording.meta,
    }
    print(json.dumps(info, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    recording = ingest(args.csv, _schema(args))
    ref = _load_reference(args.reference) if args.reference else None
    report = analyze(recording, ref, n_bootstrap=args.bootstrap, seed=args.seed or 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "analysis.json").write_text(report.to_json())
    _write_json(out / "frf.json", report.frf.to_dict())
    print(report.summary())
    return EXIT_OK


def cmd_make_reference(args) -> int:
    ref = surrogate_reference(args.n_subjects, args.seed or 0, SurrogateConfig())
    path = ref.save(Path(args.out))
    failures = ref.provenance.get("failures", [])
    print(f"wrote {path}: {ref.n_subjects} subjects, {len(failures)} failed")
    return EXIT_OK


def cmd_score(args) -> int:
    ref = _load_reference(args.reference)
    frf = Frf.from_dict(_load_json(args.frf))
    result = score(frf, ref, args.bootstrap, args.seed or 0)
    print(json.dumps(result.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    ref = _load_reference(args.reference)
    base = _trial_config(argparse.Namespace(config=args.config, preset=None, controller_config=None,
                                            seed=None, periods=args.periods))
    result = run_protocol(ref, tuple(args.presets), args.seed or 0, base, args.bootstrap, args.workers)
    paths = result.write(args.out_dir)
    print(result.summary(), end="")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_FALL if result.failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swaybench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_dir=True):
        p.add_argument("--seed", type=int, default=None)
        if out_dir:
            p.add_argument("--out-dir", default=".")

    p = sub.add_parser("generate-stimulus", help="write one or more PRTS periods as CSV")
    p.add_argument("--config", help="JSON with PrtsConfig fields")
    p.add_argument("--peak-to-peak", type=float)
    p.add_argument("--periods", type=int)
    common(p)
    p.set_defaults(func=cmd_generate_stimulus)

    p = sub.add_parser("run-trial", help="simulate one closed-loop trial and export it")
    p.add_argument("--config", help="trial configuration JSON")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--controller-config", help="controller configuration JSON")
    p.add_argument("--periods", type=int)
    common(p)
    p.set_defaults(func=cmd_run_trial)

    for verb, func, text in (("ingest", cmd_ingest, "validate a trial CSV"),
                             ("analyze", cmd_analyze, "FRF, score and energy of a trial CSV")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("csv")
        p.add_argument("--schema", help="JSON with IngestSchema fields (column mapping)")
        if verb == "analyze":
            p.add_argument("--reference")
            p.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
            common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("make-reference", help="synthesise a surrogate reference population")
    p.add_argument("--n-subjects", type=int, default=38)
    p.add_argument("--out", default="reference.json")
    common(p, out_dir=False)
    p.set_defaults(func=cmd_make_reference)

    p = sub.add_parser("score", help="score a saved FRF against a reference")
    p.add_argument("frf")
    p.add_argument("--reference", required=True)
    p.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
    common(p, out_dir=False)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="run and score the controller presets")
    p.add_argument("--reference", required=True)
    p.add_argument("--presets", nargs="+", default=list(PRESETS), choices=PRESETS)
    p.add_argument("--config", help="base trial configuration JSON")
    p.add_argument("--periods", type=int)
    p.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FallEvent as exc:
        print(f"trial failed: {exc}", file=sys.stderr)
        return EXIT_FALL
    except PipelineError as exc:
        if isinstance(exc.cause, (IngestionError, ConfigurationError)):
            print(f"validation error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (ConfigurationError, IngestionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (AlignmentError, DegenerateExcitationError, StatisticsError, DimensionError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
