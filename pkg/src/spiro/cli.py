"""Command-line surface.

Commands
    spiro forced analyze|train|eval   forced-maneuver pipeline
    spiro tidal train|classify|rate|study
    spiro positions                   sensor-position transfer study
    spiro battery                     duty-cycle battery estimate
    spiro synth                       synthetic WAVs and demo manifests

Every command takes --seed and is bit-reproducible for identical inputs.
All outputs land under --out. Exit codes: 0 success, 2 invalid input or
validation, 3 rejected maneuver, 4 uncertain classification, 5 onset not
found, 6 signal too short / insufficient peaks, 7 schema mismatch,
10 output I/O failure. A --config file (key=value lines or a JSON object)
may supply any flag of the invoked command.
"""

import argparse
import json
import sys
from pathlib import Path

from . import battery as battery_mod
from . import corpus, flow_curves, ingest_io, learn, pipeline, tidal
from .cnn import TrainConfig
from .errors import (
    InvalidInput,
    RejectedManeuver,
    SpiroError,
    UncertainInput,
    ValidationError,
)
from .features import FORCED_TARGETS
from .seeds import derive_seed
from .signal_core import synth

QUICK_GRIDS = {
    "linear": [{}],
    "random_forest": [{"n_trees": 25}, {"n_trees": 100}],
    "svr": [{"C": c, "kernel": k} for c in (1.0, 10.0) for k in ("linear", "rbf")],
}


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise InvalidInput("config JSON must be an object")
        return doc
    config = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInput(f"config line is not key=value: {line!r}")
        key, value = line.split("=", 1)
        config[key.strip()] = value.strip()
    return config


def _merge_config(argv: list) -> list:
    """Append config entries as flags unless already given on the command line."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise InvalidInput("--config needs a file path")
    config = _load_config(argv[idx + 1])
    argv = argv[:idx] + argv[idx + 2 :]
    for key, value in config.items():
        flag = "--" + str(key).replace("_", "-")
        if flag in argv:
            continue
        if isinstance(value, bool) or str(value).lower() in ("true", "false"):
            if value is True or str(value).lower() == "true":
                argv.append(flag)
        else:
            argv.extend([flag, str(value)])
    return argv


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(payload, path: Path):
    ingest_io.write_json(payload, path)
    print(f"wrote {path}")


def _model_paths(models_dir: Path) -> dict:
    return {target: models_dir / f"{target.lower()}.json" for target in FORCED_TARGETS}


def cmd_forced_analyze(args) -> int:
    out = _out_dir(args)
    rec = ingest_io.load_wav(args.input)
    analysis = pipeline.analyze_forced(rec)
    curve_path = out / "fv_curve.csv"
    curve_path.write_text(flow_curves.curve_to_csv(analysis.curve))
    print(f"wrote {curve_path}")
    verdict = {
        "accepted": analysis.verdict.accepted,
        "reasons": list(analysis.verdict.reasons),
        "rules": {r: flow_curves.RULE_DESCRIPTIONS[r] for r in analysis.verdict.reasons},
    }
    if not analysis.verdict.accepted:
        _write_json({"source": str(args.input), "shape_verdict": verdict}, out / "analysis.json")
        raise RejectedManeuver(
            f"maneuver failed shape rules {', '.join(analysis.verdict.reasons)}; "
            f"see {out / 'analysis.json'}"
        )
    estimates = {}
    for target, model_path in _model_paths(Path(args.models)).items():
        model = learn.deserialize_estimator(json.loads(model_path.read_text()))
        fv = pipeline.maneuver_features(analysis, target)
        estimates[target.lower()] = learn.predict(model, fv)
    _write_json(
        {
            "source": str(args.input),
            "pef_ls": estimates["pef"],
            "fev1_l": estimates["fev1"],
            "fvc_l": estimates["fvc"],
            "shape_verdict": verdict,
        },
        out / "analysis.json",
    )
    return 0


def cmd_forced_train(args) -> int:
    out = _out_dir(args)
    entries = ingest_io.load_manifest(args.manifest)
    summary = {"model_kind": args.kind, "targets": {}, "rejected": {}}
    for target in FORCED_TARGETS:
        dataset, rejected = pipeline.build_forced_dataset(entries, target)
        hyper = {}
        if args.kind == "random_forest":
            hyper["n_trees"] = args.n_trees
        if args.sfs:
            selection = learn.sfs(
                dataset, args.kind, hyper, max_features=args.sfs, seed=derive_seed(args.seed, "sfs", target)
            )
            hyper["features"] = selection
        model = learn.fit(args.kind, dataset, hyper, seed=derive_seed(args.seed, target))
        path = out / f"{target.lower()}.json"
        ingest_io.write_json(learn.serialize_estimator(model), path)
        print(f"wrote {path}")
        summary["targets"][target] = {
            "rows": len(dataset.rows),
            "subjects": dataset.subjects,
            "selected_features": list(model.selected_features)
            if len(model.selected_features) != len(model.schema)
            else "all",
        }
        summary["rejected"].update(rejected)
    _write_json(summary, out / "training_summary.json")
    return 0


def cmd_forced_eval(args) -> int:
    out = _out_dir(args)
    entries = ingest_io.load_manifest(args.manifest)
    flagged = []
    for target in FORCED_TARGETS:
        dataset, rejected = pipeline.build_forced_dataset(entries, target)
        grid = learn.default_grid(args.kind) if args.grid == "paper" else QUICK_GRIDS[args.kind]
        report = learn.nested_loocv(
            dataset,
            args.kind,
            grid,
            seed=derive_seed(args.seed, "eval", target),
            sfs_max_features=args.sfs or None,
            sfs_mode=args.sfs_mode,
        )
        for path in ingest_io.emit_report(report, out, args.format, stem=f"report_{target.lower()}"):
            print(f"wrote {path}")
        if not report.within_ats_gate:
            flagged.append((target, report.mpe))
        print(
            f"{target}: MPE {report.mpe:.2f} % over {len(report.per_subject_percent_error)} subjects"
            + (f" (rejected maneuvers: {len(rejected)})" if rejected else "")
        )
    for target, mpe in flagged:
        print(f"warning: {target} MPE {mpe:.2f} % exceeds the {learn.ATS_GATE_PERCENT} % gate")
    return 0


def _tidal_samples(args) -> list:
    if getattr(args, "synthetic", 0):
        return corpus.make_tidal_corpus(n_per_class=args.synthetic, seed=args.seed)
    if not getattr(args, "manifest", None):
        raise InvalidInput("need --manifest or --synthetic")
    entries = ingest_io.load_manifest(args.manifest)
    samples = []
    for entry in entries:
        if entry.maneuver != "tidal":
            continue
        label = entry.audio_class or "tidal"
        if label not in corpus.CLASS_NAMES:
            raise ValidationError(f"audio_class {label!r} not in {corpus.CLASS_NAMES}")
        samples.append(
            corpus.LabeledRecording(
                recording=ingest_io.load_wav(entry.audio_path),
                label=label,
                true_rate_bpm=entry.rr_bpm,
            )
        )
    if not samples:
        raise ValidationError("manifest has no tidal entries")
    return samples


def cmd_tidal_train(args) -> int:
    out = _out_dir(args)
    samples = _tidal_samples(args)
    train_config = TrainConfig(epochs=args.epochs)
    grid = tidal.HYPER_GRID if args.tune else None
    model = tidal.train_cnn(samples, seed=args.seed, grid=grid, train_config=train_config)
    path = out / "tidal_cnn.json"
    _write_json(tidal.serialize_cnn(model), path)
    result = tidal.crossval_accuracy(
        samples,
        tidal.TidalWindowHyper(model.window_s, model.offset_s, model.fft_len),
        seed=derive_seed(args.seed, "report"),
        train_config=train_config,
        folds=min(tidal.FOLD_COUNT, len(samples)),
    )
    _write_json(
        {
            "accuracy": result.accuracy,
            "fold_accuracies": list(result.fold_accuracies),
            "confusion": {f"{t}->{v}": c for (t, v), c in sorted(result.confusion.items())},
            "hyper": {"window_s": model.window_s, "offset_s": model.offset_s, "fft_len": model.fft_len},
        },
        out / "training_report.json",
    )
    return 0


def _load_cnn(path: str) -> tidal.CnnModel:
    return tidal.deserialize_cnn(json.loads(Path(path).read_text()))


def cmd_tidal_classify(args) -> int:
    out = _out_dir(args)
    model = _load_cnn(args.model)
    rec = ingest_io.load_wav(args.input)
    decision = tidal.classify(model, rec)
    _write_json(
        tidal.decision_record(decision, source=str(args.input)), out / "decision.json"
    )
    print(f"label: {decision.voted_label} (fraction {decision.vote_fraction:.2f})")
    return 0


def cmd_tidal_rate(args) -> int:
    out = _out_dir(args)
    rec = ingest_io.load_wav(args.input)
    decision = None
    if args.model:
        decision = tidal.classify(_load_cnn(args.model), rec)
        if decision.voted_label != "tidal" and not args.force:
            raise UncertainInput(
                f"recording voted {decision.voted_label!r} "
                f"(fraction {decision.vote_fraction:.2f}); pass --force to estimate anyway"
            )
    elif not args.force:
        raise InvalidInput("no classifier given; pass --model or --force")
    result = tidal.respiration_rate(tidal.prepare_recording(rec))
    payload = {
        "source": str(args.input),
        "label": decision.voted_label if decision else None,
        "vote_fraction": decision.vote_fraction if decision else None,
        "rate_bpm": result.rate_bpm,
        "rejected": result.rejected,
    }
    _write_json(payload, out / "rate.json")
    if result.rejected:
        print("rejected: no usable envelope peaks")
    else:
        print(f"respiration rate: {result.rate_bpm:.2f} breaths/min")
    return 0


def cmd_tidal_study(args) -> int:
    out = _out_dir(args)
    samples = _tidal_samples(args)
    rates = tuple(int(r) for r in args.rates.split(","))
    eval_fn = tidal.make_crossval_eval_fn(
        train_config=TrainConfig(epochs=args.epochs),
        folds=min(tidal.FOLD_COUNT, len(samples)),
    )
    rows = tidal.sampling_rate_study(eval_fn, samples, rates=rates, seed=args.seed)
    for path in ingest_io.emit_report(rows, out, args.format, stem="sampling_rate_study"):
        print(f"wrote {path}")
    for row in rows:
        mae = "n/a" if row["rate_mae_bpm"] is None else f"{row['rate_mae_bpm']:.3f}"
        print(f"{row['sample_rate_hz']:>6} Hz: accuracy {row['accuracy']:.3f}, rate MAE {mae}")
    return 0


def cmd_battery(args) -> int:
    model = battery_mod.BatteryModel(
        idle_ma=args.idle_ma,
        sampling_ma=args.sampling_ma,
        classify_ma=args.classify_ma,
        duty_per_min=args.duty_per_min,
        sample_duration_s=args.sample_s,
        classify_duration_s=args.classify_s,
        active_h_per_day=args.active_hours,
        capacity_mah=args.capacity_mah,
        idle_day_drain=args.idle_day_drain,
    )
    est = battery_mod.estimate(model)
    print(f"average current: {est.avg_ma:.3f} mA")
    print(f"battery life: {est.days:.1f} days ({est.active_hours:.1f} active hours)")
    if args.out:
        _write_json(est.to_dict(), _out_dir(args) / "battery.json")
    return 0


def cmd_positions(args) -> int:
    out = _out_dir(args)
    entries = ingest_io.load_manifest(args.manifest)
    positions_present = sorted({e.sensor_position for e in entries})
    rows = []

    train_entries = [e for e in entries if e.sensor_position == args.train_position]
    if not any(e.maneuver == "forced" for e in train_entries):
        print(f"warning: no forced entries at {args.train_position}; skipping forced study",
              file=sys.stderr)
    else:
        for target in FORCED_TARGETS:
            train_data, _ = pipeline.build_forced_dataset(train_entries, target)
            hyper = {"n_trees": args.n_trees} if args.kind == "random_forest" else {}
            model = learn.fit(args.kind, train_data, hyper, seed=derive_seed(args.seed, target))
            for position in positions_present:
                if position == args.train_position:
                    continue
                test_entries = [
                    e for e in entries
                    if e.sensor_position == position and e.maneuver == "forced"
                ]
                if not test_entries:
                    print(f"warning: no forced entries at {position}", file=sys.stderr)
                    continue
                test_data, _ = pipeline.build_forced_dataset(test_entries, target)
                per_subject = {}
                preds = learn.predict_rows(model, test_data.rows)
                for row, pred in zip(test_data.rows, preds):
                    per_subject.setdefault(row.subject_id, []).append(
                        learn.percentage_error(row.target, float(pred))
                    )
                mpe = sum(sum(v) / len(v) for v in per_subject.values()) / len(per_subject)
                rows.append(
                    {
                        "maneuver": "forced",
                        "target": target,
                        "position": position,
                        "mpe_percent": mpe,
                        "within_ats_gate": mpe <= learn.ATS_GATE_PERCENT,
                    }
                )

    for position in positions_present:
        errors = []
        for entry in entries:
            if entry.maneuver != "tidal" or entry.sensor_position != position:
                continue
            truth = entry.rr_bpm
            if truth is None and entry.accel_path is not None:
                accel_result = ingest_io.accel_rr(ingest_io.load_accel(entry.accel_path))
                truth = accel_result.rate_bpm if not accel_result.rejected else None
            if truth is None:
                continue
            result = tidal.respiration_rate(
                tidal.prepare_recording(ingest_io.load_wav(entry.audio_path))
            )
            if not result.rejected:
                errors.append(abs(result.rate_bpm - truth))
        if errors:
            rows.append(
                {
                    "maneuver": "tidal",
                    "target": "RR",
                    "position": position,
                    "rate_mae_bpm": sum(errors) / len(errors),
                    "n": len(errors),
                }
            )

    if not rows:
        raise ValidationError("no usable position data in the manifest")
    for path in ingest_io.emit_report(rows, out, args.format, stem="positions"):
        print(f"wrote {path}")
    return 0


def cmd_synth(args) -> int:
    if args.kind == "manifest":
        out = Path(args.out)
        manifest = corpus.write_demo_manifest(
            out,
            n_subjects=args.subjects,
            seed=args.seed,
            positions=tuple(args.positions.split(",")),
            masks=tuple(args.masks.split(",")),
        )
        print(f"wrote {manifest}")
        return 0
    params = {"duration_s": args.duration, "sample_rate_hz": args.rate}
    if args.kind == "am":
        params.update(carrier_hz=args.carrier, message_hz=args.message)
    elif args.kind == "breath":
        params.update(bpm=args.bpm, seed=args.seed)
    elif args.kind == "forced":
        params.update(onset_s=args.onset, seed=args.seed)
    else:
        params.update(seed=args.seed)
    rec = synth(args.kind, **params)
    path = Path(args.out)
    if path.suffix.lower() != ".wav":
        raise InvalidInput(f"synth output must be a .wav path, got {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    ingest_io.save_wav(rec, path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spiro", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    forced = sub.add_parser("forced", help="forced-maneuver pipeline")
    forced_sub = forced.add_subparsers(dest="subcommand", required=True)

    fa = forced_sub.add_parser("analyze", help="estimate PEF/FEV1/FVC for one WAV")
    fa.add_argument("--input", required=True)
    fa.add_argument("--models", required=True, help="directory holding pef/fev1/fvc.json")
    fa.add_argument("--out", required=True)
    common(fa)
    fa.set_defaults(func=cmd_forced_analyze)

    ft = forced_sub.add_parser("train", help="fit per-target estimators from a manifest")
    ft.add_argument("--manifest", required=True)
    ft.add_argument("--out", required=True)
    ft.add_argument("--kind", choices=learn.MODEL_KINDS, default="random_forest")
    ft.add_argument("--n-trees", type=int, default=100)
    ft.add_argument("--sfs", type=int, default=0, help="select up to N features first")
    common(ft)
    ft.set_defaults(func=cmd_forced_train)

    fe = forced_sub.add_parser("eval", help="nested leave-one-subject-out evaluation")
    fe.add_argument("--manifest", required=True)
    fe.add_argument("--out", required=True)
    fe.add_argument("--kind", choices=learn.MODEL_KINDS, default="random_forest")
    fe.add_argument("--grid", choices=("paper", "quick"), default="paper")
    fe.add_argument("--sfs", type=int, default=0)
    fe.add_argument("--sfs-mode", choices=("inner", "global"), default="inner")
    common(fe)
    fe.set_defaults(func=cmd_forced_eval)

    tidal_p = sub.add_parser("tidal", help="tidal classification and respiration rate")
    tidal_sub = tidal_p.add_subparsers(dest="subcommand", required=True)

    tt = tidal_sub.add_parser("train", help="train the 3-class window classifier")
    tt.add_argument("--manifest")
    tt.add_argument("--synthetic", type=int, default=0, metavar="N",
                    help="use a synthetic corpus with N recordings per class")
    tt.add_argument("--out", required=True)
    tt.add_argument("--tune", action="store_true", help="grid-search window/offset/fft")
    tt.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    common(tt)
    tt.set_defaults(func=cmd_tidal_train)

    tc = tidal_sub.add_parser("classify", help="vote a recording into a class")
    tc.add_argument("--input", required=True)
    tc.add_argument("--model", required=True)
    tc.add_argument("--out", required=True)
    common(tc)
    tc.set_defaults(func=cmd_tidal_classify)

    tr = tidal_sub.add_parser("rate", help="respiration rate of a tidal recording")
    tr.add_argument("--input", required=True)
    tr.add_argument("--model", help="classifier used to gate non-tidal inputs")
    tr.add_argument("--force", action="store_true", help="skip the tidal gate")
    tr.add_argument("--out", required=True)
    common(tr)
    tr.set_defaults(func=cmd_tidal_rate)

    ts = tidal_sub.add_parser("study", help="sampling-rate sensitivity study")
    ts.add_argument("--manifest")
    ts.add_argument("--synthetic", type=int, default=8, metavar="N")
    ts.add_argument("--rates", default="16000,8000,4000,2000,1000")
    ts.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    ts.add_argument("--out", required=True)
    common(ts)
    ts.set_defaults(func=cmd_tidal_study)

    bat = sub.add_parser("battery", help="battery-life estimate")
    bat.add_argument("--idle-ma", type=float, default=battery_mod.IDLE_MA)
    bat.add_argument("--sampling-ma", type=float, default=battery_mod.SAMPLING_MA)
    bat.add_argument("--classify-ma", type=float, default=battery_mod.CLASSIFY_MA)
    bat.add_argument("--duty-per-min", type=float, default=1.0)
    bat.add_argument("--sample-s", type=float, default=battery_mod.SAMPLE_DURATION_S)
    bat.add_argument("--classify-s", type=float, default=battery_mod.CLASSIFY_DURATION_S)
    bat.add_argument("--active-hours", type=float, default=11.0)
    bat.add_argument("--capacity-mah", type=float, default=240.0)
    bat.add_argument("--idle-day-drain", action="store_true")
    bat.add_argument("--out", default="")
    common(bat)
    bat.set_defaults(func=cmd_battery)

    pos = sub.add_parser("positions", help="train at one position, test at the others")
    pos.add_argument("--manifest", required=True)
    pos.add_argument("--out", required=True)
    pos.add_argument("--train-position", default="L1")
    pos.add_argument("--kind", choices=learn.MODEL_KINDS, default="random_forest")
    pos.add_argument("--n-trees", type=int, default=100)
    common(pos)
    pos.set_defaults(func=cmd_positions)

    sy = sub.add_parser("synth", help="synthetic WAVs and demo manifests")
    sy.add_argument("--kind", choices=("am", "breath", "forced", "noise", "manifest"),
                    required=True)
    sy.add_argument("--out", required=True)
    sy.add_argument("--duration", type=float, default=20.0)
    sy.add_argument("--rate", type=int, default=16000)
    sy.add_argument("--bpm", type=float, default=15.0)
    sy.add_argument("--carrier", type=float, default=1000.0)
    sy.add_argument("--message", type=float, default=2.0)
    sy.add_argument("--onset", type=float, default=1.5)
    sy.add_argument("--subjects", type=int, default=5)
    sy.add_argument("--positions", default="R3")
    sy.add_argument("--masks", default="n95")
    common(sy)
    sy.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _merge_config(argv)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SpiroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
