"""Command-line entry point.

    seizure-forge synth     --out DIR
    seizure-forge featurize --manifest M --out CACHE
    seizure-forge train     (--manifest M | --cache C) --out DIR
    seizure-forge distill   (--manifest M | --cache C) --out DIR [--teacher DIR]
    seizure-forge evaluate  (--manifest M | --cache C) --checkpoints DIR --out DIR
    seizure-forge describe  [--config default|small|student]

Exit status: 0 success, 2 usage error, 3 data error, 4 runtime error.
The log level comes from ``SEIZURE_FORGE_LOG`` (default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .eeg_io import NUM_CLASSES, EdfError, ManifestError, MontageError, load_manifest
from .evaluation import FoldError, FoldSpec, average_folds, evaluate, patient_wise_folds, seizure_wise_folds
from .feature_cache import read_feature_cache, write_feature_cache
from .models import Ensemble, EnsembleConfig, StudentConfig, build_student, profile
from .msfs import FREQUENCIES, WINDOW_LENGTHS, WINDOW_STEPS
from .nn import load_checkpoint, save_checkpoint
from .pipeline import cross_validate_ensemble, cross_validate_student, draw_member_params, featurize
from .report import RUN_MANIFEST, file_digest, read_json, write_confusion_csv, write_json, write_report
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .training import KdConfig, TrainConfig

logger = logging.getLogger("seizure_forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class DataError(Exception):
    """Input that cannot be used: unreadable cache, mismatched manifest, missing checkpoint."""


# --------------------------------------------------------------------------- parser

def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _size(text: str) -> tuple:
    vals = _ints(text.replace("x", ","))
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"expected SIZE or HxW, got {text!r}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seizure-forge", description="Seizure-type classification from scalp EEG.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    common.add_argument("--threads", type=int, default=1, help="worker cap for featurization")

    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--members", type=int, default=3, help="number of (f, w, o) draws")
    sampling.add_argument("--frequencies", type=_ints, default=FREQUENCIES, help="candidate rates in Hz")
    sampling.add_argument("--window-lengths", type=_floats, default=WINDOW_LENGTHS, help="candidate windows in s")
    sampling.add_argument("--steps", type=_floats, default=WINDOW_STEPS, help="candidate window steps in s")
    sampling.add_argument("--out-size", type=_size, default=(112, 112), help="stack size, e.g. 112 or 64x64")
    sampling.add_argument("--literal-s1", action="store_true", help="use exp(R) + P instead of exp(R + iP)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", type=Path, help="seizure manifest CSV")
    data.add_argument("--cache", type=Path, help="feature cache written by featurize")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, default=400)
    training.add_argument("--batch-size", type=int, default=50)
    training.add_argument("--lr", type=float, default=1e-3, help="initial ADAM learning rate")
    training.add_argument("--decay", type=float, default=5e-4, help="L2 weight decay")
    training.add_argument("--folds", choices=("seizure", "patient"), default="patient")
    training.add_argument("--k", type=int, help="fold count (default 5 seizure-wise, 3 patient-wise)")
    training.add_argument("--train-fraction", type=float, default=1.0, help="class-stratified share of training events")
    training.add_argument("--model", choices=("full", "small"), default="full", help="ensemble size preset")
    training.add_argument("--aggregation", choices=("mean", "vote"), default="mean")
    training.add_argument("--csv", action="store_true", help="also export event-level confusion matrices as CSV")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic EDF dataset and manifest")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--patients", type=int, default=6)
    p.add_argument("--seizures", type=int, default=10, help="seizures per class")
    p.add_argument("--duration", type=float, default=10.0, help="seizure length in s")
    p.add_argument("--snr", type=float, default=20.0, help="signal-to-noise ratio in dB")
    p.add_argument("--rate", type=int, default=256, help="EDF sampling rate in Hz")

    p = sub.add_parser("featurize", parents=[common, sampling], help="write a feature cache")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="cache file to write")

    p = sub.add_parser("train", parents=[common, sampling, data, training], help="cross-validate the ensemble")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("distill", parents=[common, sampling, data, training], help="cross-validate the student")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--teacher", type=Path, help="train output directory whose ensembles act as teachers")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--temperature", type=float, default=2.0)
    p.add_argument("--literal-kl", action="store_true", help="use the literal KL variant")
    p.add_argument("--plain", action="store_true", help="plain cross-entropy student, no teacher")

    p = sub.add_parser("evaluate", parents=[common, sampling, data], help="re-evaluate saved checkpoints")
    p.add_argument("--checkpoints", type=Path, required=True, help="train or distill output directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--aggregation", choices=("mean", "vote"), default="mean")
    p.add_argument("--csv", action="store_true")

    p = sub.add_parser("describe", help="architecture table with parameter and FLOP counts")
    p.add_argument("--config", choices=("default", "small", "student"), default="default")
    p.add_argument("--out-size", type=_size, default=None, help="input size (default 112, or 32 for small)")
    p.add_argument("--timed", action="store_true", help="also time one forward pass (not reproducible)")
    p.add_argument("--out", type=Path, help="directory for the run manifest and report")
    return parser


# --------------------------------------------------------------------------- helpers

def _config_echo(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[key] = value
    return out


def _run_manifest(args, **extra) -> dict:
    manifest = {"tool": "seizure-forge", "version": __version__, "subcommand": args.subcommand,
                "seed": getattr(args, "seed", None), "config": _config_echo(args)}
    manifest.update(extra)
    return manifest


def _prepare_out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _read_cache(path: Path):
    try:
        return read_feature_cache(path)
    except OSError as exc:
        raise DataError(f"cannot read feature cache {path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc)) from exc


def _cache_sidecar(cache: Path) -> Path:
    return cache.with_name(cache.name + ".run.json")


def _load_features(args, parser):
    """Manifest plus one subspace per member, from a cache or by featurizing."""
    if args.manifest is None and args.cache is None:
        parser.error(f"{args.subcommand} needs --manifest or --cache")
    if args.cache is not None:
        subspaces = _read_cache(args.cache)
        manifest_path = args.manifest
        if manifest_path is None:
            sidecar = _cache_sidecar(args.cache)
            if not sidecar.exists():
                raise DataError(f"{args.cache} has no {sidecar.name}; pass --manifest for fold construction")
            try:
                manifest_path = Path(read_json(sidecar)["manifest_path"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{sidecar} is not a featurize run manifest") from exc
        manifest = load_manifest(manifest_path, check_files=False)
        for s in subspaces:
            if len(s) and s.events.max() >= len(manifest):
                raise DataError(f"cache {args.cache} refers to event {s.events.max()} beyond the manifest")
    else:
        manifest = load_manifest(args.manifest)
        params = draw_member_params(args.seed, args.members, args.frequencies, args.window_lengths, args.steps)
        subspaces = featurize(manifest, params, tuple(args.out_size), args.literal_s1, args.threads)
    if not len(manifest):
        raise DataError("the manifest lists no usable seizures")
    return manifest, subspaces


def _make_folds(args, manifest) -> FoldSpec:
    k = args.k or (5 if args.folds == "seizure" else 3)
    if k < 2:
        raise DataError("--k must be at least 2")
    if args.folds == "seizure":
        return seizure_wise_folds(manifest, k, args.seed)
    return patient_wise_folds(manifest, k, args.seed)


def _ensemble_config(model: str, size) -> EnsembleConfig:
    size = tuple(size)
    if model == "small":
        return EnsembleConfig.small(input_size=size)
    base = EnsembleConfig()
    return EnsembleConfig(tuple(replace(m, input_size=size) for m in base.members))


def _input_size(subspaces) -> tuple:
    return tuple(int(v) for v in subspaces[0].x.shape[2:])


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, base_lr=args.lr, decay=args.decay, batch_size=args.batch_size,
                       seed=args.seed)


def _folds_entry(folds: FoldSpec) -> dict:
    return {"mode": folds.mode, "k": folds.k, "seed": folds.seed, "digest": folds.digest()}


def _fold_metrics(results) -> list:
    return [{"fold": r.fold, "n_train_events": len(r.train_events), "test_events": r.test_events,
             "window": r.metrics["window"], "event": r.metrics["event"],
             "event_predictions": {str(k): v for k, v in r.metrics["event_predictions"].items()},
             "final_train_loss": r.history["loss"][-1] if r.history else None}
            for r in results]


def _finish(args, out_dir: Path, manifest: dict, metrics: dict) -> None:
    if getattr(args, "csv", False):
        for fold in metrics.get("folds", []):
            write_confusion_csv(out_dir / f"confusion_event_fold{fold['fold']}.csv", fold["event"]["confusion_matrix"])
    write_json(out_dir / RUN_MANIFEST, manifest)
    write_report(manifest, metrics, out_dir)


# --------------------------------------------------------------------------- subcommands

def cmd_synth(args, parser) -> int:
    try:
        spec = SyntheticSpec(args.classes, args.patients, args.seizures, args.duration, args.snr, args.rate,
                             seed=args.seed)
    except ValueError as exc:
        parser.error(str(exc))
    out = _prepare_out_dir(args.out)
    manifest_path, manifest = generate_synthetic_dataset(out, spec)
    files = sorted(p.name for p in out.glob("*.edf"))
    run = _run_manifest(args, outputs={name: file_digest(out / name) for name in files + [manifest_path.name]},
                        events=len(manifest))
    write_json(out / RUN_MANIFEST, run)
    print(f"wrote {len(manifest)} seizures over {len(files)} recordings to {out}")
    return EXIT_OK


def cmd_featurize(args, parser) -> int:
    manifest = load_manifest(args.manifest)
    if not len(manifest):
        raise DataError("the manifest lists no usable seizures")
    params = draw_member_params(args.seed, args.members, args.frequencies, args.window_lengths, args.steps)
    subspaces = featurize(manifest, params, tuple(args.out_size), args.literal_s1, args.threads)
    if args.out.parent and not args.out.parent.exists():
        _prepare_out_dir(args.out.parent)
    write_feature_cache(args.out, subspaces)
    run = _run_manifest(args, manifest_path=str(args.manifest.resolve()), sampling=[list(p.as_tuple()) for p in params],
                        windows=[len(s) for s in subspaces], outputs={args.out.name: file_digest(args.out)})
    write_json(_cache_sidecar(args.out), run)
    print(f"wrote {sum(len(s) for s in subspaces)} windows for {len(params)} member(s) to {args.out}")
    return EXIT_OK


def cmd_train(args, parser) -> int:
    manifest, subspaces = _load_features(args, parser)
    if len(subspaces) != 3:
        raise DataError(f"the ensemble needs 3 member subspaces, the features provide {len(subspaces)}")
    out = _prepare_out_dir(args.out)
    folds = _make_folds(args, manifest)
    ens_cfg = _ensemble_config(args.model, _input_size(subspaces))
    result = cross_validate_ensemble(manifest, subspaces, folds, ens_cfg, _train_config(args),
                                     args.train_fraction, args.aggregation, keep_models=True)
    checkpoints = []
    for r in result["folds"]:
        name = f"ensemble_fold{r.fold}.snck"
        save_checkpoint(out / name, r.model.state_dict())
        checkpoints.append(name)
    write_json(out / "folds.json", folds.to_dict())
    metrics = {"folds": _fold_metrics(result["folds"]), "mean": result["mean"], "aggregation": args.aggregation}
    run = _run_manifest(args, model="ensemble", sampling=[list(s.params.as_tuple()) for s in subspaces],
                        folds=_folds_entry(folds), checkpoints=checkpoints,
                        train_config=_train_config(args).to_dict(), input_size=list(_input_size(subspaces)),
                        outputs={c: file_digest(out / c) for c in checkpoints})
    _finish(args, out, run, metrics)
    print(f"mean weighted F1: window {result['mean']['window']:.4f}, event {result['mean']['event']:.4f}")
    return EXIT_OK


def _load_teachers(teacher_dir: Path, folds: FoldSpec, size) -> list:
    run_path = teacher_dir / RUN_MANIFEST
    if not run_path.exists():
        raise DataError(f"{teacher_dir} is not a train output directory (no {RUN_MANIFEST})")
    run = read_json(run_path)
    if run.get("model") != "ensemble":
        raise DataError(f"{teacher_dir} does not hold ensemble checkpoints")
    if run["folds"]["digest"] != folds.digest():
        raise DataError("teacher folds differ from the requested folds; use the same --folds, --k and --seed")
    cfg = _ensemble_config(run["config"]["model"], size)
    teachers = []
    for fold in range(folds.k):
        ens = Ensemble.build(cfg)
        ens.load_state_dict(load_checkpoint(teacher_dir / f"ensemble_fold{fold}.snck"))
        teachers.append(ens.eval())
    return teachers


def cmd_distill(args, parser) -> int:
    manifest, subspaces = _load_features(args, parser)
    if len(subspaces) != 3:
        raise DataError(f"the teacher ensemble needs 3 member subspaces, the features provide {len(subspaces)}")
    try:
        kd = None if args.plain else KdConfig(args.alpha, args.beta, args.gamma, args.temperature, args.literal_kl)
    except ValueError as exc:
        parser.error(str(exc))
    out = _prepare_out_dir(args.out)
    folds = _make_folds(args, manifest)
    size = _input_size(subspaces)
    teachers = _load_teachers(args.teacher, folds, size) if args.teacher and kd is not None else None
    student_cfg = StudentConfig(input_size=size)
    result = cross_validate_student(manifest, subspaces, folds, _ensemble_config(args.model, size), student_cfg,
                                    _train_config(args), kd, teachers, args.aggregation, keep_models=True)
    checkpoints = []
    for r in result["folds"]:
        name = f"student_fold{r.fold}.snck"
        save_checkpoint(out / name, r.model.state_dict())
        checkpoints.append(name)
    write_json(out / "folds.json", folds.to_dict())
    metrics = {"folds": _fold_metrics(result["folds"]), "mean": result["mean"], "aggregation": args.aggregation}
    run = _run_manifest(args, model="student", sampling=[list(s.params.as_tuple()) for s in subspaces],
                        folds=_folds_entry(folds), checkpoints=checkpoints,
                        train_config=_train_config(args).to_dict(), kd_config=kd.to_dict() if kd else None,
                        input_size=list(size), outputs={c: file_digest(out / c) for c in checkpoints})
    _finish(args, out, run, metrics)
    print(f"mean weighted F1: window {result['mean']['window']:.4f}, event {result['mean']['event']:.4f}")
    return EXIT_OK


def cmd_evaluate(args, parser) -> int:
    run_path = args.checkpoints / RUN_MANIFEST
    if not run_path.exists():
        raise DataError(f"{args.checkpoints} has no {RUN_MANIFEST}")
    source = read_json(run_path)
    manifest, subspaces = _load_features(args, parser)
    folds_path = args.checkpoints / "folds.json"
    stored = read_json(folds_path)
    assignments = np.asarray(stored["assignments"], dtype=np.int64)
    if len(assignments) != len(manifest):
        raise DataError(f"{folds_path} covers {len(assignments)} events, the manifest {len(manifest)}")
    folds = FoldSpec(stored["mode"], stored["k"], assignments, stored["seed"])
    size = _input_size(subspaces)
    if list(size) != source["input_size"]:
        raise DataError(f"features are {size}, the checkpoints expect {tuple(source['input_size'])}")
    out = _prepare_out_dir(args.out)
    fold_metrics = []
    for fold, name in enumerate(source["checkpoints"]):
        if source["model"] == "ensemble":
            model = Ensemble.build(_ensemble_config(source["config"]["model"], size))
            feats = subspaces
        else:
            model = build_student(StudentConfig(input_size=size))
            feats = subspaces[0]
        model.load_state_dict(load_checkpoint(args.checkpoints / name))
        model.eval()
        _, test = folds.train_test(fold)
        m = evaluate(model, feats, test, args.aggregation)
        fold_metrics.append({"fold": fold, "test_events": test.tolist(), "window": m["window"], "event": m["event"],
                             "event_predictions": {str(k): v for k, v in m["event_predictions"].items()}})
    metrics = {"folds": fold_metrics, "mean": average_folds(fold_metrics), "aggregation": args.aggregation}
    run = _run_manifest(args, model=source["model"], sampling=[list(s.params.as_tuple()) for s in subspaces],
                        folds=_folds_entry(folds), checkpoints=[str(args.checkpoints / c) for c in source["checkpoints"]])
    _finish(args, out, run, metrics)
    print(f"mean weighted F1: window {metrics['mean']['window']:.4f}, event {metrics['mean']['event']:.4f}")
    return EXIT_OK


def cmd_describe(args, parser) -> int:
    size = tuple(args.out_size or ((32, 32) if args.config == "small" else (112, 112)))
    if args.config == "student":
        model = build_student(StudentConfig(input_size=size))
    else:
        model = Ensemble.build(_ensemble_config("small" if args.config == "small" else "full", size))
    prof = profile(model, timed=args.timed)
    table = prof.table()
    print(table)
    if args.out is not None:
        out = _prepare_out_dir(args.out)
        run = _run_manifest(args)
        metrics = {"params": prof.params, "macs": prof.macs, "num_classes": NUM_CLASSES, "profile": table}
        write_json(out / RUN_MANIFEST, run)
        write_report(run, metrics, out)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "featurize": cmd_featurize, "train": cmd_train, "distill": cmd_distill,
    "evaluate": cmd_evaluate, "describe": cmd_describe,
}


def _configure_logging() -> None:
    level_name = os.environ.get("SEIZURE_FORGE_LOG", "WARNING").upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        print("seizure-forge: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    _configure_logging()
    try:
        return COMMANDS[args.subcommand](args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (DataError, EdfError, ManifestError, MontageError, FoldError, OSError) as exc:
        print(f"seizure-forge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        logger.debug("unhandled error", exc_info=True)
        print(f"seizure-forge: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
