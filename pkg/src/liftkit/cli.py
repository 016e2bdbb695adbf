"""``liftkit`` command line.

Exit status: 0 success, 1 usage error, 2 data or validation error, 3 internal
error. Every command that writes artifacts also writes a JSON run manifest
(config echo, sha256 of inputs and outputs, wall time, seeds) next to its
output, or to ``--manifest``.

Settings can come from an INI file given with ``--config``. Keys in the
``[common]`` section apply to every command and keys in a section named after
the command apply to that command only. Key names are the long option names
(``window-len`` or ``window_len``). Precedence, lowest first: built-in
defaults, ``[common]``, ``[<command>]``, command-line flags.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _jit, attribution, evalkit, liftnet, synthgen
from .errors import ConfigError, InputError, LabelError, LiftkitError, SchemaError
from .fusion_filters import FilterKind
from .imu_core import (
    ANY_SENSORS,
    DEFAULT_SCHEMA,
    EolPolicy,
    LabeledRecording,
    SensorId,
    align_labels,
    apply_placement_fix,
    apply_time_offset,
    detect_placement_anomaly,
    estimate_time_offset,
    format_labels,
    read_labels,
    read_recording,
    write_recording,
)
from .windowing import Label, build_dataset, read_dataset, write_dataset

RECORDING_SUFFIX = ".imu"
LABEL_FILE = "labels.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# run context: tracks hashed inputs/outputs and seeds for the manifest
# --------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.seeds: dict[str, int] = {}
        self.results: dict = {}
        self.t0 = time.perf_counter()

    def read(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)
        return path

    def wrote(self, path) -> Path:
        path = Path(path)
        self.outputs[str(path)] = sha256_file(path)
        return path

    def manifest(self) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k not in ("func",)}
        return {
            "command": self.command,
            "liftkit_version": __version__,
            "backend": _jit.BACKEND,
            "config": json.loads(json.dumps(config, default=str)),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "seeds": self.seeds,
            "results": self.results,
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }


def _write_atomic(path, write):
    """Write via a temporary sibling so a failed command leaves no partial artifact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def _write_text(run: Run, path, text: str) -> Path:
    _write_atomic(path, lambda p: Path(p).write_text(text, encoding="utf-8"))
    return run.wrote(path)


# --------------------------------------------------------------------------
# corpus loading
# --------------------------------------------------------------------------

def recording_files(data_dir) -> list[Path]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise InputError(f"data directory {data_dir} not found")
    files = sorted(data_dir.glob("*" + RECORDING_SUFFIX))
    if not files:
        raise InputError(f"no {RECORDING_SUFFIX} recordings in {data_dir}")
    return files


def load_recordings(run: Run, data_dir, any_sensors: bool = False):
    schema = ANY_SENSORS if any_sensors else DEFAULT_SCHEMA
    recs = []
    for path in recording_files(data_dir):
        try:
            recs.append(read_recording(run.read(path), schema))
        except LiftkitError as exc:
            raise type(exc)(f"{path.name}: {exc}") from None
    seen = set()
    for rec in recs:
        if rec.trial_id in seen:
            raise SchemaError(f"duplicate trial id {rec.trial_id}")
        seen.add(rec.trial_id)
    return recs


def labels_path(data_dir, labels) -> Path:
    return Path(labels) if labels else Path(data_dir) / LABEL_FILE


def load_corpus(run: Run, data_dir, labels=None, eol_policy="derive", any_sensors=False) -> list[LabeledRecording]:
    """Recordings of a directory aligned with their label file."""
    lpath = labels_path(data_dir, labels)
    if not lpath.is_file():
        raise InputError(f"label file {lpath} not found")
    recs = load_recordings(run, data_dir, any_sensors)
    raw = read_labels(run.read(lpath))
    by_trial: dict[str, list] = {}
    for lab in raw:
        by_trial.setdefault(lab.trial_id, []).append(lab)
    unknown = sorted(set(by_trial) - {r.trial_id for r in recs})
    if unknown:
        raise LabelError(f"labels for unknown trials: {', '.join(unknown)}")
    policy = EolPolicy(eol_policy)
    return [align_labels(rec, by_trial.get(rec.trial_id, []), policy) for rec in recs]


def _dataset(run: Run, args, balanced=None, stride=None):
    """Dataset from ``--dataset`` or from ``--data`` + labels + windowing flags."""
    if getattr(args, "dataset", None):
        return read_dataset(run.read(args.dataset))
    _require(args, "data")
    corpus = load_corpus(run, args.data, args.labels, args.eol_policy, args.any_sensors)
    run.seeds["window"] = args.seed
    return build_dataset(
        corpus, args.window_len, stride if stride is not None else args.stride, seed=args.seed,
        balanced=(not args.unbalanced) if balanced is None else balanced, overlap_fraction=args.overlap,
    )


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _int_list(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _sensor_set(text: str):
    text = text.strip()
    if text.lower() == "all":
        return tuple(SensorId)
    return tuple(SensorId.parse(s) for s in text.split("+"))


def _model_config(args) -> liftnet.ModelConfig:
    return liftnet.ModelConfig(lstm_hidden=args.hidden, dense_activation=args.dense_activation)


def _train_config(args, seed=None) -> liftnet.TrainConfig:
    return liftnet.TrainConfig(
        batch_size=args.batch_size, epochs=args.epochs, validation_split=args.validation_split,
        learning_rate=args.lr, seed=args.seed if seed is None else seed,
    )


def _setup(args) -> evalkit.ExperimentSetup:
    return evalkit.ExperimentSetup(
        model=_model_config(args), train=_train_config(args), window_len=args.window_len,
        train_stride=args.stride, eval_stride=args.eval_stride, overlap_fraction=args.overlap,
        balance_eval=not args.unbalanced, threshold=args.threshold,
    )


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(run: Run, args):
    _require(args, "out")
    out = Path(args.out)
    distractor = None
    if args.distractor:
        distractor = synthgen.DistractorRule(
            tuple(SensorId.parse(s) for s in args.distractor_sensors.split("+")),
            synthgen.DistractorMode(args.distractor_mode), args.distractor_amplitude,
        )
    template = synthgen.default_motion_spec(
        noise_sigma=(args.noise_accel, args.noise_gyro), distractor=distractor,
    )
    corpus = synthgen.generate_corpus(template, args.trials, args.seed, synthgen.CorpusMode(args.mode))
    run.seeds["corpus"] = args.seed
    out.mkdir(parents=True, exist_ok=True)
    labels = []
    for rec, lr in corpus:
        path = out / f"{rec.trial_id}{RECORDING_SUFFIX}"
        _write_atomic(path, lambda p, rec=rec: write_recording(p, rec))
        run.wrote(path)
        labels.extend(synthgen.labels_for(lr))
    _write_text(run, out / LABEL_FILE, format_labels(labels))
    run.results["trials"] = len(corpus)
    print(f"wrote {len(corpus)} recordings and {len(labels)} labels to {out}")


def cmd_validate(run: Run, args):
    _require(args, "data")
    lpath = labels_path(args.data, args.labels)
    if lpath.is_file():
        corpus = load_corpus(run, args.data, args.labels, args.eol_policy, args.any_sensors)
    else:
        corpus = [LabeledRecording(r) for r in load_recordings(run, args.data, args.any_sensors)]
        print(f"note: no label file at {lpath}; checked recordings only")
    rows = ["trial_id,subject_id,frames,rate_hz,sensors,lifts"]
    for lr in corpus:
        rec = lr.recording
        rows.append(f"{rec.trial_id},{rec.subject_id},{rec.n_frames},{rec.sample_rate_hz!r},"
                    f"{'+'.join(s.name for s in rec.active_sensors)},{len(lr.lifts)}")
    text = "\n".join(rows) + "\n"
    if args.out:
        _write_text(run, args.out, text)
    else:
        sys.stdout.write(text)
    run.results["recordings"] = len(corpus)
    print(f"ok: {len(corpus)} recordings valid", file=sys.stderr)


def _frames_csv(corpus) -> str:
    buf = io.StringIO()
    buf.write("trial_id,bol_frame,eol_frame\n")
    for lr in corpus:
        for lift in lr.lifts:
            buf.write(f"{lr.trial_id},{lift.bol_frame},{lift.eol_frame}\n")
    return buf.getvalue()


def cmd_sync(run: Run, args):
    _require(args, "data")
    corpus = load_corpus(run, args.data, args.labels, args.eol_policy, args.any_sensors)
    text = _frames_csv(corpus)
    if args.out:
        _write_text(run, args.out, text)
    else:
        sys.stdout.write(text)


def cmd_fix_offset(run: Run, args):
    _require(args, "data", "out")
    if (args.offset is None) == (args.model is None):
        raise UsageError("give exactly one of --offset (apply) or --model (estimate)")
    corpus = load_corpus(run, args.data, args.labels, args.eol_policy, args.any_sensors)
    model = None
    if args.model:
        model = liftnet.load_model(run.read(args.model))
    fixed, offsets = [], {}
    for lr in corpus:
        if model is not None:
            scores = liftnet.score_recording(model, lr.recording)
            k = -estimate_time_offset(scores, lr, args.max_lag)
        else:
            k = args.offset
        fixed.append(apply_time_offset(lr, k))
        offsets[lr.trial_id] = k
    labels = [lab for lr in fixed for lab in synthgen.labels_for(lr)]
    _write_text(run, args.out, format_labels(labels))
    run.results["offsets_frames"] = offsets
    for trial, k in offsets.items():
        print(f"{trial}: shifted labels by {k:+d} frames")


def _still_window(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"--still expects START:STOP frames, got {text!r}") from None
    return a, b


def cmd_fix_placement(run: Run, args):
    _require(args, "data", "out", "suspect")
    out = Path(args.out)
    if out.resolve() == Path(args.data).resolve():
        raise UsageError("--out must differ from --data (inputs are never modified)")
    suspect = SensorId.parse(args.suspect)
    reference = SensorId.parse(args.reference)
    still = _still_window(args.still)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for rec in load_recordings(run, args.data, args.any_sensors):
        fix = detect_placement_anomaly(rec, suspect, reference, still, args.threshold)
        if fix is not None:
            rec = apply_placement_fix(rec, fix)
            report[rec.trial_id] = [[int(v) for v in row] for row in fix.rotation]
        path = out / f"{rec.trial_id}{RECORDING_SUFFIX}"
        _write_atomic(path, lambda p, rec=rec: write_recording(p, rec))
        run.wrote(path)
        print(f"{rec.trial_id}: {'rotated ' + suspect.name if fix is not None else 'unchanged'}")
    lpath = labels_path(args.data, args.labels)
    if lpath.is_file():
        run.read(lpath)
        shutil.copyfile(lpath, out / LABEL_FILE)
        run.wrote(out / LABEL_FILE)
    run.results["fixes"] = report


def cmd_window(run: Run, args):
    _require(args, "data", "out")
    ds = _dataset(run, args)
    _write_atomic(args.out, lambda p: write_dataset(p, ds))
    run.wrote(args.out)
    n_neg, n_pos = ds.class_counts()
    run.results.update(windows=len(ds), lift=n_pos, nonlift=n_neg)
    print(f"{len(ds)} windows ({n_pos} lift, {n_neg} non-lift) -> {args.out}")


def cmd_train(run: Run, args):
    _require(args, "out")
    ds = _dataset(run, args)
    cfg = liftnet.with_layout(_model_config(args), ds, seed=args.seed)
    model, history = liftnet.train(liftnet.init_model(cfg), ds, _train_config(args))
    run.seeds.update(init=args.seed, train=args.seed)
    _write_atomic(args.out, lambda p: liftnet.save_model(p, model))
    run.wrote(args.out)
    run.results.update(
        final_train_loss=history.train_loss[-1] if history.train_loss else None,
        final_val_accuracy=history.val_accuracy[-1] if history.val_accuracy else None,
    )
    print(f"trained on {len(ds)} windows -> {args.out}")


def cmd_eval(run: Run, args):
    _require(args, "model", "out")
    model = liftnet.load_model(run.read(args.model))
    ds = _dataset(run, args, stride=args.eval_stride)
    res = evalkit.evaluate(model, ds, args.threshold)
    row = evalkit.CatalogRow(
        "eval-0000", "eval", (("model", Path(args.model).name), ("threshold", repr(args.threshold))),
        args.seed, None, res.metrics, res.confusion,
    )
    _write_text(run, args.out, evalkit.format_catalog([row]))
    m = res.metrics
    run.results.update(accuracy=m.accuracy, precision=m.precision, recall=m.recall, f1=m.f1)
    print(f"accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}")


def _sources(run: Run, args):
    _require(args, "data")
    train = load_corpus(run, args.data, args.labels, args.eol_policy, args.any_sensors)
    if args.eval_data:
        evals = load_corpus(run, args.eval_data, args.eval_labels, args.eol_policy, args.any_sensors)
    else:
        evals = train
    return train, evals


def _emit_catalog(run: Run, args, rows):
    out = Path(args.out)
    _write_text(run, out, evalkit.format_catalog(rows))
    summary = out.with_name(out.stem + ".summary.csv")
    _write_text(run, summary, evalkit.format_summary(evalkit.summarize(rows)))
    run.results["rows"] = len(rows)
    run.results["failed"] = sum(r.error is not None for r in rows)
    for r in evalkit.sort_by_eval_f1(rows)[:5]:
        f1 = "failed" if r.error else f"{r.eval.f1:.4f}"
        print(f"{r.id} {r.group} seed={r.seed} eval_f1={f1}")


def cmd_grid(run: Run, args):
    _require(args, "out")
    train, evals = _sources(run, args)
    grid = evalkit.GridAxes(
        tuple(_int_list(args.batch_sizes)), tuple(_int_list(args.window_lens)),
        tuple(_int_list(args.epochs_list)), tuple(_float_list(args.validation_splits)),
    )
    seeds = _int_list(args.seeds)
    run.seeds["base"] = seeds
    rows = evalkit.grid_search(grid, train, evals, _setup(args), seeds, args.jobs)
    _emit_catalog(run, args, rows)


def cmd_ablate(run: Run, args):
    _require(args, "out")
    train, evals = _sources(run, args)
    subsets = None
    if args.subsets:
        subsets = [_sensor_set(s) for s in args.subsets.split(";") if s.strip()]
    seeds = _int_list(args.seeds)
    run.seeds["base"] = seeds
    rows = evalkit.ablation_sweep(subsets, train, evals, _setup(args), seeds, args.jobs)
    _emit_catalog(run, args, rows)


def cmd_filter_compare(run: Run, args):
    _require(args, "out")
    train, evals = _sources(run, args)
    kinds = [
        FilterKind.parse(name, kp=args.kp, ki=args.ki, gyro_noise=args.gyro_noise, accel_noise=args.accel_noise)
        for name in args.filters.split(",") if name.strip()
    ]
    seeds = _int_list(args.seeds)
    run.seeds["base"] = seeds
    rows = evalkit.filter_compare(kinds, train, evals, _setup(args), seeds, args.jobs)
    _emit_catalog(run, args, rows)


def cmd_saliency(run: Run, args):
    _require(args, "model", "out")
    model = liftnet.load_model(run.read(args.model))
    ds = _dataset(run, args)
    label = None if args.label == "all" else Label[{"lift": "Lift", "nonlift": "NonLift"}[args.label]]
    maps = attribution.dataset_saliency(model, ds.windows, args.wrt, label)
    if not maps:
        raise InputError(f"no {args.label} windows to attribute")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranking = attribution.aggregate_saliency(maps, ds.channel_layout)
    _write_text(run, out / "channel_ranking.csv", ranking.to_csv())
    mean_map = attribution.SaliencyMap(np.mean([m.raw for m in maps], axis=0))
    attribution.render_heatmap(mean_map, ds.channel_layout, out / "saliency_heatmap")
    run.wrote(out / "saliency_heatmap.pgm")
    run.wrote(out / "saliency_heatmap.csv")
    run.results["top_channels"] = ranking.top(5)
    for name, share in ranking.entries[:5]:
        print(f"{name}: {share:.4f}")


def _metric_heatmap(summary: list[dict]) -> tuple[bytes, str]:
    """Groups x median-metric grid as PGM (brighter = higher) plus CSV."""
    cols = [f"{m}_median" for m in evalkit.SUMMARY_METRICS]
    pcols = [k for k in summary[0] if k not in ("experiment", "n_runs", "n_failed")
             and not k.endswith(("_median", "_max"))]
    names = [";".join(f"{k}={row[k]}" for k in pcols) for row in summary]
    grid = np.array([[float(row[c]) if row[c] else 0.0 for c in cols] for row in summary])
    pixels = np.floor(255.0 * np.clip(grid, 0.0, 1.0) + 0.5).astype(np.uint8)
    pgm = f"P5\n{len(cols)} {len(names)}\n255\n".encode() + pixels.tobytes()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", *cols])
    for name, row in zip(names, grid.tolist()):
        writer.writerow([name, *(repr(v) for v in row)])
    return pgm, buf.getvalue()


def cmd_report(run: Run, args):
    _require(args, "catalog", "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cat in args.catalog:
        cat = run.read(cat)
        summary = evalkit.summarize_catalog_csv(cat)
        if not summary:
            raise InputError(f"catalog {cat} has no rows")
        _write_text(run, out / f"{cat.stem}.summary.csv", evalkit.format_summary(summary))
        pgm, grid_csv = _metric_heatmap(summary)
        _write_atomic(out / f"{cat.stem}.heatmap.pgm", lambda p: Path(p).write_bytes(pgm))
        run.wrote(out / f"{cat.stem}.heatmap.pgm")
        _write_text(run, out / f"{cat.stem}.heatmap.csv", grid_csv)
        print(f"{cat.name}: {len(summary)} groups")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="INI file with [common] and per-command sections")
    p.add_argument("--manifest", help="run manifest path (default: next to the output)")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads for sweeps")
    p.add_argument("--seed", type=int, default=0)


def _data(p, eval_source=False):
    p.add_argument("--data", help="directory of *.imu recordings")
    p.add_argument("--labels", help=f"label file (default: DATA/{LABEL_FILE})")
    p.add_argument("--eol-policy", choices=[e.value for e in EolPolicy], default=EolPolicy.DeriveFromBol.value)
    p.add_argument("--any-sensors", action="store_true", help="accept recordings with a subset of sensors")
    if eval_source:
        p.add_argument("--eval-data", help="evaluation recordings (default: same as --data)")
        p.add_argument("--eval-labels")


def _windowing(p):
    p.add_argument("--dataset", help="read windows from a dataset file instead of --data")
    p.add_argument("--window-len", type=int, default=10)
    p.add_argument("--stride", type=int, help="default: window length")
    p.add_argument("--overlap", type=float, default=0.5, help="lift-core overlap fraction for a Lift label")
    p.add_argument("--unbalanced", action="store_true")


def _model(p):
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dense-activation", choices=["relu", "tanh"], default="relu")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--validation-split", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=1e-3)


def _sweep(p):
    _data(p, eval_source=True)
    _windowing(p)
    _model(p)
    p.add_argument("--eval-stride", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seeds", default="0", help="comma-separated base seeds")
    p.add_argument("--out", help="catalog CSV (a .summary.csv is written beside it)")


def build_parser() -> _Parser:
    parser = _Parser(prog="liftkit", description="Lift detection from wearable IMU recordings.")
    parser.add_argument("--version", action="version", version=f"liftkit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _common(p)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic recording corpus with labels")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--mode", choices=[m.value for m in synthgen.CorpusMode], default="trainlike")
    p.add_argument("--noise-accel", type=float, default=0.3)
    p.add_argument("--noise-gyro", type=float, default=0.05)
    p.add_argument("--distractor", action="store_true", help="add arm distractor pulses")
    p.add_argument("--distractor-sensors", default="RightUpperArm")
    p.add_argument("--distractor-mode", choices=[m.value for m in synthgen.DistractorMode], default="trainonly")
    p.add_argument("--distractor-amplitude", type=float, default=6.0)
    p.add_argument("--out", help="output directory")

    p = add("validate", cmd_validate, "parse and check a recording corpus (and labels if present)")
    _data(p)
    p.add_argument("--out", help="CSV report (default: stdout)")

    p = add("sync", cmd_sync, "align labels to frames and report lift intervals")
    _data(p)
    p.add_argument("--out", help="CSV of trial_id,bol_frame,eol_frame (default: stdout)")

    p = add("fix-offset", cmd_fix_offset, "apply or estimate label time offsets; writes a corrected label file")
    _data(p)
    p.add_argument("--offset", type=int, help="shift every trial's labels by this many frames")
    p.add_argument("--model", help="estimate each trial's offset from this model's scores")
    p.add_argument("--max-lag", type=int, default=25)
    p.add_argument("--out", help="corrected label file")

    p = add("fix-placement", cmd_fix_placement, "detect and undo a flipped sensor mount")
    _data(p)
    p.add_argument("--suspect", help="sensor that may be mounted wrongly")
    p.add_argument("--reference", default="UpperBack")
    p.add_argument("--still", default="0:25", help="START:STOP frames when the subject stands still")
    p.add_argument("--threshold", type=float, default=60.0, help="degrees")
    p.add_argument("--out", help="output directory for repaired recordings")

    p = add("window", cmd_window, "slice, label and balance windows into a dataset file")
    _data(p)
    _windowing(p)
    p.add_argument("--out", help="dataset file")

    p = add("train", cmd_train, "train a lift classifier")
    _data(p)
    _windowing(p)
    _model(p)
    p.add_argument("--out", help="model file")

    p = add("eval", cmd_eval, "evaluate a model; writes a one-row catalog")
    _data(p)
    _windowing(p)
    p.add_argument("--model")
    p.add_argument("--eval-stride", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="catalog CSV")

    p = add("grid", cmd_grid, "hyper-parameter grid search")
    _sweep(p)
    p.add_argument("--batch-sizes", default="32")
    p.add_argument("--window-lens", default="10")
    p.add_argument("--epochs-list", default="30")
    p.add_argument("--validation-splits", default="0.2")

    p = add("ablate", cmd_ablate, "sensor-removal ablation")
    _sweep(p)
    p.add_argument("--subsets", help="';'-separated '+'-joined sensor sets, or 'all' "
                                     "(default: all six vs wrists + upper back)")

    p = add("filter-compare", cmd_filter_compare, "compare attitude filters as preprocessing")
    _sweep(p)
    p.add_argument("--filters", default="none,mahony,ekf")
    p.add_argument("--kp", type=float, default=1.0)
    p.add_argument("--ki", type=float, default=0.3)
    p.add_argument("--gyro-noise", type=float, default=0.3)
    p.add_argument("--accel-noise", type=float, default=0.5)

    p = add("saliency", cmd_saliency, "gradient saliency ranking and heatmap")
    _data(p)
    _windowing(p)
    p.add_argument("--model")
    p.add_argument("--label", choices=["lift", "nonlift", "all"], default="lift")
    p.add_argument("--wrt", choices=["prob", "logit"], default="prob")
    p.add_argument("--out", help="output directory")

    p = add("report", cmd_report, "summaries and metric heatmaps from catalog CSVs")
    p.add_argument("--catalog", nargs="+", help="catalog CSV files")
    p.add_argument("--out", help="output directory")

    parser.subcommands = subs
    return parser


def _apply_config(parser: _Parser, argv: list[str], args: argparse.Namespace) -> argparse.Namespace:
    """Re-parse with config-file values installed as subcommand defaults."""
    cp = configparser.ConfigParser()
    try:
        if not cp.read(args.config, encoding="utf-8"):
            raise ConfigError(f"config file {args.config} not found")
    except configparser.Error as exc:
        raise ConfigError(f"bad config file: {exc}") from None
    sub = parser.subcommands[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    values = {}
    for section in ("common", args.command):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions:
                if section == "common":
                    continue  # shared sections may carry keys other commands use
                raise ConfigError(f"[{section}] {key}: not an option of '{args.command}'")
            action = actions[dest]
            if isinstance(action, argparse._StoreTrueAction):
                try:
                    values[dest] = cp.getboolean(section, key)
                except ValueError:
                    raise ConfigError(f"[{section}] {key}: expected a boolean") from None
            elif action.nargs in ("+", "*"):
                values[dest] = raw.split()
            else:
                values[dest] = raw
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _manifest_path(args) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if not out:
        return None
    out = Path(out)
    if out.is_dir():
        return out / f"{args.command}.manifest.json"
    return out.with_name(out.name + ".manifest.json")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        run = Run(args.command, args)
        args.func(run, args)
        mpath = _manifest_path(args)
        if mpath is not None:
            mpath.parent.mkdir(parents=True, exist_ok=True)
            mpath.write_text(json.dumps(run.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"liftkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (LiftkitError, OSError, ValueError) as exc:  # bad data or parameter values
        print(f"liftkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a bug
        print(f"liftkit {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
