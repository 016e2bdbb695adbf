"""Confusion-matrix metrics and the experiment harnesses.

All three sweeps (hyper-parameter grid, sensor ablation, filter comparison)
share one train-then-evaluate routine and emit :class:`CatalogRow` records.
Catalogs are deterministic functions of (configuration, seeds): rows come back
in enumeration order whatever the worker count, and floats are written with
``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import liftnet
from .errors import ShapeError
from .fusion_filters import FilterKind, apply_filter
from .imu_core import ALL_SENSORS, WRISTS_AND_BACK, LabeledRecording, SensorId, canonical_sensors, restrict_sensors
from .windowing import Dataset, build_dataset

METRIC_COLUMNS = ("train_acc", "train_f1", "eval_acc", "eval_f1", "tp", "fp", "tn", "fn", "seed", "error")
SUMMARY_METRICS = ("train_acc", "train_f1", "eval_acc", "eval_f1")
DEFAULT_ABLATION_SUBSETS = (ALL_SENSORS, WRISTS_AND_BACK)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: frozenset = frozenset()


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionMatrix:
    """Tally predictions (Lift iff score >= threshold) against 0/1 labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if len(scores) == 0:
        raise ShapeError("no scores to evaluate")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    pred = scores >= threshold
    truth = labels.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Ratios from counts. A 0/0 ratio is reported as 0 and named in ``degenerate``."""
    if cm.total <= 0:
        raise ValueError("empty confusion matrix")
    flags = set()

    def ratio(num, den, name):
        if den == 0:
            flags.add(name)
            return 0.0
        return num / den

    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1")
    return Metrics((cm.tp + cm.tn) / cm.total, precision, recall, f1, frozenset(flags))


@dataclass(frozen=True)
class Evaluation:
    metrics: Metrics
    confusion: ConfusionMatrix
    scores: np.ndarray = field(repr=False, compare=False, default=None)


def evaluate(model: liftnet.Model, data: Dataset, threshold: float = 0.5) -> Evaluation:
    scores = liftnet.predict_proba(model, data.X)
    cm = confusion(scores, data.y, threshold)
    return Evaluation(metrics(cm), cm, scores)


# --------------------------------------------------------------------------
# shared experiment routine
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSetup:
    """Everything besides data and seed that one train/evaluate run needs.

    ``model.window_len``/``n_channels`` are overwritten from the data.
    Training windows default to a stride of ``window_len``; evaluation windows
    to stride 1, balanced the same way as training unless ``balance_eval`` is off.
    """

    model: liftnet.ModelConfig = liftnet.ModelConfig()
    train: liftnet.TrainConfig = liftnet.TrainConfig()
    window_len: int = 10
    train_stride: int | None = None
    eval_stride: int = 1
    overlap_fraction: float = 0.5
    balance_eval: bool = True
    threshold: float = 0.5


@dataclass(frozen=True)
class RunResult:
    model: liftnet.Model
    history: liftnet.TrainHistory
    train: Evaluation
    eval: Evaluation


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def run_experiment(
    train_source: Sequence[LabeledRecording],
    eval_source: Sequence[LabeledRecording],
    setup: ExperimentSetup,
    seed: int,
) -> RunResult:
    """Window, balance, train on one source; window and evaluate on the other."""
    train_ds = build_dataset(
        train_source, setup.window_len, setup.train_stride, seed=seed, overlap_fraction=setup.overlap_fraction
    )
    cfg = liftnet.with_layout(setup.model, train_ds, seed=seed)
    model, history = liftnet.train(liftnet.init_model(cfg), train_ds, replace(setup.train, seed=seed))
    eval_ds = build_dataset(
        eval_source, setup.window_len, setup.eval_stride, seed=seed,
        balanced=setup.balance_eval, overlap_fraction=setup.overlap_fraction,
    )
    return RunResult(
        model, history, evaluate(model, train_ds, setup.threshold), evaluate(model, eval_ds, setup.threshold)
    )


@dataclass(frozen=True)
class CatalogRow:
    id: str
    experiment: str
    params: tuple[tuple[str, str], ...]
    seed: int
    train: Metrics | None = None
    eval: Metrics | None = None
    confusion: ConfusionMatrix | None = None
    error: str | None = None

    @property
    def group(self) -> str:
        return ";".join(f"{k}={v}" for k, v in self.params)

    def as_dict(self) -> dict[str, str]:
        out = {"id": self.id, "experiment": self.experiment}
        out.update(dict(self.params))
        if self.error is None:
            cm = self.confusion
            train = self.train
            out.update(
                train_acc=repr(train.accuracy) if train else "", train_f1=repr(train.f1) if train else "",
                eval_acc=repr(self.eval.accuracy), eval_f1=repr(self.eval.f1),
                tp=str(cm.tp), fp=str(cm.fp), tn=str(cm.tn), fn=str(cm.fn), error="",
            )
        else:
            out.update({k: "" for k in METRIC_COLUMNS})
            out["error"] = self.error
        out["seed"] = str(self.seed)
        return out


def sort_by_eval_f1(rows: Iterable[CatalogRow]) -> list[CatalogRow]:
    """Best first; failed rows last; ties keep catalog order."""
    return sorted(rows, key=lambda r: (r.error is not None, -(r.eval.f1 if r.eval else 0.0)))


@dataclass(frozen=True)
class _Task:
    index: int
    experiment: str
    params: tuple[tuple[str, str], ...]
    seed: int
    train_source: tuple
    eval_source: tuple
    setup: ExperimentSetup


def _run_task(task: _Task) -> CatalogRow:
    row = CatalogRow(f"{task.experiment}-{task.index:04d}", task.experiment, task.params, task.seed)
    try:
        res = run_experiment(task.train_source, task.eval_source, task.setup, task.seed)
    except Exception as exc:  # a failed cell must not abort the sweep
        return replace(row, error=f"{type(exc).__name__}: {exc}")
    return replace(row, train=res.train.metrics, eval=res.eval.metrics, confusion=res.eval.confusion)


def run_tasks(tasks: Sequence, jobs: int = 1, fn: Callable = _run_task) -> list:
    """Run independent tasks on up to ``jobs`` threads; results in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridAxes:
    batch_size: tuple[int, ...] = (32,)
    window_len: tuple[int, ...] = (10,)
    epochs: tuple[int, ...] = (30,)
    validation_split: tuple[float, ...] = (0.2,)

    def combinations(self) -> list[tuple]:
        axes = (self.batch_size, self.window_len, self.epochs, self.validation_split)
        if any(len(a) == 0 for a in axes):
            raise ValueError("every grid axis needs at least one value")
        return list(itertools.product(*axes))


def grid_search(
    grid: GridAxes,
    train_source: Sequence[LabeledRecording],
    eval_source: Sequence[LabeledRecording],
    setup: ExperimentSetup = ExperimentSetup(),
    seeds: Sequence[int] = (0,),
    jobs: int = 1,
) -> list[CatalogRow]:
    """Train and evaluate every combination (lexicographic in axis order) per base seed.

    The run seed of combination ``i`` under base seed ``s`` is ``derive_seed(s, i)``.
    """
    tasks = []
    for ci, (bs, wl, ep, vs) in enumerate(grid.combinations()):
        cell = replace(setup, window_len=wl,
                       train=replace(setup.train, batch_size=bs, epochs=ep, validation_split=vs))
        params = (("batch_size", str(bs)), ("window_len", str(wl)), ("epochs", str(ep)),
                  ("validation_split", repr(float(vs))))
        for s in seeds:
            tasks.append(_Task(len(tasks), "grid", params, derive_seed(s, ci),
                               tuple(train_source), tuple(eval_source), cell))
    return run_tasks(tasks, jobs)


def subset_label(sensors: Iterable[SensorId]) -> str:
    return "+".join(s.name for s in canonical_sensors(sensors))


def ablation_sweep(
    sensor_subsets: Sequence[Sequence[SensorId]] | None,
    train_source: Sequence[LabeledRecording],
    eval_source: Sequence[LabeledRecording],
    setup: ExperimentSetup = ExperimentSetup(),
    seeds: Sequence[int] = (0,),
    jobs: int = 1,
) -> list[CatalogRow]:
    """Retrain on each sensor subset; ``None`` means all six vs. wrists + upper back.

    Subsets under one base seed share the run seed ``derive_seed(s, 0)`` so
    the comparison is paired.
    """
    subsets = DEFAULT_ABLATION_SUBSETS if sensor_subsets is None else sensor_subsets
    tasks = []
    for s in seeds:
        for subset in subsets:
            subset = canonical_sensors(subset)
            if not subset:
                raise ValueError("sensor subsets must be non-empty")
            tr = tuple(replace(lr, recording=restrict_sensors(lr.recording, subset)) for lr in train_source)
            ev = tuple(replace(lr, recording=restrict_sensors(lr.recording, subset)) for lr in eval_source)
            tasks.append(_Task(len(tasks), "ablation", (("sensors", subset_label(subset)),),
                               derive_seed(s, 0), tr, ev, setup))
    return run_tasks(tasks, jobs)


def _filtered(source, kind):
    return tuple(replace(lr, recording=apply_filter(lr.recording, kind)) for lr in source)


def filter_compare(
    kinds: Sequence[FilterKind],
    train_source: Sequence[LabeledRecording],
    eval_source: Sequence[LabeledRecording],
    setup: ExperimentSetup = ExperimentSetup(),
    seeds: Sequence[int] = (0,),
    jobs: int = 1,
) -> list[CatalogRow]:
    """Filter every recording with each kind, then train/evaluate (paired seeds)."""
    if not kinds:
        raise ValueError("no filter kinds given")
    tasks = []
    for s in seeds:
        for kind in kinds:
            tasks.append(_Task(len(tasks), "filter", (("filter", kind.name),), derive_seed(s, 0),
                               _filtered(train_source, kind), _filtered(eval_source, kind), setup))
    return run_tasks(tasks, jobs)


# --------------------------------------------------------------------------
# catalog files
# --------------------------------------------------------------------------

def catalog_columns(rows: Sequence[CatalogRow]) -> list[str]:
    params = []
    for row in rows:
        for k, _ in row.params:
            if k not in params:
                params.append(k)
    return ["id", "experiment", *params, *(c for c in METRIC_COLUMNS if c != "error"), "error"]


def format_catalog(rows: Sequence[CatalogRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=catalog_columns(rows), lineterminator="\n", restval="")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_dict())
    return buf.getvalue()


def write_catalog(path, rows: Sequence[CatalogRow]) -> None:
    Path(path).write_text(format_catalog(rows), encoding="utf-8")


def read_catalog(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _param_columns(header: Sequence[str]) -> list[str]:
    return [c for c in header if c not in ("id", "experiment", *METRIC_COLUMNS)]


def summarize_records(records: Sequence[dict[str, str]]) -> list[dict[str, str]]:
    """Median and max of each metric per parameter group, from catalog records.

    Groups appear in first-seen order; failed rows are counted but excluded
    from the statistics.
    """
    if not records:
        return []
    pcols = _param_columns(list(records[0]))
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault(tuple(rec.get(c, "") for c in pcols), []).append(rec)
    out = []
    for key, recs in groups.items():
        ok = [r for r in recs if not r.get("error")]
        row = {"experiment": recs[0]["experiment"], **dict(zip(pcols, key)),
               "n_runs": str(len(recs)), "n_failed": str(len(recs) - len(ok))}
        for m in SUMMARY_METRICS:
            values = [float(r[m]) for r in ok if r.get(m)]
            row[f"{m}_median"] = repr(float(np.median(values))) if values else ""
            row[f"{m}_max"] = repr(max(values)) if values else ""
        out.append(row)
    return out


def summarize(rows: Sequence[CatalogRow]) -> list[dict[str, str]]:
    return summarize_records([r.as_dict() for r in rows])


def format_summary(summary: Sequence[dict[str, str]]) -> str:
    if not summary:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(summary[0]), lineterminator="\n", restval="")
    writer.writeheader()
    writer.writerows(summary)
    return buf.getvalue()


def summarize_catalog_csv(path) -> list[dict[str, str]]:
    return summarize_records(read_catalog(path))

