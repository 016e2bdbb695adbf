"""Fixed-length windows, lift/non-lift labelling, class balancing and splits."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ClassMissingError, EmptyDatasetError, ParseError, ShapeError, SplitError
from .imu_core import LabeledRecording, LiftInterval, round_half_up, _exact

LIFT_CORE_S = 1.2


class Label(enum.IntEnum):
    NonLift = 0
    Lift = 1


@dataclass(frozen=True)
class Window:
    trial_id: str
    start_frame: int
    data: np.ndarray = field(repr=False)
    label: Label

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError("window data must be (window_len, n_channels)")
        if not np.all(np.isfinite(data)):
            raise ShapeError("window contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "label", Label(self.label))

    def __eq__(self, other):
        if not isinstance(other, Window):
            return NotImplemented
        return self.key() == other.key() and np.array_equal(self.data, other.data)

    __hash__ = None

    def key(self) -> tuple[str, int, int]:
        return (self.trial_id, self.start_frame, int(self.label))


@dataclass(frozen=True)
class Dataset:
    windows: tuple[Window, ...]
    window_len: int
    channel_layout: tuple[str, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "channel_layout", tuple(self.channel_layout))
        shape = (self.window_len, len(self.channel_layout))
        for w in self.windows:
            if w.data.shape != shape:
                raise ShapeError(f"window {w.trial_id}@{w.start_frame} has shape {w.data.shape}, expected {shape}")

    def __len__(self):
        return len(self.windows)

    @property
    def n_channels(self) -> int:
        return len(self.channel_layout)

    @cached_property
    def X(self) -> np.ndarray:
        """Stacked window data, shape ``(n, window_len, n_channels)``."""
        if not self.windows:
            return np.zeros((0, self.window_len, self.n_channels))
        return np.stack([w.data for w in self.windows])

    @cached_property
    def y(self) -> np.ndarray:
        return np.array([int(w.label) for w in self.windows], dtype=np.float64)

    def class_counts(self) -> tuple[int, int]:
        """(non-lift, lift) counts."""
        n_lift = sum(1 for w in self.windows if w.label is Label.Lift)
        return len(self.windows) - n_lift, n_lift

    def subset(self, indices: Iterable[int], **provenance) -> "Dataset":
        return Dataset(
            tuple(self.windows[i] for i in indices),
            self.window_len,
            self.channel_layout,
            {**self.provenance, **provenance},
        )


def lift_core(lift: LiftInterval, rate_hz: float, lift_core_s: float = LIFT_CORE_S) -> tuple[int, int]:
    return lift.bol_frame, lift.bol_frame + round_half_up(_exact(lift_core_s) * _exact(rate_hz))


def core_overlap(start: int, window_len: int, lifts: Sequence[LiftInterval], rate_hz: float,
                 lift_core_s: float = LIFT_CORE_S) -> int:
    """Largest number of window frames shared with any single lift core."""
    best = 0
    for lift in lifts:
        a, b = lift_core(lift, rate_hz, lift_core_s)
        best = max(best, min(start + window_len, b) - max(start, a))
    return best


def label_window(
    start: int,
    window_len: int,
    lifts: Sequence[LiftInterval],
    rate_hz: float,
    lift_core_s: float = LIFT_CORE_S,
    overlap_fraction: float = 0.5,
) -> Label:
    """Lift iff the window shares at least ``overlap_fraction * window_len``
    frames with the first ``lift_core_s`` seconds after some BOL."""
    if not 0 < overlap_fraction <= 1:
        raise ValueError("overlap_fraction must lie in (0, 1]")
    overlap = core_overlap(start, window_len, lifts, rate_hz, lift_core_s)
    return Label.Lift if overlap >= overlap_fraction * window_len else Label.NonLift


def window_starts(n_frames: int, window_len: int, stride: int) -> range:
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    if window_len > n_frames:
        raise EmptyDatasetError(f"window of {window_len} frames exceeds recording of {n_frames}")
    return range(0, n_frames - window_len + 1, stride)


def slice_windows(
    lr: LabeledRecording,
    window_len: int,
    stride: int,
    lift_core_s: float = LIFT_CORE_S,
    overlap_fraction: float = 0.5,
    ambiguous_margin: bool = False,
) -> list[Window]:
    """Cut every window starting at ``0, stride, 2*stride, ...``.

    With ``ambiguous_margin`` set, windows that touch a lift core but fall
    short of the overlap threshold are dropped instead of labelled NonLift.
    """
    rec = lr.recording
    out = []
    for start in window_starts(rec.n_frames, window_len, stride):
        if lr.all_nonlift:
            label = Label.NonLift
        else:
            overlap = core_overlap(start, window_len, lr.lifts, rec.sample_rate_hz, lift_core_s)
            label = label_window(start, window_len, lr.lifts, rec.sample_rate_hz, lift_core_s, overlap_fraction)
            if ambiguous_margin and label is Label.NonLift and overlap > 0:
                continue
        out.append(Window(rec.trial_id, start, rec.data[start:start + window_len], label))
    return out


def balance(windows: Sequence[Window], seed: int, channel_layout: Sequence[str] | None = None) -> Dataset:
    """Down-sample the majority class to the minority count, then shuffle."""
    windows = list(windows)
    lifts = [w for w in windows if w.label is Label.Lift]
    others = [w for w in windows if w.label is Label.NonLift]
    if not lifts or not others:
        raise ClassMissingError(f"need both classes, got {len(lifts)} lift / {len(others)} non-lift")
    minority, majority = (lifts, others) if len(lifts) <= len(others) else (others, lifts)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(majority), size=len(minority), replace=False))
    pooled = minority + [majority[i] for i in keep]
    order = rng.permutation(len(pooled))
    window_len, n_ch = windows[0].data.shape
    if channel_layout is None:
        channel_layout = tuple(f"ch{i}" for i in range(n_ch))
    return Dataset(
        tuple(pooled[i] for i in order),
        window_len,
        tuple(channel_layout),
        {"balance_seed": seed, "lift_windows": len(lifts), "nonlift_windows": len(others)},
    )


def unbalanced(windows: Sequence[Window], channel_layout: Sequence[str]) -> Dataset:
    windows = list(windows)
    if not windows:
        raise EmptyDatasetError("no windows")
    return Dataset(tuple(windows), windows[0].data.shape[0], tuple(channel_layout), {"balanced": False})


def split(ds: Dataset, validation_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; each class sends round(fraction * count) windows to validation."""
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = np.array([int(w.label) for w in ds.windows])
    val_mask = np.zeros(len(labels), dtype=bool)
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        n_val = round_half_up(_exact(validation_fraction) * len(idx))
        val_mask[rng.permutation(idx)[:n_val]] = True
    train_idx = np.flatnonzero(~val_mask)
    val_idx = np.flatnonzero(val_mask)
    if len(train_idx) == 0 or len(val_idx) == 0:
        raise SplitError(f"split of {len(ds)} windows at {validation_fraction} leaves a side empty")
    return (
        ds.subset(train_idx, split="train", split_seed=seed),
        ds.subset(val_idx, split="validation", split_seed=seed),
    )


def build_dataset(
    recordings: Iterable[LabeledRecording],
    window_len: int,
    stride: int | None = None,
    seed: int = 0,
    balanced: bool = True,
    lift_core_s: float = LIFT_CORE_S,
    overlap_fraction: float = 0.5,
    ambiguous_margin: bool = False,
) -> Dataset:
    """Slice every recording and (by default) balance the pooled windows.

    ``stride`` defaults to ``window_len`` (non-overlapping training windows).
    """
    recordings = list(recordings)
    if not recordings:
        raise EmptyDatasetError("no recordings")
    layouts = {lr.recording.channel_layout for lr in recordings}
    if len(layouts) != 1:
        raise ShapeError("recordings disagree on channel layout")
    layout = layouts.pop()
    stride = window_len if stride is None else stride
    windows = []
    for lr in recordings:
        if lr.recording.n_frames < window_len:
            continue
        windows.extend(slice_windows(lr, window_len, stride, lift_core_s, overlap_fraction, ambiguous_margin))
    if not windows:
        raise EmptyDatasetError(f"no recording is at least {window_len} frames long")
    ds = balance(windows, seed, layout) if balanced else unbalanced(windows, layout)
    ds.provenance.update(window_len=window_len, stride=stride, overlap_fraction=overlap_fraction,
                         lift_core_s=lift_core_s)
    return ds


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------

def format_dataset(ds: Dataset) -> str:
    out = io.StringIO()
    out.write(f"#window_len={ds.window_len}\n")
    out.write("#channels=" + ",".join(ds.channel_layout) + "\n")
    for key in sorted(ds.provenance):
        if key not in ("window_len", "channels"):
            out.write(f"#{key}={ds.provenance[key]}\n")
    for w in ds.windows:
        values = ",".join(repr(v) for v in w.data.ravel().tolist())
        out.write(f"{w.trial_id},{w.start_frame},{int(w.label)},{values}\n")
    return out.getvalue()


def parse_dataset(text: str) -> Dataset:
    header = {}
    windows = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
            continue
        try:
            window_len = int(header["window_len"])
            layout = tuple(header["channels"].split(","))
        except (KeyError, ValueError):
            raise ParseError("dataset header needs #window_len and #channels", lineno) from None
        parts = line.split(",")
        expected = 3 + window_len * len(layout)
        if len(parts) != expected:
            raise ParseError(f"expected {expected} fields, got {len(parts)}", lineno)
        try:
            values = np.array([float(p) for p in parts[3:]]).reshape(window_len, len(layout))
            windows.append(Window(parts[0], int(parts[1]), values, Label(int(parts[2]))))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    if "window_len" not in header or "channels" not in header:
        raise ParseError("dataset header needs #window_len and #channels")
    provenance = {k: v for k, v in header.items() if k not in ("window_len", "channels")}
    return Dataset(tuple(windows), int(header["window_len"]), tuple(header["channels"].split(",")), provenance)


def write_dataset(path, ds: Dataset) -> None:
    Path(path).write_text(format_dataset(ds), encoding="utf-8")


def read_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_text(encoding="utf-8"))
