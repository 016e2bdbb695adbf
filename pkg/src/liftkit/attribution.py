"""Gradient saliency over IMU windows and channel-importance ranking.

A saliency map is ``|d output / d input|`` for one window, rows = frames,
columns = channels. Heatmaps are written as binary PGM plus a CSV matrix.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import liftnet
from ._kernels import sigmoid
from .errors import ShapeError
from .windowing import Window


class Normalization(enum.Enum):
    Raw = "raw"
    MaxOne = "maxone"


@dataclass(frozen=True)
class SaliencyMap:
    raw: np.ndarray
    normalization: Normalization = Normalization.MaxOne

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.ndim != 2:
            raise ShapeError("saliency map must be 2-D")
        if np.any(raw < 0):
            raise ValueError("saliency values must be non-negative")
        object.__setattr__(self, "raw", raw)

    @property
    def values(self) -> np.ndarray:
        if self.normalization is Normalization.Raw:
            return self.raw
        peak = self.raw.max()
        return self.raw / peak if peak > 0 else self.raw.copy()

    @property
    def shape(self):
        return self.raw.shape


@dataclass(frozen=True)
class LinearSurrogate:
    """``sigmoid(sum(weights * x) + bias)``: a model with a closed-form input gradient.

    Stands in for the LSTM when checking the saliency plumbing.
    """

    weights: np.ndarray
    bias: float = 0.0

    def prob(self, window) -> float:
        return float(sigmoid(np.sum(self.weights * window) + self.bias))

    def input_gradient(self, window, wrt="prob"):
        window = np.asarray(window, dtype=np.float64)
        if window.shape != self.weights.shape:
            raise ShapeError(f"window shape {window.shape} != weights shape {self.weights.shape}")
        if wrt == "logit":
            return self.weights.copy()
        p = self.prob(window)
        return p * (1.0 - p) * self.weights


def saliency(model, window, normalization: Normalization = Normalization.MaxOne, wrt: str = "prob") -> SaliencyMap:
    """Absolute input gradient of the model output (probability by default).

    ``wrt="logit"`` skips the final sigmoid, which keeps maps informative when
    the output saturates.
    """
    if isinstance(window, Window):
        window = window.data
    if isinstance(model, LinearSurrogate):
        grad = model.input_gradient(window, wrt)
    else:
        grad = liftnet.input_gradient(model, window, wrt)
    return SaliencyMap(np.abs(grad), Normalization(normalization))


@dataclass(frozen=True)
class ChannelRanking:
    entries: tuple[tuple[str, float], ...]

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def share(self, name: str) -> float:
        return dict(self.entries)[name]

    def top(self, k: int) -> list[str]:
        return self.names()[:k]

    def to_csv(self) -> str:
        return "channel,share\n" + "".join(f"{n},{s!r}\n" for n, s in self.entries)


def aggregate_saliency(maps: Sequence[SaliencyMap], channel_names: Sequence[str] | None = None) -> ChannelRanking:
    """Mean raw saliency per channel as shares of the total, largest first.

    Ties keep channel-layout order. All-zero maps give equal shares.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("no saliency maps to aggregate")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ShapeError("saliency maps differ in shape")
    n_ch = shape[1]
    if channel_names is None:
        channel_names = [f"ch{i}" for i in range(n_ch)]
    if len(channel_names) != n_ch:
        raise ShapeError(f"{len(channel_names)} channel names for {n_ch} channels")
    importance = np.mean([m.raw.mean(axis=0) for m in maps], axis=0)
    total = importance.sum()
    shares = importance / total if total > 0 else np.full(n_ch, 1.0 / n_ch)
    order = sorted(range(n_ch), key=lambda i: -shares[i])
    return ChannelRanking(tuple((channel_names[i], float(shares[i])) for i in order))


def dataset_saliency(model, windows, wrt: str = "prob", label=None) -> list[SaliencyMap]:
    """Raw maps for every window (optionally only those with ``label``)."""
    out = []
    for w in windows:
        if label is not None and w.label != label:
            continue
        out.append(saliency(model, w.data, Normalization.Raw, wrt))
    return out


@dataclass(frozen=True)
class Heatmap:
    pgm: bytes
    csv: str


def render_heatmap(smap: SaliencyMap, channel_names: Sequence[str], path_stem=None) -> Heatmap:
    """Grayscale raster, rows = time steps, columns = channels, brighter = more salient.

    Intensity is ``round(255 * value / max)``; an all-zero map is black. With
    ``path_stem`` the ``.pgm`` and ``.csv`` files are written side by side.
    """
    values = smap.values
    t, c = values.shape
    if len(channel_names) != c:
        raise ShapeError(f"{len(channel_names)} channel names for {c} channels")
    peak = values.max()
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    pixels = np.floor(255.0 * scaled + 0.5).astype(np.uint8)
    pgm = f"P5\n{c} {t}\n255\n".encode() + pixels.tobytes()

    buf = io.StringIO()
    buf.write("frame," + ",".join(channel_names) + "\n")
    for i, row in enumerate(values.tolist()):
        buf.write(f"{i}," + ",".join(repr(v) for v in row) + "\n")
    hm = Heatmap(pgm, buf.getvalue())
    if path_stem is not None:
        stem = Path(path_stem)
        stem.with_suffix(".pgm").write_bytes(hm.pgm)
        stem.with_suffix(".csv").write_text(hm.csv, encoding="utf-8")
    return hm


def read_pgm(data: bytes) -> np.ndarray:
    """Decode a binary (P5, 8-bit) PGM produced by :func:`render_heatmap`."""
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)
