"""Binary lift classifier: one LSTM layer, a small ReLU head, sigmoid output.

Parameters live in a plain ``dict[str, ndarray]`` (see :func:`param_shapes`
for the naming); gradients use the same keys. LSTM gate blocks are stacked
input, forget, cell, output along the first axis.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import ClassMissingError, DivergenceError, EmptyDatasetError, InputError, ParseError, ShapeError
from .imu_core import Recording
from .windowing import Dataset, Window, split, window_starts

P_MIN = 1e-7
LSTM_KEYS = ("lstm_Wx", "lstm_Wh", "lstm_b")
_MAGIC = b"LIFTNET1\n"


@dataclass(frozen=True)
class ModelConfig:
    window_len: int = 10
    n_channels: int = 36
    lstm_hidden: int = 128
    dense_widths: tuple[int, ...] = (5, 5)
    dense_activation: str = "relu"
    seed: int = 0
    channel_layout: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))
        if self.channel_layout is not None:
            object.__setattr__(self, "channel_layout", tuple(self.channel_layout))
            if len(self.channel_layout) != self.n_channels:
                raise ShapeError("channel_layout length differs from n_channels")
        if min(self.window_len, self.n_channels, self.lstm_hidden, *self.dense_widths) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.dense_activation not in _ACTIVATIONS:
            raise ValueError(f"dense_activation must be one of {sorted(_ACTIVATIONS)}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    validation_split: float = 0.2
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must lie in (0, 1)")
        # lr = 0 is allowed: it turns train into a checkable no-op
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def input_gate_weights(self) -> np.ndarray:
        return self.params["lstm_Wx"][: self.config.lstm_hidden]

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, dict(self.meta))


def _relu(a):
    return np.maximum(a, 0.0)


def _relu_grad(a):
    return (a > 0).astype(np.float64)


def _tanh_grad(a):
    return 1.0 - np.tanh(a) ** 2


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, C = cfg.lstm_hidden, cfg.n_channels
    shapes = {"lstm_Wx": (4 * H, C), "lstm_Wh": (4 * H, H), "lstm_b": (4 * H,)}
    width = H
    for k, w in enumerate(cfg.dense_widths):
        shapes[f"dense{k}_W"] = (w, width)
        shapes[f"dense{k}_b"] = (w,)
        width = w
    shapes["out_W"] = (1, width)
    shapes["out_b"] = (1,)
    return shapes


def init_model(cfg: ModelConfig) -> Model:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gate = 1.

    The LSTM fan-in is ``n_channels + lstm_hidden`` (what each gate unit sees).
    """
    rng = np.random.default_rng(cfg.seed)
    H = cfg.lstm_hidden
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = cfg.n_channels + H if name.startswith("lstm") else shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    params["lstm_b"][H:2 * H] = 1.0
    return Model(cfg, params)


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _as_batch(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    cfg = model.config
    if X.ndim != 3 or X.shape[1:] != (cfg.window_len, cfg.n_channels):
        raise ShapeError(f"expected windows of shape ({cfg.window_len}, {cfg.n_channels}), got {X.shape[-2:]}")
    if not np.all(np.isfinite(X)):
        raise InputError("window contains non-finite values")
    return X


def _forward(params, cfg: ModelConfig, X):
    """Batch forward pass keeping everything backward needs. X is (B, T, C)."""
    act = _ACTIVATIONS[cfg.dense_activation][0]
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))
    Wx = np.ascontiguousarray(params["lstm_Wx"])
    Wh = np.ascontiguousarray(params["lstm_Wh"])
    hs, cs, gates = K.lstm_forward(Xt, Wx, Wh, params["lstm_b"])
    r = hs[-1]
    pre, post = [], [r]
    for k in range(len(cfg.dense_widths)):
        a = r @ params[f"dense{k}_W"].T + params[f"dense{k}_b"]
        r = act(a)
        pre.append(a)
        post.append(r)
    logit = (r @ params["out_W"].T + params["out_b"])[:, 0]
    prob = K.sigmoid(logit)
    return {"Xt": Xt, "Wx": Wx, "Wh": Wh, "hs": hs, "cs": cs, "gates": gates,
            "pre": pre, "post": post, "logit": logit, "prob": prob}


def _backward(params, cfg: ModelConfig, cache, dlogit):
    """Gradients (summed over the batch) given d(objective)/d(logit) per sample.

    Returns ``(grads, dX)`` with ``dX`` shaped like the (B, T, C) input.
    """
    d_act = _ACTIVATIONS[cfg.dense_activation][1]
    grads = {}
    post, pre = cache["post"], cache["pre"]
    grads["out_W"] = dlogit[None, :] @ post[-1]
    grads["out_b"] = np.array([dlogit.sum()])
    dr = dlogit[:, None] * params["out_W"]
    for k in range(len(cfg.dense_widths) - 1, -1, -1):
        da = dr * d_act(pre[k])
        grads[f"dense{k}_W"] = da.T @ post[k]
        grads[f"dense{k}_b"] = da.sum(axis=0)
        dr = da @ params[f"dense{k}_W"]
    dWx, dWh, db, dXt = K.lstm_backward(
        cache["Xt"], cache["Wx"], cache["Wh"], cache["hs"], cache["cs"], cache["gates"], np.ascontiguousarray(dr)
    )
    grads["lstm_Wx"], grads["lstm_Wh"], grads["lstm_b"] = dWx, dWh, db
    return grads, dXt.transpose(1, 0, 2)


def predict_proba(model: Model, X, chunk: int = 2048) -> np.ndarray:
    """Probabilities for a stack of windows ``(n, T, C)``."""
    X = _as_batch(model, X)
    out = np.empty(len(X))
    for s in range(0, len(X), chunk):
        out[s:s + chunk] = _forward(model.params, model.config, X[s:s + chunk])["prob"]
    return out


def forward(model: Model, window) -> float:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ShapeError("forward takes a single (window_len, n_channels) window")
    return float(predict_proba(model, window)[0])


def bce(prob, label):
    p = np.clip(prob, P_MIN, 1.0 - P_MIN)
    return -(label * np.log(p) + (1.0 - label) * np.log(1.0 - p))


def loss(prob: float, label: int) -> float:
    """Binary cross-entropy with the probability clamped to [1e-7, 1 - 1e-7]."""
    return float(bce(float(prob), float(label)))


def _loss_grad_logit(prob, y):
    # d bce / d logit; zero where the clamp is active
    inside = (prob > P_MIN) & (prob < 1.0 - P_MIN)
    return np.where(inside, prob - y, 0.0)


def _loss_and_grads(params, cfg, X, y):
    cache = _forward(params, cfg, X)
    prob = cache["prob"]
    n = len(X)
    grads, _ = _backward(params, cfg, cache, _loss_grad_logit(prob, y) / n)
    return float(bce(prob, y).mean()), grads


def _batch_arrays(model: Model, batch):
    if isinstance(batch, Dataset):
        return _as_batch(model, batch.X), batch.y
    if isinstance(batch, tuple) and len(batch) == 2:
        return _as_batch(model, batch[0]), np.asarray(batch[1], dtype=np.float64)
    windows = list(batch)
    if not windows:
        raise EmptyDatasetError("empty batch")
    X = _as_batch(model, np.stack([w.data for w in windows]))
    return X, np.array([int(w.label) for w in windows], dtype=np.float64)


def gradients(model: Model, batch: Sequence[Window] | Dataset | tuple) -> dict[str, np.ndarray]:
    """Mean BCE gradient over ``batch`` for every parameter."""
    X, y = _batch_arrays(model, batch)
    if len(X) == 0:
        raise EmptyDatasetError("empty batch")
    return _loss_and_grads(model.params, model.config, X, y)[1]


def batch_loss(model: Model, batch) -> float:
    X, y = _batch_arrays(model, batch)
    return float(bce(predict_proba(model, X), y).mean())


def input_gradient(model: Model, window, wrt: str = "prob") -> np.ndarray:
    """d(output)/d(window) for one window; ``wrt`` is ``"prob"`` or ``"logit"``."""
    X = _as_batch(model, window)
    if X.shape[0] != 1:
        raise ShapeError("input_gradient takes a single window")
    cache = _forward(model.params, model.config, X)
    if wrt == "prob":
        p = cache["prob"]
        dlogit = p * (1.0 - p)
    elif wrt == "logit":
        dlogit = np.ones(1)
    else:
        raise ValueError("wrt must be 'prob' or 'logit'")
    _, dX = _backward(model.params, model.config, cache, dlogit)
    return dX[0]


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, keys):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in keys:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _check_compatible(model: Model, data: Dataset):
    cfg = model.config
    if data.window_len != cfg.window_len or data.n_channels != cfg.n_channels:
        raise ShapeError(
            f"dataset windows are {data.window_len}x{data.n_channels}, "
            f"model expects {cfg.window_len}x{cfg.n_channels}"
        )
    n_neg, n_pos = data.class_counts()
    if n_neg == 0 or n_pos == 0:
        raise ClassMissingError(f"training data has {n_pos} lift and {n_neg} non-lift windows")


def _fit(model, X, y, epochs, batch_size, lr, seed, keys, history=None, X_val=None, y_val=None):
    params = {k: v.copy() for k, v in model.params.items()}
    cfg = model.config
    opt = Adam(params, lr)
    rng = np.random.default_rng([seed, 0x5EED])
    n = len(X)
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            batch_loss_value, grads = _loss_and_grads(params, cfg, X[idx], y[idx])
            if not np.isfinite(batch_loss_value) or not all(np.all(np.isfinite(grads[k])) for k in keys):
                raise DivergenceError(epoch)
            opt.step(params, grads, keys)
            total += batch_loss_value * len(idx)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise DivergenceError(epoch)
        if history is not None:
            history.train_loss.append(total / n)
            p_val = _forward(params, cfg, X_val)["prob"]
            history.val_loss.append(float(bce(p_val, y_val).mean()))
            history.val_accuracy.append(float(np.mean((p_val >= 0.5) == (y_val == 1))))
    return params


def train(model: Model, data: Dataset, tc: TrainConfig) -> tuple[Model, TrainHistory]:
    """Adam on mini-batch BCE with a stratified validation hold-out.

    Deterministic for fixed (model, data, tc).
    """
    _check_compatible(model, data)
    train_ds, val_ds = split(data, tc.validation_split, tc.seed)
    history = TrainHistory()
    params = _fit(
        model, train_ds.X, train_ds.y, tc.epochs, tc.batch_size, tc.learning_rate, tc.seed,
        tuple(model.params), history, val_ds.X, val_ds.y,
    )
    meta = {**model.meta, "train_lr": tc.learning_rate, "train_config": asdict(tc)}
    return Model(model.config, params, meta), history


def fine_tune(
    model: Model,
    small_data: Dataset,
    freeze_lstm: bool = True,
    lr: float | None = None,
    epochs: int = 20,
    seed: int = 0,
    batch_size: int = 8,
) -> Model:
    """Continue training on a handful of target-domain windows.

    No validation hold-out (the sample is tiny). ``lr`` defaults to a tenth of
    the rate the model was trained with.
    """
    if len(small_data) == 0:
        raise EmptyDatasetError("fine-tuning data is empty")
    _check_compatible(model, small_data)
    if lr is None:
        lr = model.meta.get("train_lr", 1e-3) / 10.0
    keys = tuple(k for k in model.params if not (freeze_lstm and k in LSTM_KEYS))
    params = _fit(model, small_data.X, small_data.y, epochs, batch_size, lr, seed, keys)
    return Model(model.config, params, {**model.meta, "fine_tuned": True})


def score_recording(model: Model, recording: Recording, stride: int = 1) -> np.ndarray:
    """Per-frame lift probability; each frame takes the score of the latest
    window that starts at or before it."""
    T = model.config.window_len
    starts = window_starts(recording.n_frames, T, stride)
    if recording.n_channels != model.config.n_channels:
        raise ShapeError(f"recording has {recording.n_channels} channels, model expects {model.config.n_channels}")
    view = np.lib.stride_tricks.sliding_window_view(recording.data, T, axis=0)[::stride]
    probs = predict_proba(model, view.transpose(0, 2, 1))
    assert len(probs) == len(starts)
    frames = np.arange(recording.n_frames)
    return probs[np.minimum(frames // stride, len(probs) - 1)]


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_model(path, model: Model) -> None:
    """Write header JSON (config, meta, tensor table) then raw little-endian float64."""
    tensors, offset = [], 0
    for name, arr in model.params.items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = json.dumps(
        {"config": _jsonable(asdict(model.config)), "meta": _jsonable(model.meta), "tensors": tensors},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path, channel_layout: Sequence[str] | None = None) -> Model:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ParseError(f"{path} is not a liftnet model file")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    body = raw[pos + hlen:]
    cfg_dict = header["config"]
    cfg_dict["dense_widths"] = tuple(cfg_dict["dense_widths"])
    if cfg_dict.get("channel_layout") is not None:
        cfg_dict["channel_layout"] = tuple(cfg_dict["channel_layout"])
    cfg = ModelConfig(**cfg_dict)
    expected = param_shapes(cfg)
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        if expected.get(t["name"]) != shape:
            raise ShapeError(f"tensor {t['name']} has shape {shape}, config implies {expected.get(t['name'])}")
        n = int(np.prod(shape))
        chunk = body[t["offset"]:t["offset"] + 8 * n]
        if len(chunk) != 8 * n:
            raise ParseError(f"truncated tensor {t['name']}")
        params[t["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
    if set(params) != set(expected):
        raise ShapeError(f"model file tensors {sorted(params)} do not match config")
    if channel_layout is not None:
        channel_layout = tuple(channel_layout)
        if cfg.channel_layout is not None and cfg.channel_layout != channel_layout:
            raise ShapeError("model was trained on a different channel layout")
        if cfg.n_channels != len(channel_layout):
            raise ShapeError(f"model expects {cfg.n_channels} channels, data has {len(channel_layout)}")
    ordered = {k: params[k] for k in expected}
    return Model(cfg, ordered, header.get("meta", {}))


def with_layout(cfg: ModelConfig, data: Dataset, **overrides) -> ModelConfig:
    """Model config matching a dataset's window length and channel layout."""
    return replace(cfg, window_len=data.window_len, n_channels=data.n_channels,
                   channel_layout=data.channel_layout, **overrides)
