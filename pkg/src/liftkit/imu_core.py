"""Recording and label data model, file I/O, label synchronization and repair.

Layout conventions
------------------
A recording stores one ``(n_frames, 6 * n_sensors)`` float64 array. Sensors
appear in :class:`SensorId` order and each sensor contributes six channels
``ax, ay, az, gx, gy, gz`` (m/s^2 and rad/s). World z points up, so a sensor
at rest with its z axis vertical reads ``(0, 0, +9.81)``.

Lift intervals are half-open frame ranges ``[bol, eol)``.

Recording file format::

    #subject=S01
    #trial=T001
    #start_epoch_ms=1600000000000
    #rate_hz=25
    #sensors=LeftWrist,RightWrist,RightThigh,UpperBack,RightUpperArm,Waist
    #units=m/s2,rad/s
    0.1,0.2,9.8,0,0,0,...          <- 6 * n_sensors values per frame

Label file format (one lift per row, ``#`` lines ignored)::

    T001,10:00:04.000,10:00:05.520,MoCap
    T001,10:00:20.000,Video          <- EOL omitted
"""

from __future__ import annotations

import enum
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateSignalError,
    LabelConflictError,
    LabelError,
    NotStillError,
    OutOfRangeError,
    ParseError,
    SchemaError,
    SensorMissingError,
    TimeOrderError,
)

GRAVITY = 9.81
MS_PER_DAY = 86_400_000
EOL_AFTER_BOL_S = Fraction("1.52")
CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")

_ACCEL_UNITS = {"m/s2": 1.0, "m/s^2": 1.0, "g": GRAVITY}
_GYRO_UNITS = {"rad/s": 1.0, "deg/s": math.pi / 180.0, "dps": math.pi / 180.0}
_REQUIRED_HEADER = ("subject", "trial", "start_epoch_ms", "rate_hz", "sensors")


class SensorId(enum.Enum):
    """Body locations. The declaration order is the channel order."""

    LeftWrist = 0
    RightWrist = 1
    RightThigh = 2
    UpperBack = 3
    RightUpperArm = 4
    Waist = 5

    @classmethod
    def parse(cls, name: str) -> "SensorId":
        try:
            return cls[name.strip()]
        except KeyError:
            raise SchemaError(f"unknown sensor {name!r}") from None


ALL_SENSORS = tuple(SensorId)
WRISTS_AND_BACK = (SensorId.LeftWrist, SensorId.RightWrist, SensorId.UpperBack)


def canonical_sensors(sensors: Iterable[SensorId]) -> tuple[SensorId, ...]:
    sensors = tuple(sensors)
    if len(set(sensors)) != len(sensors):
        raise SchemaError("duplicate sensor in sensor list")
    return tuple(sorted(sensors, key=lambda s: s.value))


def channel_names(sensors: Sequence[SensorId]) -> tuple[str, ...]:
    return tuple(f"{s.name}.{c}" for s in sensors for c in CHANNELS)


def round_half_up(x) -> int:
    """Round to nearest integer, halves away from -inf (exact for Fractions)."""
    return math.floor(Fraction(x) + Fraction(1, 2))


def _exact(x: float) -> Fraction:
    # decimal reading of the float, so 25.6 Hz means 256/10 and not its binary neighbour
    return Fraction(repr(float(x)))


# --------------------------------------------------------------------------
# Recording
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Recording:
    subject_id: str
    trial_id: str
    start_epoch_ms: int
    sample_rate_hz: float
    data: np.ndarray
    active_sensors: tuple[SensorId, ...] = ALL_SENSORS

    def __post_init__(self):
        sensors = tuple(self.active_sensors)
        if not sensors:
            raise SchemaError("recording needs at least one sensor")
        if canonical_sensors(sensors) != sensors:
            raise SchemaError("active_sensors must be in SensorId order")
        if not self.sample_rate_hz > 0:
            raise SchemaError(f"sample rate must be positive, got {self.sample_rate_hz}")
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0:
            raise SchemaError("recording needs a non-empty 2-D frame array")
        if data.shape[1] != 6 * len(sensors):
            raise SchemaError(
                f"{data.shape[1]} channels for {len(sensors)} sensors "
                f"(expected {6 * len(sensors)})"
            )
        if not np.all(np.isfinite(data)):
            raise SchemaError("recording contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "active_sensors", sensors)
        object.__setattr__(self, "start_epoch_ms", int(self.start_epoch_ms))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.trial_id == other.trial_id
            and self.start_epoch_ms == other.start_epoch_ms
            and self.sample_rate_hz == other.sample_rate_hz
            and self.active_sensors == other.active_sensors
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def channel_layout(self) -> tuple[str, ...]:
        return channel_names(self.active_sensors)

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.n_frames / self.sample_rate_hz

    def column(self, sensor: SensorId) -> int:
        """Index of the first channel (``ax``) of ``sensor``."""
        try:
            return 6 * self.active_sensors.index(sensor)
        except ValueError:
            raise SensorMissingError(f"{sensor.name} is not active in {self.trial_id}") from None

    def accel(self, sensor: SensorId) -> np.ndarray:
        c = self.column(sensor)
        return self.data[:, c:c + 3]

    def gyro(self, sensor: SensorId) -> np.ndarray:
        c = self.column(sensor)
        return self.data[:, c + 3:c + 6]

    def with_data(self, data: np.ndarray) -> "Recording":
        return replace(self, data=data)


def restrict_sensors(recording: Recording, sensors: Iterable[SensorId]) -> Recording:
    """Keep only the channels of ``sensors`` (order canonicalized)."""
    sensors = canonical_sensors(sensors)
    cols = []
    for s in sensors:
        c = recording.column(s)
        cols.extend(range(c, c + 6))
    return replace(recording, data=recording.data[:, cols], active_sensors=sensors)


@dataclass(frozen=True)
class Schema:
    """What a parsed file must provide.

    ``sensors=None`` accepts whatever the header declares; otherwise the header
    must list exactly these sensors (trials with a dead sensor are rejected).
    """

    sensors: tuple[SensorId, ...] | None = ALL_SENSORS


DEFAULT_SCHEMA = Schema()
ANY_SENSORS = Schema(sensors=None)


def _lines(text) -> Iterable[str]:
    if isinstance(text, str):
        return io.StringIO(text)
    return text


def parse_recording(text, schema: Schema = DEFAULT_SCHEMA) -> Recording:
    """Parse the recording text format (a string or any iterable of lines)."""
    header: dict[str, tuple[str, int]] = {}
    rows: list[list[float]] = []
    width = None
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if rows:
                raise ParseError("header line after frame data", lineno)
            key, sep, value = line[1:].partition("=")
            if not sep or not key.strip():
                raise ParseError(f"malformed header {line!r}", lineno)
            header[key.strip()] = (value.strip(), lineno)
            continue
        if width is None:
            meta = _parse_header(header, schema)
            width = 6 * len(meta["sensors"])
        parts = line.split(",")
        if len(parts) != width:
            raise SchemaError(
                f"line {lineno}: {len(parts)} values, header declares "
                f"{len(meta['sensors'])} sensors ({width} values)"
            )
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise ParseError("non-numeric channel value", lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite channel value", lineno)
        rows.append(values)
    if width is None:
        meta = _parse_header(header, schema)
    if not rows:
        raise ParseError("no frames")

    data = np.asarray(rows, dtype=np.float64)
    sensors = meta["sensors"]
    order = canonical_sensors(sensors)
    if order != sensors:
        cols = [6 * sensors.index(s) + k for s in order for k in range(6)]
        data = data[:, cols]
    accel_scale, gyro_scale = meta["units"]
    if accel_scale != 1.0 or gyro_scale != 1.0:
        data = data.reshape(len(data), -1, 2, 3) * np.array([accel_scale, gyro_scale])[:, None]
        data = data.reshape(len(data), -1)
    return Recording(
        subject_id=meta["subject"],
        trial_id=meta["trial"],
        start_epoch_ms=meta["start_epoch_ms"],
        sample_rate_hz=meta["rate_hz"],
        data=data,
        active_sensors=order,
    )


def _parse_header(header, schema):
    for key in _REQUIRED_HEADER:
        if key not in header:
            raise ParseError(f"missing header field #{key}")
    meta = {"subject": header["subject"][0], "trial": header["trial"][0]}
    value, lineno = header["start_epoch_ms"]
    try:
        meta["start_epoch_ms"] = int(value)
    except ValueError:
        raise ParseError(f"start_epoch_ms must be an integer, got {value!r}", lineno) from None
    value, lineno = header["rate_hz"]
    try:
        rate = float(value)
    except ValueError:
        raise ParseError(f"rate_hz must be a number, got {value!r}", lineno) from None
    if not (math.isfinite(rate) and rate > 0):
        raise ParseError(f"rate_hz must be positive, got {value!r}", lineno)
    meta["rate_hz"] = rate

    value, lineno = header["sensors"]
    sensors = tuple(SensorId.parse(s) for s in value.split(",") if s.strip())
    if not sensors:
        raise ParseError("empty sensor list", lineno)
    if len(set(sensors)) != len(sensors):
        raise SchemaError(f"line {lineno}: duplicate sensor in header")
    if schema.sensors is not None and set(sensors) != set(schema.sensors):
        missing = sorted(s.name for s in set(schema.sensors) - set(sensors))
        extra = sorted(s.name for s in set(sensors) - set(schema.sensors))
        raise SchemaError(f"sensor set mismatch: missing {missing}, unexpected {extra}")
    meta["sensors"] = sensors

    units = header.get("units", ("m/s2,rad/s", 0))
    parts = [u.strip() for u in units[0].split(",")]
    if len(parts) != 2 or parts[0] not in _ACCEL_UNITS or parts[1] not in _GYRO_UNITS:
        raise ParseError(f"unsupported units {units[0]!r}", units[1] or None)
    meta["units"] = (_ACCEL_UNITS[parts[0]], _GYRO_UNITS[parts[1]])
    return meta


def format_recording(recording: Recording, digits: int = 9) -> str:
    out = [
        f"#subject={recording.subject_id}",
        f"#trial={recording.trial_id}",
        f"#start_epoch_ms={recording.start_epoch_ms}",
        f"#rate_hz={recording.sample_rate_hz!r}",
        "#sensors=" + ",".join(s.name for s in recording.active_sensors),
        "#units=m/s2,rad/s",
    ]
    fmt = f"{{:.{digits}g}}"
    for row in recording.data.tolist():
        out.append(",".join(fmt.format(v) for v in row))
    return "\n".join(out) + "\n"


def read_recording(path, schema: Schema = DEFAULT_SCHEMA) -> Recording:
    with open(path, encoding="utf-8") as fh:
        return parse_recording(fh, schema)


def write_recording(path, recording: Recording) -> None:
    Path(path).write_text(format_recording(recording), encoding="utf-8")


# --------------------------------------------------------------------------
# Labels and synchronization
# --------------------------------------------------------------------------

class LabelSource(enum.Enum):
    MoCap = "MoCap"
    Video = "Video"


class EolPolicy(enum.Enum):
    UseProvided = "provided"
    DeriveFromBol = "derive"


def parse_time_of_day(text: str) -> int:
    """``hh:MM:ss.mmm`` (or ``hh:MM:ss:mmm``) to milliseconds since midnight."""
    parts = text.strip().replace(".", ":").split(":")
    if len(parts) not in (3, 4):
        raise ParseError(f"bad time of day {text!r}")
    try:
        h, m, s = (int(p) for p in parts[:3])
        ms = int(parts[3].ljust(3, "0")[:3]) if len(parts) == 4 else 0
    except ValueError:
        raise ParseError(f"bad time of day {text!r}") from None
    if not (0 <= h < 24 and 0 <= m < 60 and 0 <= s < 60):
        raise ParseError(f"time of day out of range {text!r}")
    return ((h * 60 + m) * 60 + s) * 1000 + ms


def format_time_of_day(ms: int) -> str:
    ms = int(ms) % MS_PER_DAY
    s, ms = divmod(ms, 1000)
    m, s = divmod(s, 60)
    h, m = divmod(m, 60)
    return f"{h:02d}:{m:02d}:{s:02d}.{ms:03d}"


@dataclass(frozen=True)
class RawLabel:
    trial_id: str
    bol_ms: int
    eol_ms: int | None = None
    source: LabelSource = LabelSource.MoCap

    def __post_init__(self):
        if self.eol_ms is not None and not self.eol_ms > self.bol_ms:
            raise LabelError(f"{self.trial_id}: EOL must come after BOL")


def parse_labels(text) -> list[RawLabel]:
    labels = []
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", lineno)
        try:
            source = LabelSource(parts[-1])
        except ValueError:
            raise ParseError(f"unknown label source {parts[-1]!r}", lineno) from None
        try:
            bol = parse_time_of_day(parts[1])
            eol = parse_time_of_day(parts[2]) if len(parts) == 4 else None
        except ParseError as exc:
            raise ParseError(str(exc), lineno) from None
        labels.append(RawLabel(parts[0], bol, eol, source))
    return labels


def format_labels(labels: Iterable[RawLabel]) -> str:
    rows = []
    for lab in labels:
        cols = [lab.trial_id, format_time_of_day(lab.bol_ms)]
        if lab.eol_ms is not None:
            cols.append(format_time_of_day(lab.eol_ms))
        cols.append(lab.source.value)
        rows.append(",".join(cols))
    return "\n".join(rows) + ("\n" if rows else "")


def read_labels(path) -> list[RawLabel]:
    with open(path, encoding="utf-8") as fh:
        return parse_labels(fh)


@dataclass(frozen=True, order=True)
class LiftInterval:
    bol_frame: int
    eol_frame: int

    def __post_init__(self):
        if self.bol_frame < 0:
            raise OutOfRangeError(f"negative BOL frame {self.bol_frame}")
        if not self.bol_frame < self.eol_frame:
            raise LabelError(f"empty interval ({self.bol_frame}, {self.eol_frame})")

    def shifted(self, k: int) -> "LiftInterval":
        return LiftInterval(self.bol_frame + k, self.eol_frame + k)


@dataclass(frozen=True)
class LabeledRecording:
    recording: Recording
    lifts: tuple[LiftInterval, ...] = ()
    applied_offset_frames: int = 0
    all_nonlift: bool = False

    def __post_init__(self):
        lifts = tuple(self.lifts)
        object.__setattr__(self, "lifts", lifts)
        if self.all_nonlift and lifts:
            raise LabelError("all_nonlift recording cannot carry lifts")
        n = self.recording.n_frames
        for a, b in zip(lifts, lifts[1:]):
            if b.bol_frame < a.bol_frame:
                raise LabelError("lift intervals must be sorted by BOL")
            if b.bol_frame < a.eol_frame:
                raise LabelConflictError(f"overlapping lifts {a} and {b}")
        for lift in lifts:
            if lift.eol_frame >= n:
                raise OutOfRangeError(f"{lift} exceeds recording length {n}")

    @property
    def trial_id(self) -> str:
        return self.recording.trial_id


def start_time_of_day(recording: Recording) -> int:
    """UTC time of day of the first frame, in ms."""
    return recording.start_epoch_ms % MS_PER_DAY


def epoch_to_frame(event_ms: int, recording: Recording, clamp: bool = False) -> int:
    """Frame index of a time-of-day event (ms since midnight, same day)."""
    delta = int(event_ms) - start_time_of_day(recording)
    n = recording.n_frames
    if delta < 0:
        if clamp:
            return 0
        raise TimeOrderError(
            f"event {format_time_of_day(event_ms)} precedes recording start "
            f"{format_time_of_day(start_time_of_day(recording))}"
        )
    frame = round_half_up(Fraction(delta, 1000) * _exact(recording.sample_rate_hz))
    if frame >= n:
        if clamp:
            return n - 1
        raise OutOfRangeError(f"event maps to frame {frame}, recording has {n}")
    return frame


def adjust_eol(bol_frame: int, sample_rate_hz: float) -> int:
    """EOL placed a fixed 1.52 s after BOL."""
    return int(bol_frame) + round_half_up(EOL_AFTER_BOL_S * _exact(sample_rate_hz))


def align_labels(
    recording: Recording,
    labels: Iterable[RawLabel],
    eol_policy: EolPolicy = EolPolicy.DeriveFromBol,
) -> LabeledRecording:
    start = start_time_of_day(recording)
    if start + recording.duration_ms > MS_PER_DAY:
        raise TimeOrderError(f"{recording.trial_id} crosses midnight")
    lifts = []
    for lab in labels:
        if lab.trial_id != recording.trial_id:
            raise LabelError(f"label for {lab.trial_id} given to {recording.trial_id}")
        bol = epoch_to_frame(lab.bol_ms, recording)
        if eol_policy is EolPolicy.DeriveFromBol:
            eol = adjust_eol(bol, recording.sample_rate_hz)
        elif lab.eol_ms is None:
            raise LabelError(f"{lab.trial_id}: label has no EOL and policy is UseProvided")
        else:
            eol = epoch_to_frame(lab.eol_ms, recording)
        lifts.append(LiftInterval(bol, eol))
    lifts.sort()
    return LabeledRecording(recording, tuple(lifts))


def lift_indicator(lr: LabeledRecording) -> np.ndarray:
    ind = np.zeros(lr.recording.n_frames)
    for lift in lr.lifts:
        ind[lift.bol_frame:lift.eol_frame] = 1.0
    return ind


# --------------------------------------------------------------------------
# Time-offset repair
# --------------------------------------------------------------------------

def apply_time_offset(lr: LabeledRecording, offset_frames: int) -> LabeledRecording:
    k = int(offset_frames)
    n = lr.recording.n_frames
    for lift in lr.lifts:
        if lift.bol_frame + k < 0 or lift.eol_frame + k >= n:
            raise OutOfRangeError(f"offset {k:+d} pushes {lift} outside [0, {n})")
    return replace(
        lr,
        lifts=tuple(lift.shifted(k) for lift in lr.lifts),
        applied_offset_frames=lr.applied_offset_frames + k,
    )


def estimate_time_offset(scores, lr: LabeledRecording, max_lag_frames: int) -> int:
    """How many frames the labels trail the score series.

    Maximizes ``sum_t s[t] * ind[t + lag]`` (``s`` mean-centred, zero padded)
    over ``|lag| <= max_lag_frames``; ties go to the smallest ``|lag|``, then to
    the negative lag. A positive result means the labels are late: pass its
    negation to :func:`apply_time_offset` (or use :func:`repair_time_offset`).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = lr.recording.n_frames
    if scores.shape != (n,):
        raise OutOfRangeError(f"score series has shape {scores.shape}, recording has {n} frames")
    if max_lag_frames < 1:
        raise ValueError("max_lag_frames must be >= 1")
    ind = lift_indicator(lr)
    if not ind.any():
        raise DegenerateSignalError("recording has no labeled lift frames")
    if np.ptp(scores) == 0:
        raise DegenerateSignalError("score series is constant")
    s = scores - scores.mean()

    lags = np.arange(-max_lag_frames, max_lag_frames + 1)
    corr = np.empty(len(lags))
    for j, lag in enumerate(lags):
        if lag >= 0:
            corr[j] = s[:n - lag] @ ind[lag:] if lag < n else 0.0
        else:
            corr[j] = s[-lag:] @ ind[:n + lag] if -lag < n else 0.0
    best = corr.max()
    tol = 1e-12 * max(1.0, abs(best))
    candidates = lags[corr >= best - tol]
    return int(min(candidates, key=lambda lag: (abs(lag), lag)))


def repair_time_offset(scores, lr: LabeledRecording, max_lag_frames: int) -> LabeledRecording:
    return apply_time_offset(lr, -estimate_time_offset(scores, lr, max_lag_frames))


# --------------------------------------------------------------------------
# Sensor placement repair
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlacementFix:
    sensor: SensorId
    rotation: np.ndarray = field(repr=False)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)

    def inverse(self) -> "PlacementFix":
        return PlacementFix(self.sensor, self.rotation.T)


@lru_cache(maxsize=None)
def axis_aligned_rotations() -> tuple[np.ndarray, ...]:
    """The 24 proper rotations that map coordinate axes onto coordinate axes.

    Enumeration order (used for tie-breaking): axis permutations in
    ``itertools.permutations`` order, then sign patterns in
    ``itertools.product((1, -1), repeat=3)`` order, keeping det = +1.
    The identity comes first.
    """
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            r = np.zeros((3, 3))
            for row, (col, sign) in enumerate(zip(perm, signs)):
                r[row, col] = sign
            if round(np.linalg.det(r)) == 1:
                r.setflags(write=False)
                out.append(r)
    return tuple(out)


def apply_placement_fix(recording: Recording, fix: PlacementFix) -> Recording:
    c = recording.column(fix.sensor)
    data = recording.data.copy()
    rt = fix.rotation.T
    data[:, c:c + 3] = recording.data[:, c:c + 3] @ rt
    data[:, c + 3:c + 6] = recording.data[:, c + 3:c + 6] @ rt
    return recording.with_data(data)


def detect_placement_anomaly(
    recording: Recording,
    suspect: SensorId,
    reference: SensorId,
    still_window: tuple[int, int] | range,
    threshold_deg: float = 60.0,
) -> PlacementFix | None:
    """Compare gravity directions of two sensors while the subject stands still.

    Returns the axis-aligned rotation that best maps the suspect's mean
    accelerometer direction onto the reference's when they disagree by more
    than ``threshold_deg``; ``None`` otherwise.
    """
    if isinstance(still_window, range):
        start, stop = still_window.start, still_window.stop
    else:
        start, stop = still_window
    if not (0 <= start < stop <= recording.n_frames):
        raise OutOfRangeError(f"still window [{start}, {stop}) outside recording")
    if stop - start < recording.sample_rate_hz:
        raise OutOfRangeError("still window must cover at least one second")

    g_s = recording.accel(suspect)[start:stop].mean(axis=0)
    g_r = recording.accel(reference)[start:stop].mean(axis=0)
    for name, g in ((suspect.name, g_s), (reference.name, g_r)):
        if np.linalg.norm(g) < 0.5 * GRAVITY:
            raise NotStillError(f"{name} mean acceleration {np.linalg.norm(g):.3f} m/s^2 < 0.5 g")
    u_s = g_s / np.linalg.norm(g_s)
    u_r = g_r / np.linalg.norm(g_r)
    angle = math.degrees(math.acos(float(np.clip(u_s @ u_r, -1.0, 1.0))))
    if angle <= threshold_deg:
        return None

    best, best_resid = None, math.inf
    for r in axis_aligned_rotations():
        resid = float(np.linalg.norm(r @ u_s - u_r))
        if resid < best_resid - 1e-12:
            best, best_resid = r, resid
    return PlacementFix(suspect, best)
