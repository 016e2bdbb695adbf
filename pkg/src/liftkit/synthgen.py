"""Synthetic six-sensor recordings with known lift intervals.

Every sensor rests with gravity on +z plus white noise. A lift adds a
half-sine pulse to the accelerometer z axis and gyro x axis of the
informative sensors. An optional distractor puts a (stronger) pulse on other
sensors: alongside every lift in lab-like data, and, for the ``TrainOnly``
rule in field-like data, only *outside* lifts. The lab-like correlation then
stops holding at evaluation time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import SpecError
from .imu_core import (
    ALL_SENSORS,
    GRAVITY,
    WRISTS_AND_BACK,
    LabeledRecording,
    LabelSource,
    LiftInterval,
    RawLabel,
    Recording,
    SensorId,
    canonical_sensors,
    round_half_up,
    start_time_of_day,
    _exact,
)

GYRO_PER_ACCEL = 0.5  # rad/s of gyro pulse per m/s^2 of accel pulse
BASE_EPOCH_MS = 1_600_000_000_000  # 2020-09-13 12:26:40 UTC


class DistractorMode(enum.Enum):
    TrainOnly = "trainonly"
    Always = "always"


class CorpusMode(enum.Enum):
    TrainLike = "trainlike"
    FieldLike = "fieldlike"


@dataclass(frozen=True)
class LiftSpec:
    bol_s: float
    amplitude: float = 2.0
    duration_s: float = 1.2


@dataclass(frozen=True)
class PulseSpec:
    onset_s: float
    amplitude: float
    duration_s: float = 1.2


@dataclass(frozen=True)
class DistractorRule:
    sensors: tuple[SensorId, ...] = (SensorId.RightUpperArm,)
    mode: DistractorMode = DistractorMode.TrainOnly
    amplitude: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "sensors", canonical_sensors(self.sensors))
        object.__setattr__(self, "mode", DistractorMode(self.mode))


@dataclass(frozen=True)
class MotionSpec:
    duration_s: float = 60.0
    lifts: tuple[LiftSpec, ...] = ()
    noise_sigma: tuple[float, float] = (0.3, 0.05)  # (accel m/s^2, gyro rad/s)
    informative_sensors: tuple[SensorId, ...] = WRISTS_AND_BACK
    distractor: DistractorRule | None = None
    distractor_follows_lifts: bool = True
    distractor_pulses: tuple[PulseSpec, ...] = ()
    seed: int = 0
    sample_rate_hz: float = 25.0
    subject_id: str = "S00"
    trial_id: str = "T000"
    start_epoch_ms: int = BASE_EPOCH_MS
    sensors: tuple[SensorId, ...] = ALL_SENSORS

    def n_frames(self) -> int:
        return round_half_up(_exact(self.duration_s) * _exact(self.sample_rate_hz))

    def frame_span(self, onset_s: float, duration_s: float) -> tuple[int, int]:
        rate = _exact(self.sample_rate_hz)
        start = round_half_up(_exact(onset_s) * rate)
        return start, start + round_half_up(_exact(duration_s) * rate)


def default_motion_spec(**overrides) -> MotionSpec:
    """60 s trial with four lifts, spaced well apart."""
    spec = MotionSpec(lifts=tuple(LiftSpec(t) for t in (8.0, 21.0, 34.0, 47.0)))
    return replace(spec, **overrides)


def _validate(spec: MotionSpec):
    if not spec.duration_s > 0 or not spec.sample_rate_hz > 0:
        raise SpecError("duration and sample rate must be positive")
    if min(spec.noise_sigma) < 0 or len(spec.noise_sigma) != 2:
        raise SpecError("noise_sigma must be two non-negative values (accel, gyro)")
    n = spec.n_frames()
    sensors = set(spec.sensors)
    if not set(spec.informative_sensors) <= sensors:
        raise SpecError("informative sensors must be active")
    if spec.distractor is not None and not set(spec.distractor.sensors) <= sensors:
        raise SpecError("distractor sensors must be active")
    prev_end = -1
    for lift in spec.lifts:
        a, b = spec.frame_span(lift.bol_s, lift.duration_s)
        if lift.bol_s < 0 or b <= a:
            raise SpecError(f"invalid lift {lift}")
        if a < prev_end:
            raise SpecError("lifts overlap or are not in time order")
        if b >= n:
            raise SpecError(f"lift at {lift.bol_s} s runs past the end of the recording")
        prev_end = b
    for pulse in spec.distractor_pulses:
        a, b = spec.frame_span(pulse.onset_s, pulse.duration_s)
        if pulse.onset_s < 0 or b <= a or b > n:
            raise SpecError(f"distractor pulse {pulse} outside recording")


def half_sine(n: int) -> np.ndarray:
    """Sampled at frame centres so every one of the n frames is non-zero."""
    return np.sin(np.pi * (np.arange(n) + 0.5) / n)


def _add_pulse(data, spec, sensors, a, b, amplitude, accel_axis, gyro_axis):
    shape = amplitude * half_sine(b - a)
    for s in sensors:
        c = 6 * spec.sensors.index(s)
        data[a:b, c + accel_axis] += shape
        data[a:b, c + 3 + gyro_axis] += GYRO_PER_ACCEL * shape


def generate_recording(spec: MotionSpec) -> tuple[Recording, LabeledRecording]:
    _validate(spec)
    sensors = canonical_sensors(spec.sensors)
    spec = replace(spec, sensors=sensors)
    n = spec.n_frames()
    rng = np.random.default_rng(spec.seed)
    sigma = np.tile(np.repeat(np.asarray(spec.noise_sigma, dtype=np.float64), 3), len(sensors))
    data = rng.standard_normal((n, 6 * len(sensors))) * sigma
    data[:, 2::6] += GRAVITY

    lifts = []
    for lift in spec.lifts:
        a, b = spec.frame_span(lift.bol_s, lift.duration_s)
        _add_pulse(data, spec, spec.informative_sensors, a, b, lift.amplitude, 2, 0)
        if spec.distractor is not None and spec.distractor_follows_lifts:
            _add_pulse(data, spec, spec.distractor.sensors, a, b, spec.distractor.amplitude, 2, 1)
        lifts.append(LiftInterval(a, b))
    if spec.distractor is not None:
        for pulse in spec.distractor_pulses:
            a, b = spec.frame_span(pulse.onset_s, pulse.duration_s)
            _add_pulse(data, spec, spec.distractor.sensors, a, b, pulse.amplitude, 2, 1)

    rec = Recording(spec.subject_id, spec.trial_id, spec.start_epoch_ms, spec.sample_rate_hz, data, sensors)
    return rec, LabeledRecording(rec, tuple(lifts))


def field_distractor_pulses(
    spec: MotionSpec,
    rng: np.random.Generator,
    period_s: float = 8.0,
    margin_s: float = 0.5,
) -> tuple[PulseSpec, ...]:
    """Distractor pulses roughly every ``period_s`` seconds, kept clear of lifts."""
    amp = spec.distractor.amplitude
    dur = 1.2
    busy = [(l.bol_s - margin_s, l.bol_s + l.duration_s + margin_s) for l in spec.lifts]
    pulses = []
    t = rng.uniform(0.5, period_s)
    while t + dur < spec.duration_s - margin_s:
        clash = [end for start, end in busy if t < end and t + dur > start]
        if clash:
            t = max(clash)
            continue
        pulses.append(PulseSpec(round(t, 2), float(amp * rng.uniform(0.8, 1.2)), dur))
        t += dur + period_s * rng.uniform(0.6, 1.0)
    return tuple(pulses)


def trial_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def generate_corpus(
    template: MotionSpec,
    n_trials: int,
    base_seed: int,
    mode: CorpusMode = CorpusMode.TrainLike,
    lift_jitter_s: float = 1.0,
    field_period_s: float = 8.0,
) -> list[tuple[Recording, LabeledRecording]]:
    """``n_trials`` recordings from one template with per-trial randomness.

    Each trial jitters lift onsets by up to ``lift_jitter_s`` and amplitudes by
    +-20 %, and draws its own noise. In ``FieldLike`` mode a ``TrainOnly``
    distractor stops accompanying lifts and fires in lift-free stretches
    instead.
    """
    if n_trials < 1:
        raise SpecError("n_trials must be >= 1")
    mode = CorpusMode(mode)
    out = []
    for i in range(n_trials):
        seed = trial_seed(base_seed, i)
        rng = np.random.default_rng([seed, 1])
        lifts = tuple(
            LiftSpec(
                round(l.bol_s + rng.uniform(-lift_jitter_s, lift_jitter_s), 2),
                float(l.amplitude * rng.uniform(0.8, 1.2)),
                l.duration_s,
            )
            for l in template.lifts
        )
        spec = replace(
            template,
            lifts=lifts,
            seed=seed,
            subject_id=f"S{i % 5:02d}",
            trial_id=f"T{i:03d}",
            start_epoch_ms=template.start_epoch_ms + 600_000 * i,
        )
        d = template.distractor
        if mode is CorpusMode.FieldLike and d is not None and d.mode is DistractorMode.TrainOnly:
            spec = replace(
                spec,
                distractor_follows_lifts=False,
                distractor_pulses=field_distractor_pulses(spec, rng, field_period_s),
            )
        out.append(generate_recording(spec))
    return out


def labels_for(lr: LabeledRecording, eol: bool = True):
    """Wall-clock labels matching ``lr``'s intervals (for writing label files)."""
    rec = lr.recording
    start = start_time_of_day(rec)
    out = []
    for lift in lr.lifts:
        bol = start + round_half_up(_exact(1000 * lift.bol_frame) / _exact(rec.sample_rate_hz))
        eol_ms = start + round_half_up(_exact(1000 * lift.eol_frame) / _exact(rec.sample_rate_hz)) if eol else None
        out.append(RawLabel(rec.trial_id, bol, eol_ms, LabelSource.MoCap))
    return out


def pulse_frames(rec: Recording, sensors: Iterable[SensorId], threshold: float) -> np.ndarray:
    """Boolean mask of frames where any listed sensor's accel-z departs from g."""
    mask = np.zeros(rec.n_frames, dtype=bool)
    for s in sensors:
        mask |= np.abs(rec.accel(s)[:, 2] - GRAVITY) > threshold
    return mask
