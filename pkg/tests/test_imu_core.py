import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import TEN_AM_MS, make_labeled, make_recording, resting_data
from liftkit.errors import (
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
from liftkit.imu_core import (
    ALL_SENSORS,
    ANY_SENSORS,
    GRAVITY,
    EolPolicy,
    LabeledRecording,
    LabelSource,
    LiftInterval,
    PlacementFix,
    RawLabel,
    SensorId,
    adjust_eol,
    align_labels,
    apply_placement_fix,
    apply_time_offset,
    axis_aligned_rotations,
    channel_names,
    detect_placement_anomaly,
    epoch_to_frame,
    estimate_time_offset,
    format_labels,
    format_recording,
    lift_indicator,
    parse_labels,
    parse_recording,
    parse_time_of_day,
    repair_time_offset,
    restrict_sensors,
    round_half_up,
)
from oracles import best_lag, frame_of

HEADER = (
    "#subject=S01\n#trial=T001\n#start_epoch_ms={start}\n#rate_hz=25\n"
    "#sensors=" + ",".join(s.name for s in ALL_SENSORS) + "\n"
)


def ms(text):
    return parse_time_of_day(text)


# ---------------------------------------------------------------- sensors

def test_sensor_order_is_fixed():
    assert [s.name for s in SensorId] == [
        "LeftWrist", "RightWrist", "RightThigh", "UpperBack", "RightUpperArm", "Waist"]
    assert len(set(SensorId)) == 6
    names = channel_names(ALL_SENSORS)
    assert len(names) == 36
    assert names[:7] == ("LeftWrist.ax", "LeftWrist.ay", "LeftWrist.az", "LeftWrist.gx",
                         "LeftWrist.gy", "LeftWrist.gz", "RightWrist.ax")


def test_unknown_sensor_name():
    with pytest.raises(SchemaError):
        SensorId.parse("LeftAnkle")


# ---------------------------------------------------------------- parsing

def test_parse_two_frames():
    rows = "\n".join(",".join(["0.5"] * 36) for _ in range(2))
    rec = parse_recording(HEADER.format(start=TEN_AM_MS) + rows + "\n")
    assert rec.n_frames == 2
    assert rec.n_channels == 36
    assert rec.sample_rate_hz == 25.0
    assert rec.trial_id == "T001" and rec.subject_id == "S01"
    assert rec.start_epoch_ms == TEN_AM_MS


def test_header_with_five_sensors_but_36_values():
    header = HEADER.replace(",Waist", "").format(start=0)
    text = header + ",".join(["1"] * 36) + "\n"
    with pytest.raises(SchemaError):
        parse_recording(text, ANY_SENSORS)
    with pytest.raises(SchemaError):  # default schema rejects a missing sensor outright
        parse_recording(text)


def test_no_frames():
    with pytest.raises(ParseError, match="no frames"):
        parse_recording(HEADER.format(start=0))


def test_non_numeric_value_reports_line():
    rows = ",".join(["1"] * 36) + "\n" + ",".join(["1"] * 35 + ["x"]) + "\n"
    with pytest.raises(ParseError) as err:
        parse_recording(HEADER.format(start=0) + rows)
    assert err.value.line == 7


def test_missing_header_field():
    text = HEADER.replace("#rate_hz=25\n", "").format(start=0) + ",".join(["1"] * 36)
    with pytest.raises(ParseError):
        parse_recording(text)


def test_units_are_converted():
    header = HEADER.format(start=0) + "#units=g,deg/s\n"
    rows = ",".join(["0", "0", "1", "180", "0", "0"] * 6) + "\n"
    rec = parse_recording(header + rows)
    assert rec.data[0, 2] == pytest.approx(GRAVITY)
    assert rec.data[0, 3] == pytest.approx(math.pi)


def test_columns_reordered_to_sensor_order():
    sensors = list(reversed(ALL_SENSORS))
    header = HEADER.format(start=0).replace(
        ",".join(s.name for s in ALL_SENSORS), ",".join(s.name for s in sensors))
    row = []
    for s in sensors:
        row += [float(s.value)] * 6
    rec = parse_recording(header + ",".join(map(repr, row)) + "\n")
    assert rec.active_sensors == ALL_SENSORS
    for s in ALL_SENSORS:
        assert np.all(rec.accel(s) == s.value)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(st.lists(finite, min_size=36, max_size=36), min_size=1, max_size=5))
def test_format_parse_round_trip_at_nine_digits(rows):
    rows = [[float(f"{v:.9g}") for v in r] for r in rows]
    rec = make_recording(len(rows), data=np.array(rows))
    back = parse_recording(format_recording(rec))
    assert back == rec
    assert format_recording(back) == format_recording(rec)


def test_recording_is_read_only(recording):
    with pytest.raises(ValueError):
        recording.data[0, 0] = 1.0


def test_restrict_sensors(recording):
    sub = restrict_sensors(recording, [SensorId.UpperBack, SensorId.LeftWrist])
    assert sub.active_sensors == (SensorId.LeftWrist, SensorId.UpperBack)
    assert sub.n_channels == 12
    assert np.array_equal(sub.accel(SensorId.UpperBack), recording.accel(SensorId.UpperBack))


# ---------------------------------------------------------------- time -> frame

@pytest.mark.parametrize("event, frame", [
    ("10:00:02.000", 50),
    ("10:00:00.000", 0),
    ("10:00:00.060", 2),  # 1.5 frames, rounded half up
    ("10:00:00.020", 1),  # 0.5 frames
    ("10:00:00.019", 0),
])
def test_epoch_to_frame_examples(event, frame):
    assert epoch_to_frame(ms(event), make_recording()) == frame


def test_epoch_to_frame_errors_and_clamp():
    rec = make_recording(100)
    with pytest.raises(TimeOrderError):
        epoch_to_frame(ms("09:59:59.999"), rec)
    with pytest.raises(OutOfRangeError):
        epoch_to_frame(ms("10:00:04.000"), rec)  # frame 100 of 100
    assert epoch_to_frame(ms("09:00:00.000"), rec, clamp=True) == 0
    assert epoch_to_frame(ms("11:00:00.000"), rec, clamp=True) == 99


@given(st.integers(0, 200_000), st.sampled_from([25.0, 50.0, 100.0, 12.5, 25.6, 30.0]))
def test_epoch_to_frame_matches_decimal_oracle(delta, rate):
    start = ms("10:00:00.000")
    expected = frame_of(start + delta, start, rate)
    rec = make_recording(expected + 1, rate=rate, data=resting_data(expected + 1))
    assert epoch_to_frame(start + delta, rec) == expected


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_epoch_to_frame_monotone(a, b):
    rec = make_recording(300)
    t1, t2 = sorted((a, b))
    start = ms("10:00:00.000")
    assert epoch_to_frame(start + t1, rec, clamp=True) <= epoch_to_frame(start + t2, rec, clamp=True)


def test_round_half_up():
    assert round_half_up(1.5) == 2
    assert round_half_up(2.5) == 3
    assert round_half_up(-0.5) == 0
    assert round_half_up(0.49999) == 0


@pytest.mark.parametrize("bol, rate, eol", [(100, 25, 138), (0, 25, 38), (10, 50, 86)])
def test_adjust_eol(bol, rate, eol):
    assert adjust_eol(bol, rate) == eol


def test_time_of_day_formats():
    assert ms("10:00:02.5") == 36_002_500
    assert ms("10:00:02:500") == 36_002_500
    with pytest.raises(ParseError):
        ms("25:00:00.000")


# ---------------------------------------------------------------- labels

def test_align_single_label_derive_eol():
    rec = make_recording(500)
    lr = align_labels(rec, [RawLabel("T001", ms("10:00:04.000"))])
    assert lr.lifts == (LiftInterval(100, 138),)


def test_align_zero_labels():
    lr = align_labels(make_recording(), [])
    assert lr.lifts == ()


def test_align_overlap_conflict():
    labels = [RawLabel("T001", ms("10:00:02.000")), RawLabel("T001", ms("10:00:03.200"))]
    with pytest.raises(LabelConflictError):
        align_labels(make_recording(), labels)  # (50,88) and (80,118)


def test_align_use_provided_eol():
    rec = make_recording(500)
    lab = RawLabel("T001", ms("10:00:04.000"), ms("10:00:05.000"))
    assert align_labels(rec, [lab], EolPolicy.UseProvided).lifts == (LiftInterval(100, 125),)
    with pytest.raises(LabelError):
        align_labels(rec, [RawLabel("T001", ms("10:00:04.000"))], EolPolicy.UseProvided)


def test_align_sorts_and_checks_trial():
    rec = make_recording(500)
    labels = [RawLabel("T001", ms("10:00:10.000")), RawLabel("T001", ms("10:00:02.000"))]
    assert [l.bol_frame for l in align_labels(rec, labels).lifts] == [50, 250]
    with pytest.raises(LabelError):
        align_labels(rec, [RawLabel("T999", ms("10:00:02.000"))])


def test_cross_midnight_rejected():
    start = TEN_AM_MS + 14 * 3_600_000 - 1000  # 23:59:59
    rec = make_recording(100, start=start)
    with pytest.raises(TimeOrderError):
        align_labels(rec, [])


def test_label_file_round_trip():
    labels = [RawLabel("T001", ms("10:00:04.000"), ms("10:00:05.520"), LabelSource.MoCap),
              RawLabel("T002", ms("10:00:20.000"), None, LabelSource.Video)]
    text = format_labels(labels)
    assert text.splitlines()[0] == "T001,10:00:04.000,10:00:05.520,MoCap"
    assert parse_labels(text) == labels


def test_raw_label_order():
    with pytest.raises(LabelError):
        RawLabel("T001", 1000, 1000)


def test_labeled_recording_bounds():
    rec = make_recording(100)
    with pytest.raises(OutOfRangeError):
        LabeledRecording(rec, (LiftInterval(80, 100),))


# ---------------------------------------------------------------- offsets

def test_apply_time_offset_examples():
    lr = make_labeled(lifts=((50, 88),))
    assert apply_time_offset(lr, 10).lifts == (LiftInterval(60, 98),)
    assert apply_time_offset(lr, 10).applied_offset_frames == 10
    assert apply_time_offset(lr, 0).lifts == lr.lifts
    with pytest.raises(OutOfRangeError):
        apply_time_offset(make_labeled(lifts=((5, 43),)), -10)


@given(st.integers(-40, 40))
def test_time_offset_inverse(k):
    lr = make_labeled(lifts=((50, 88), (200, 238)))
    back = apply_time_offset(apply_time_offset(lr, k), -k)
    assert back.lifts == lr.lifts
    assert back.applied_offset_frames == 0


def test_estimate_offset_examples():
    lr = make_labeled(lifts=((100, 138), (300, 338)))
    ind = lift_indicator(lr)
    delayed = np.concatenate((np.zeros(7), ind[:-7]))  # scores trail the labels by 7
    assert estimate_time_offset(delayed, lr, 25) == -7
    assert estimate_time_offset(ind, lr, 25) == 0
    with pytest.raises(DegenerateSignalError):
        estimate_time_offset(np.full(500, 0.3), lr, 25)
    with pytest.raises(DegenerateSignalError):
        estimate_time_offset(ind, make_labeled(lifts=()), 25)


@given(st.integers(-25, 25))
def test_estimate_recovers_injected_label_shift(s):
    lr = make_labeled(lifts=((100, 138), (300, 338)))
    scores = lift_indicator(lr)
    late = apply_time_offset(lr, s)
    assert estimate_time_offset(scores, late, 25) == s
    assert repair_time_offset(scores, late, 25).lifts == lr.lifts


@given(st.lists(st.floats(0, 1), min_size=60, max_size=60), st.integers(1, 12))
def test_estimate_offset_matches_brute_force(scores, max_lag):
    assume(max(scores) > min(scores))
    lr = make_labeled(60, lifts=((20, 30),))
    assert estimate_time_offset(scores, lr, max_lag) == best_lag(scores, list(lift_indicator(lr)), max_lag)


# ---------------------------------------------------------------- placement

def rot_z(deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def test_placement_fix_examples():
    data = np.zeros((3, 36))
    data[:, 0:3] = (1, 2, 3)
    data[:, 3:6] = (1, 0, 0)
    rec = make_recording(3, data=data)
    out = apply_placement_fix(rec, PlacementFix(SensorId.LeftWrist, rot_z(180)))
    assert np.allclose(out.accel(SensorId.LeftWrist), (-1, -2, 3), atol=1e-12)
    out = apply_placement_fix(rec, PlacementFix(SensorId.LeftWrist, rot_z(90)))
    assert np.allclose(out.gyro(SensorId.LeftWrist), (0, 1, 0), atol=1e-12)
    assert apply_placement_fix(rec, PlacementFix(SensorId.Waist, np.eye(3))) == rec
    # other sensors untouched
    assert np.array_equal(out.data[:, 6:], rec.data[:, 6:])


def test_placement_fix_validation():
    with pytest.raises(ValueError):
        PlacementFix(SensorId.Waist, np.diag([1.0, 1.0, -1.0]))
    rec = restrict_sensors(make_recording(), [SensorId.LeftWrist])
    with pytest.raises(SensorMissingError):
        apply_placement_fix(rec, PlacementFix(SensorId.Waist, np.eye(3)))


def test_rotation_group():
    rots = axis_aligned_rotations()
    assert len(rots) == 24
    assert np.array_equal(rots[0], np.eye(3))
    assert len({r.tobytes() for r in rots}) == 24
    for r in rots:
        assert np.allclose(r.T @ r, np.eye(3)) and np.isclose(np.linalg.det(r), 1.0)


@given(st.integers(0, 23), st.integers(0, 2**32 - 1))
def test_placement_round_trip(idx, seed):
    rec = make_recording(50, data=np.random.default_rng(seed).normal(size=(50, 36)))
    fix = PlacementFix(SensorId.RightUpperArm, axis_aligned_rotations()[idx])
    back = apply_placement_fix(apply_placement_fix(rec, fix), fix.inverse())
    assert np.max(np.abs(back.data - rec.data)) <= 1e-12


def _flipped(sign=-1.0):
    data = resting_data(50)
    data[:, 6 * SensorId.RightWrist.value + 2] *= sign
    return make_recording(50, data=data)


def test_detect_flipped_sensor():
    rec = _flipped()
    fix = detect_placement_anomaly(rec, SensorId.RightWrist, SensorId.UpperBack, (0, 25))
    # brute force: the first rotation (in enumeration order) with minimal residual
    us, ur = np.array([0, 0, -1.0]), np.array([0, 0, 1.0])
    resid = [np.linalg.norm(r @ us - ur) for r in axis_aligned_rotations()]
    expected = axis_aligned_rotations()[int(np.argmin(resid))]
    assert np.array_equal(fix.rotation, expected)
    assert np.array_equal(fix.rotation, np.diag([1.0, -1.0, -1.0]))  # 180 deg about x
    repaired = apply_placement_fix(rec, fix)
    assert np.allclose(repaired.accel(SensorId.RightWrist)[0], (0, 0, GRAVITY))


def test_detect_aligned_and_not_still():
    rec = make_recording(50)
    assert detect_placement_anomaly(rec, SensorId.RightWrist, SensorId.UpperBack, range(0, 25)) is None
    moving = make_recording(50, data=np.zeros((50, 36)))
    with pytest.raises(NotStillError):
        detect_placement_anomaly(moving, SensorId.RightWrist, SensorId.UpperBack, (0, 25))
    with pytest.raises(OutOfRangeError):
        detect_placement_anomaly(rec, SensorId.RightWrist, SensorId.UpperBack, (0, 10))
