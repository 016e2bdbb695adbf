import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from liftkit.imu_core import ALL_SENSORS, GRAVITY, LabeledRecording, LiftInterval, Recording

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# 10:00:00.000 UTC on 2020-09-14
TEN_AM_MS = 1_600_077_600_000


def resting_data(n_frames, n_sensors=6, seed=None, noise=0.0):
    data = np.zeros((n_frames, 6 * n_sensors))
    data[:, 2::6] = GRAVITY
    if seed is not None:
        data += noise * np.random.default_rng(seed).standard_normal(data.shape)
    return data


def make_recording(n_frames=500, rate=25.0, start=TEN_AM_MS, sensors=ALL_SENSORS, trial="T001", data=None):
    if data is None:
        data = resting_data(n_frames, len(sensors))
    return Recording("S01", trial, start, rate, data, tuple(sensors))


def make_labeled(n_frames=500, lifts=((100, 138),), **kw):
    rec = make_recording(n_frames, **kw)
    return LabeledRecording(rec, tuple(LiftInterval(a, b) for a, b in lifts))


@pytest.fixture
def recording():
    return make_recording()


# One "ACCEPTANCE n ... PASS/FAIL" line per criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
