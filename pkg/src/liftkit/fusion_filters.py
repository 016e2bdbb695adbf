"""Per-sensor attitude estimation (Mahony, EKF) and the derived-channel transform.

Conventions: quaternions are numpy arrays ``[w, x, y, z]`` rotating body
vectors into a z-up world frame; a resting sensor reads ``(0, 0, +9.81)``.
Neither filter uses a magnetometer, so yaw is unobservable and starts at 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import FilterError, FreefallError, NormError, SingularUpdateError
from .imu_core import GRAVITY, Recording

NORM_TOL = 1e-9
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def _vec(v, n):
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got shape {v.shape}")
    return v


def _unit(q):
    q = _vec(q, 4)
    if abs(np.linalg.norm(q) - 1.0) > NORM_TOL:
        raise NormError(f"quaternion norm {np.linalg.norm(q)!r} is not 1")
    return q


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate(([np.cos(angle / 2)], np.sin(angle / 2) * axis))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = _unit(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate ``v`` by unit quaternion ``q`` (``q v q*``)."""
    return K.quat_rotate(_unit(q), _vec(v, 3))


def integrate_gyro(q, omega, dt: float) -> np.ndarray:
    """First-order quaternion integration of a body rate, renormalized."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return K.integrate_gyro(_vec(q, 4), _vec(omega, 3), float(dt))


def tilt_angle(q, accel) -> float:
    """Angle (rad) between the attitude's expected gravity and a measured accel."""
    g = K.gravity_in_body(_unit(q))
    a = _vec(accel, 3)
    return float(np.arccos(np.clip(g @ a / np.linalg.norm(a), -1.0, 1.0)))


def initial_attitude(accel) -> np.ndarray:
    """Tilt-aligned, zero-yaw attitude from one accelerometer sample."""
    a = _vec(accel, 3)
    if not np.any(a):
        return IDENTITY.copy()
    return K.tilt_quaternion(a)


@dataclass(frozen=True)
class MahonyState:
    q: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    integral_error: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kp: float = 1.0
    ki: float = 0.3
    # corrected body rate used for the last integration; not part of the filter state proper
    rate: np.ndarray = field(default_factory=lambda: np.zeros(3), compare=False)

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("Mahony gains must be non-negative")
        object.__setattr__(self, "q", _unit(self.q))
        e = _vec(self.integral_error, 3)
        if not np.all(np.isfinite(e)):
            raise FilterError("non-finite integral error")
        object.__setattr__(self, "integral_error", e)


@dataclass(frozen=True)
class EkfState:
    q: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    P: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(4))
    gyro_var: float = 0.3 ** 2
    accel_var: float = 0.5 ** 2

    def __post_init__(self):
        if not (self.gyro_var > 0 and self.accel_var > 0):
            raise ValueError("noise variances must be positive")
        object.__setattr__(self, "q", _unit(self.q))
        P = np.ascontiguousarray(self.P, dtype=np.float64)
        if P.shape != (4, 4):
            raise ValueError("P must be 4x4")
        object.__setattr__(self, "P", P)


def mahony_step(s: MahonyState, gyro, accel, dt: float, allow_freefall: bool = False) -> MahonyState:
    """Proportional-integral correction of the gyro rate toward measured gravity."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    q, e, omega, status = K.mahony_update(
        s.q, s.integral_error, _vec(gyro, 3), _vec(accel, 3), float(dt), s.kp, s.ki, allow_freefall
    )
    if status == K.STATUS_FREEFALL:
        raise FreefallError("zero accelerometer vector")
    return MahonyState(q, e, s.kp, s.ki, omega)


def ekf_step(s: EkfState, gyro, accel, dt: float) -> EkfState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    q, P, status = K.ekf_update(s.q, s.P, _vec(gyro, 3), _vec(accel, 3), float(dt), s.gyro_var, s.accel_var)
    if status == K.STATUS_SINGULAR:
        raise SingularUpdateError("innovation covariance is singular")
    return EkfState(q, P, s.gyro_var, s.accel_var)


class FilterType(enum.Enum):
    NONE = "none"
    MAHONY = "mahony"
    EKF = "ekf"


@dataclass(frozen=True)
class FilterKind:
    """Filter choice plus its parameters (noise levels are standard deviations)."""

    type: FilterType = FilterType.NONE
    kp: float = 1.0
    ki: float = 0.3
    gyro_noise: float = 0.3
    accel_noise: float = 0.5
    allow_freefall: bool = False

    def __post_init__(self):
        object.__setattr__(self, "type", FilterType(self.type))
        if self.type is FilterType.MAHONY and (self.kp < 0 or self.ki < 0):
            raise ValueError("Mahony gains must be non-negative")
        if self.type is FilterType.EKF and not (self.gyro_noise > 0 and self.accel_noise > 0):
            raise ValueError("EKF noise levels must be positive")

    @property
    def name(self) -> str:
        return self.type.value

    @classmethod
    def parse(cls, text: str, **params) -> "FilterKind":
        return cls(FilterType(text.strip().lower()), **params)


NO_FILTER = FilterKind()


def run_filter(accel: np.ndarray, gyro: np.ndarray, rate_hz: float, kind: FilterKind):
    """Filter one sensor's stream. Returns ``(quaternions (n,4), rates (n,3))``."""
    acc = np.ascontiguousarray(accel, dtype=np.float64)
    gyr = np.ascontiguousarray(gyro, dtype=np.float64)
    dt = 1.0 / rate_hz
    q0 = initial_attitude(acc[0])
    if kind.type is FilterType.MAHONY:
        quats, rates, _, bad = K.mahony_run(acc, gyr, dt, kind.kp, kind.ki, q0, np.zeros(3), kind.allow_freefall)
        if bad >= 0:
            raise FreefallError("zero accelerometer vector", frame=int(bad))
        return quats, rates
    if kind.type is FilterType.EKF:
        quats, _, bad = K.ekf_run(acc, gyr, dt, kind.gyro_noise ** 2, kind.accel_noise ** 2, q0, 0.01 * np.eye(4))
        if bad >= 0:
            raise SingularUpdateError("innovation covariance is singular", frame=int(bad))
        return quats, gyr.copy()
    raise ValueError("run_filter needs a Mahony or EKF kind")


def rotate_many(quats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    u = quats[:, 1:]
    t = 2.0 * np.cross(u, vecs)
    return vecs + quats[:, :1] * t + np.cross(u, t)


def apply_filter(recording: Recording, kind: FilterKind) -> Recording:
    """Replace each sensor's six channels by filter-derived ones.

    Per sensor and frame: world-frame linear acceleration (gravity removed)
    followed by the angular rate (Mahony: PI-corrected rate, EKF: raw gyro).
    The channel layout is unchanged, so models see the same shape.
    """
    if kind.type is FilterType.NONE:
        return recording
    out = np.empty_like(recording.data)
    gravity = np.array([0.0, 0.0, GRAVITY])
    for sensor in recording.active_sensors:
        c = recording.column(sensor)
        acc = recording.accel(sensor)
        quats, rates = run_filter(acc, recording.gyro(sensor), recording.sample_rate_hz, kind)
        out[:, c:c + 3] = rotate_many(quats, np.ascontiguousarray(acc)) - gravity
        out[:, c + 3:c + 6] = rates
    return recording.with_data(out)
