"""Hot loops: quaternion attitude filters and the LSTM recurrence.

Everything here sticks to the numpy subset numba compiles, takes and returns
plain float64 arrays, and reports failures through integer status codes
(numba cannot raise our exception classes with runtime context). The public
wrappers in :mod:`liftkit.fusion_filters` and :mod:`liftkit.liftnet` turn
those codes into exceptions.

Quaternions are ``[w, x, y, z]`` and rotate body vectors into the world frame.
"""

import numpy as np

from ._jit import jit

STATUS_OK = 0
STATUS_FREEFALL = 1
STATUS_SINGULAR = 2


# --------------------------------------------------------------------------
# quaternion algebra
# --------------------------------------------------------------------------

@jit
def quat_mul(p, q):
    pw, px, py, pz = p[0], p[1], p[2], p[3]
    qw, qx, qy, qz = q[0], q[1], q[2], q[3]
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


@jit
def quat_normalize(q):
    return q / np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


@jit
def cross(a, b):
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


@jit
def quat_rotate(q, v):
    # v + 2w (u x v) + 2 u x (u x v)
    u = q[1:4]
    t = 2.0 * cross(u, v)
    return v + q[0] * t + cross(u, t)


@jit
def gravity_in_body(q):
    """World +z expressed in the body frame (the expected normalized accel)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    return np.array([
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    ])


@jit
def gravity_jacobian(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    return np.array([
        [-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y],
        [2.0 * w, -2.0 * x, -2.0 * y, 2.0 * z],
    ])


@jit
def integrate_gyro(q, omega, dt):
    rate = np.array([0.0, omega[0], omega[1], omega[2]])
    return quat_normalize(q + 0.5 * dt * quat_mul(q, rate))


@jit
def tilt_quaternion(accel):
    """Attitude with zero yaw whose expected gravity matches ``accel``."""
    roll = np.arctan2(accel[1], accel[2])
    pitch = np.arctan2(-accel[0], np.sqrt(accel[1] * accel[1] + accel[2] * accel[2]))
    cr, sr = np.cos(0.5 * roll), np.sin(0.5 * roll)
    cp, sp = np.cos(0.5 * pitch), np.sin(0.5 * pitch)
    return np.array([cr * cp, sr * cp, cr * sp, -sr * sp])


# --------------------------------------------------------------------------
# Mahony
# --------------------------------------------------------------------------

@jit
def mahony_update(q, e_int, gyro, accel, dt, kp, ki, allow_freefall):
    """One Mahony step. Returns (q, integral_error, corrected_rate, status)."""
    norm = np.sqrt(accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2])
    if norm == 0.0:
        if allow_freefall:
            return integrate_gyro(q, gyro, dt), e_int.copy(), gyro.copy(), STATUS_OK
        return q.copy(), e_int.copy(), gyro.copy(), STATUS_FREEFALL
    e = cross(accel / norm, gravity_in_body(q))
    e_new = e_int + ki * e * dt
    omega = gyro + kp * e + e_new
    return integrate_gyro(q, omega, dt), e_new, omega, STATUS_OK


@jit
def mahony_run(acc, gyr, dt, kp, ki, q0, e0, allow_freefall):
    """``quats[k]`` is the attitude at sample k; the step at sample k (its gyro
    and accel) carries it to k+1, and ``rates[k]`` is that step's corrected rate."""
    n = acc.shape[0]
    quats = np.empty((n, 4))
    rates = np.empty((n, 3))
    q = q0.copy()
    e = e0.copy()
    for k in range(n):
        quats[k] = q
        q, e, omega, status = mahony_update(q, e, gyr[k], acc[k], dt, kp, ki, allow_freefall)
        if status != STATUS_OK:
            return quats, rates, e, k
        rates[k] = omega
    return quats, rates, e, -1


# --------------------------------------------------------------------------
# EKF
# --------------------------------------------------------------------------

@jit
def _inv3(s):
    a, b, c = s[0, 0], s[0, 1], s[0, 2]
    d, e, f = s[1, 0], s[1, 1], s[1, 2]
    g, h, i = s[2, 0], s[2, 1], s[2, 2]
    co = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    det = a * co[0, 0] + b * co[1, 0] + c * co[2, 0]
    return co / det, det


@jit
def ekf_update(q, P, gyro, accel, dt, gyro_var, accel_var):
    """Predict with the gyro, correct with the normalized accel.

    Returns (q, P, status).
    """
    wx, wy, wz = gyro[0], gyro[1], gyro[2]
    omega_mat = np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])
    F = np.eye(4) + 0.5 * dt * omega_mat
    w, x, y, z = q[0], q[1], q[2], q[3]
    W = 0.5 * dt * np.array([
        [-x, -y, -z],
        [w, -z, y],
        [z, w, -x],
        [-y, x, w],
    ])
    q_pred = integrate_gyro(q, gyro, dt)
    P_pred = F @ P @ F.T + gyro_var * (W @ W.T)

    norm = np.sqrt(accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2])
    if norm == 0.0:
        return q_pred, 0.5 * (P_pred + P_pred.T), STATUS_OK
    H = gravity_jacobian(q_pred)
    innov = accel / norm - gravity_in_body(q_pred)
    S = H @ P_pred @ H.T + accel_var * np.eye(3)
    S_inv, det = _inv3(S)
    scale = (S[0, 0] + S[1, 1] + S[2, 2]) / 3.0
    if not np.isfinite(det) or det <= 1e-12 * scale * scale * scale:
        return q_pred, P_pred, STATUS_SINGULAR
    K = P_pred @ H.T @ S_inv
    q_new = quat_normalize(q_pred + K @ innov)
    P_new = (np.eye(4) - K @ H) @ P_pred
    return q_new, 0.5 * (P_new + P_new.T), STATUS_OK


@jit
def ekf_run(acc, gyr, dt, gyro_var, accel_var, q0, P0):
    """``quats[k]`` is the posterior at sample k: predicted from k-1 with
    ``gyr[k-1]``, then corrected with ``acc[k]``. ``q0`` is the estimate at 0."""
    n = acc.shape[0]
    quats = np.empty((n, 4))
    q = q0.copy()
    P = P0.copy()
    quats[0] = q
    for k in range(1, n):
        q, P, status = ekf_update(q, P, gyr[k - 1], acc[k], dt, gyro_var, accel_var)
        if status != STATUS_OK:
            return quats, P, k
        quats[k] = q
    return quats, P, -1


# --------------------------------------------------------------------------
# LSTM
# --------------------------------------------------------------------------
# Left as plain numpy: the time is in the matrix products, which BLAS already
# does well, and compiling these was slower in the benchmark.

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(X, Wx, Wh, b):
    """Run the recurrence over a time-major batch.

    X is ``(T, B, C)``; gate blocks in ``Wx``/``Wh``/``b`` are ordered
    input, forget, cell, output. Returns hidden states ``(T+1, B, H)``,
    cell states ``(T+1, B, H)`` and activated gates ``(T, B, 4H)``.
    """
    T, B = X.shape[0], X.shape[1]
    H = Wh.shape[1]
    WxT = np.ascontiguousarray(Wx.T)
    WhT = np.ascontiguousarray(Wh.T)
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    for t in range(T):
        z = X[t] @ WxT + hs[t] @ WhT + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
    return hs, cs, gates


def lstm_backward(X, Wx, Wh, hs, cs, gates, dh_last):
    """Backpropagation through time from a gradient on the final hidden state.

    Returns summed (not averaged) ``dWx, dWh, db`` and the input gradient
    ``dX`` with the shape of ``X``.
    """
    T, B, C = X.shape[0], X.shape[1], X.shape[2]
    H = Wh.shape[1]
    dWx = np.zeros((4 * H, C))
    dWh = np.zeros((4 * H, H))
    db = np.zeros(4 * H)
    dX = np.empty((T, B, C))
    dh = dh_last.copy()
    dc = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dzT = np.ascontiguousarray(dz.T)
        dWx += dzT @ X[t]
        dWh += dzT @ hs[t]
        db += dz.sum(axis=0)
        dX[t] = dz @ Wx
        dh = dz @ Wh
        dc = dc * f
    return dWx, dWh, db, dX
