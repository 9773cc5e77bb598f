"""Classical trackers: constant-velocity KF, (theta, d) EKF, and line-fit extrapolation.

All filters carry a Cartesian state ``(x, y, vx, vy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .scene import DegenerateGeometryError, SceneConfig, Trajectory, angle_from_rsu, rsu_distance

PSD_TOL = 1e-9
H_POS = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def cv_transition(dt):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def cv_process_noise(dt, accel_sigma):
    """Discrete white-noise-acceleration covariance for both axes."""
    q = accel_sigma ** 2
    Q = np.zeros((4, 4))
    for p, v in ((0, 2), (1, 3)):
        Q[p, p] = q * dt ** 4 / 4
        Q[p, v] = Q[v, p] = q * dt ** 3 / 2
        Q[v, v] = q * dt ** 2
    return Q


def check_psd(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
        raise ValueError(f"{name} must be a finite square matrix")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > PSD_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(M).min() < -PSD_TOL * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return M


@dataclass
class KfState:
    state: np.ndarray
    covariance: np.ndarray
    process_noise: np.ndarray
    obs_noise: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.state = np.asarray(self.state, dtype=float).reshape(4)

    def validate(self):
        check_psd(self.covariance, "covariance")
        check_psd(self.process_noise, "process_noise")
        check_psd(self.obs_noise, "obs_noise")


@dataclass
class EkfState(KfState):
    """KF state plus the RSU geometry the (theta, d) observation refers to."""
    origin: tuple = (0.0, 0.0)
    axis: tuple = (1.0, 0.0)

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.diag(np.asarray(self.obs_noise)) <= 0):
            raise ValueError("observation noise variances must be positive")


def _predict(st: KfState):
    F = cv_transition(st.dt)
    return F @ st.state, F @ st.covariance @ F.T + st.process_noise


def _update(x, P, z, zhat, Hm, R):
    S = Hm @ P @ Hm.T + R
    K = P @ Hm.T @ np.linalg.pinv(S)
    x = x + K @ (z - zhat)
    IKH = np.eye(len(x)) - K @ Hm
    P = IKH @ P @ IKH.T + K @ R @ K.T  # Joseph form
    return x, 0.5 * (P + P.T)


def kf_step(st: KfState, obs):
    """Fold in a noisy position ``obs``; return the new state and the next-slot position."""
    st.validate()
    x, P = _predict(st)
    z = np.asarray(obs, dtype=float).reshape(2)
    x, P = _update(x, P, z, H_POS @ x, H_POS, st.obs_noise)
    out = replace(st, state=x, covariance=P)
    return out, cv_transition(st.dt)[:2] @ x


def observe_angle_range(xy, origin, axis):
    """Signed angle from ``axis`` and range of ``xy`` seen from ``origin``."""
    px, py = xy[0] - origin[0], xy[1] - origin[1]
    along = axis[0] * px + axis[1] * py
    cross = axis[0] * py - axis[1] * px
    return np.array([math.atan2(cross, along), math.hypot(px, py)])


def angle_range_jacobian(xy, origin, axis):
    px, py = xy[0] - origin[0], xy[1] - origin[1]
    d2 = px * px + py * py
    if d2 < 1e-18:
        raise DegenerateGeometryError("Jacobian undefined at the RSU position")
    d = math.sqrt(d2)
    ax, ay = axis
    along = ax * px + ay * py
    cross = ax * py - ay * px
    J = np.zeros((2, 4))
    J[0, 0] = (-along * ay - cross * ax) / d2
    J[0, 1] = (along * ax - cross * ay) / d2
    J[1, 0] = px / d
    J[1, 1] = py / d
    return J


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def ekf_step(st: EkfState, obs):
    """Fold in a noisy ``(theta, d)`` observation; return state and next-slot position."""
    st.validate()
    x, P = _predict(st)
    J = angle_range_jacobian(x[:2], st.origin, st.axis)
    zhat = observe_angle_range(x[:2], st.origin, st.axis)
    z = np.asarray(obs, dtype=float).reshape(2)
    # compare angles on the circle so a wrap near +-pi is not a 2pi innovation
    z = np.array([zhat[0] + _wrap(z[0] - zhat[0]), z[1]])
    x, P = _update(x, P, z, zhat, J, st.obs_noise)
    out = replace(st, state=x, covariance=P)
    return out, cv_transition(st.dt)[:2] @ x


def extrapolate_step(history):
    """Least-squares line through the last ``m`` points, evaluated one step past them."""
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape[1] != 2:
        raise ValueError("history must be an (m, 2) array")
    m = h.shape[0]
    if m < 2:
        raise ValueError("extrapolation needs at least 2 points")
    t = np.arange(m, dtype=float)
    tc = t - t.mean()
    mean = h.mean(axis=0)
    slope = tc @ (h - mean) / (tc @ tc)
    return mean + slope * (m - t.mean())


# trackers over a whole trajectory ------------------------------------------

def position_observations(traj: Trajectory, sigma, rng):
    return traj.xy + rng.normal(0.0, sigma, size=traj.xy.shape)


def angle_range_observations(traj: Trajectory, cfg: SceneConfig, sigma_theta, sigma_d, rng):
    xy = traj.xy
    theta = np.array([angle_from_rsu(x, y, cfg) for x, y in xy])
    d = np.array([rsu_distance(x, y, cfg) for x, y in xy])
    noise = rng.standard_normal((len(xy), 2))
    return np.column_stack([theta + sigma_theta * noise[:, 0], d + sigma_d * noise[:, 1]])


def _initial(obs_xy, dt):
    v0 = (obs_xy[1] - obs_xy[0]) / dt
    return np.array([obs_xy[1][0], obs_xy[1][1], v0[0], v0[1]])


def _init_cov(pos_var, dt):
    vel_var = 2 * pos_var / dt ** 2
    return np.diag([pos_var, pos_var, vel_var, vel_var])


def track_kf(obs_xy, dt, obs_sigma, accel_sigma):
    """Predicted position for slot ``n + 1`` after each observation ``n``.

    Row ``n`` is NaN for the first two slots (used for initialization),
    so ``out[n]`` is defined for ``n >= 1``.
    """
    obs_xy = np.asarray(obs_xy, dtype=float)
    out = np.full_like(obs_xy, np.nan)
    st = KfState(_initial(obs_xy, dt), _init_cov(obs_sigma ** 2, dt),
                 cv_process_noise(dt, accel_sigma), np.eye(2) * obs_sigma ** 2, dt)
    out[1] = cv_transition(dt)[:2] @ st.state
    for n in range(2, len(obs_xy)):
        st, out[n] = kf_step(st, obs_xy[n])
    return out


def track_ekf(obs_td, cfg: SceneConfig, dt, sigma_theta, sigma_d, accel_sigma):
    """Like :func:`track_kf` but from ``(theta, d)`` observations."""
    obs_td = np.asarray(obs_td, dtype=float)
    origin, axis = cfg.rsu_position, cfg.rsu_array_axis
    # invert the first two observations to seed the state
    pts = []
    for th, d in obs_td[:2]:
        c, s = math.cos(th), math.sin(th)
        pts.append((origin[0] + d * (axis[0] * c - axis[1] * s),
                    origin[1] + d * (axis[1] * c + axis[0] * s)))
    pts = np.array(pts)
    pos_var = sigma_d ** 2 + (sigma_theta * obs_td[1, 1]) ** 2
    out = np.full((len(obs_td), 2), np.nan)
    st = EkfState(_initial(pts, dt), _init_cov(pos_var, dt), cv_process_noise(dt, accel_sigma),
                  np.diag([sigma_theta ** 2, sigma_d ** 2]), dt, origin=origin, axis=axis)
    out[1] = cv_transition(dt)[:2] @ st.state
    for n in range(2, len(obs_td)):
        st, out[n] = ekf_step(st, obs_td[n])
    return out


def track_extrapolate(obs_xy, m=5):
    """Line-fit prediction from up to ``m`` most recent observations (fewer at the start)."""
    obs_xy = np.asarray(obs_xy, dtype=float)
    out = np.full_like(obs_xy, np.nan)
    for n in range(1, len(obs_xy)):
        out[n] = extrapolate_step(obs_xy[max(0, n + 1 - m):n + 1])
    return out
