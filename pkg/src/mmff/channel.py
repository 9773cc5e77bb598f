"""Steering vectors, geometric sub-6 GHz CSI, and mmWave LoS link budget.

Phase convention everywhere: element ``m`` of a steering vector is
``exp(-j*pi*m*cos(theta)) / sqrt(n)`` (half-wavelength ULA).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import SceneConfig, VehicleState, angle_from_rsu, rsu_distance

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayConfig:
    n_tx_mm: int = 16
    n_rx_mm: int = 16
    n_tx_sub6: int = 64
    n_rx_sub6: int = 1
    spacing: float = 0.5
    fc_mm: float = 28e9
    fc_sub6: float = 5e9
    n_subcarriers: int = 512
    subcarrier_limit: int = 64
    bandwidth_sub6: float = 0.5e9
    alpha_sub6: float = 30.0
    max_paths: int = 5
    reflection_loss: float = 0.3

    def __post_init__(self):
        counts = (self.n_tx_mm, self.n_rx_mm, self.n_tx_sub6, self.n_rx_sub6,
                  self.n_subcarriers, self.subcarrier_limit, self.max_paths)
        if min(counts) < 1:
            raise ValueError("antenna, subcarrier and path counts must be >= 1")
        if self.spacing != 0.5:
            raise ValueError("only half-wavelength spacing is supported")
        if self.subcarrier_limit > self.n_subcarriers:
            raise ValueError("subcarrier_limit exceeds n_subcarriers")

    def subcarrier_frequencies(self):
        k = np.arange(self.subcarrier_limit)
        K = self.n_subcarriers
        return self.fc_sub6 + (k - K / 2) * (self.bandwidth_sub6 / K)


@dataclass(frozen=True)
class PathSet:
    gains: np.ndarray
    aods: np.ndarray
    delays: np.ndarray

    def __len__(self):
        return len(self.gains)


@dataclass(frozen=True)
class Csi:
    H: np.ndarray  # antennas x subcarriers


@dataclass(frozen=True)
class LinkBudget:
    p: float = 1.0
    sigma2: float = 10 ** (-1.5)
    alpha_ref: float = 5.0

    def __post_init__(self):
        if self.p <= 0 or self.sigma2 <= 0 or self.alpha_ref <= 0:
            raise ValueError("p, sigma2 and alpha_ref must be positive")


def steering_vector(theta, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    m = np.arange(n)
    return np.exp(-1j * math.pi * m * math.cos(theta)) / math.sqrt(n)


def steering_matrix(thetas, n: int) -> np.ndarray:
    """Rows are ``steering_vector(theta, n)`` for each angle."""
    if n < 1:
        raise ValueError("antenna count must be >= 1")
    c = np.cos(np.asarray(thetas, dtype=float))[:, None]
    return np.exp(-1j * math.pi * np.arange(n)[None, :] * c) / math.sqrt(n)


def los_coefficient(alpha_ref, d, fc):
    return alpha_ref / d * np.exp(2j * math.pi * fc * d / SPEED_OF_LIGHT)


def propagation_paths(cfg: ArrayConfig, scene: SceneConfig, state: VehicleState, rng=None) -> PathSet:
    """LoS path plus up to ``max_paths - 1`` single-bounce scatterer paths.

    Scatterer paths are ranked by total length; ``rng`` draws one uniform
    reflection phase per candidate scatterer (zero phase when ``rng`` is None).
    """
    d = rsu_distance(state.x, state.y, scene)
    theta = angle_from_rsu(state.x, state.y, scene)
    gains = [los_coefficient(cfg.alpha_sub6, d, cfg.fc_sub6)]
    aods = [theta]
    delays = [d / SPEED_OF_LIGHT]

    rx, ry = scene.rsu_position
    cand = []
    phases = (rng.uniform(0.0, 2 * math.pi, len(scene.scatterers)) if rng is not None
              else np.zeros(len(scene.scatterers)))
    for (sx, sy, _), phase in zip(scene.scatterers, phases):
        leg1 = math.hypot(sx - rx, sy - ry)
        leg2 = math.hypot(state.x - sx, state.y - sy)
        if leg1 == 0.0:
            continue
        cand.append((leg1 + leg2, angle_from_rsu(sx, sy, scene), phase))
    cand.sort(key=lambda c: c[0])
    for length, aod, phase in cand[: cfg.max_paths - 1]:
        g = cfg.reflection_loss * los_coefficient(cfg.alpha_sub6, length, cfg.fc_sub6)
        gains.append(g * np.exp(1j * phase))
        aods.append(aod)
        delays.append(length / SPEED_OF_LIGHT)
    return PathSet(np.array(gains), np.array(aods), np.array(delays))


def csi_from_paths(cfg: ArrayConfig, paths: PathSet) -> Csi:
    """``H[:, k] = sum_p gain_p * exp(-j 2 pi f_k tau_p) * conj(a(aod_p))``."""
    f = cfg.subcarrier_frequencies()
    A = np.conj(steering_matrix(paths.aods, cfg.n_tx_sub6))  # paths x antennas
    phase = np.exp(-2j * math.pi * paths.delays[:, None] * f[None, :])  # paths x K
    H = A.T @ (paths.gains[:, None] * phase)
    H.setflags(write=False)
    return Csi(H)


def synth_sub6_csi(cfg: ArrayConfig, scene: SceneConfig, state: VehicleState, rng=None):
    paths = propagation_paths(cfg, scene, state, rng)
    return csi_from_paths(cfg, paths), paths


def doppler(v, theta, fc):
    if v < 0:
        raise ValueError("speed must be non-negative")
    return v * math.cos(theta) * fc / SPEED_OF_LIGHT


def array_gain(cfg: ArrayConfig):
    return math.sqrt(cfg.n_tx_mm * cfg.n_rx_mm)


def snr(theta_true, theta_hat, budget: LinkBudget, cfg: ArrayConfig, d) -> float:
    """Received SNR with both ends steered to ``theta_hat`` while the LoS is at ``theta_true``."""
    if d <= 0:
        raise ValueError("distance must be positive")
    if theta_hat == theta_true:
        # unit-norm inner products are exactly 1 when aligned
        return snr_upper_bound(budget, cfg, d)
    alpha = los_coefficient(budget.alpha_ref, d, cfg.fc_mm)
    b_hat = steering_vector(theta_hat, cfg.n_rx_mm)
    b = steering_vector(theta_true, cfg.n_rx_mm)
    a = steering_vector(theta_true, cfg.n_tx_mm)
    a_hat = steering_vector(theta_hat, cfg.n_tx_mm)
    amp = array_gain(cfg) * alpha * np.vdot(b_hat, b) * np.vdot(a, a_hat)
    return float(budget.p * abs(amp) ** 2 / budget.sigma2)


def snr_upper_bound(budget: LinkBudget, cfg: ArrayConfig, d) -> float:
    if d <= 0:
        raise ValueError("distance must be positive")
    alpha = los_coefficient(budget.alpha_ref, d, cfg.fc_mm)
    return float(budget.p * abs(array_gain(cfg) * alpha) ** 2 / budget.sigma2)


def achievable_rate(snr_value):
    if np.any(np.asarray(snr_value) < 0):
        raise ValueError("snr must be non-negative")
    return np.log2(1.0 + snr_value)
