"""Next-slot angle predictions from each scheme on the shared test slots."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .baselines import (angle_range_observations, position_observations, track_ekf,
                        track_extrapolate, track_kf)
from .channel import ArrayConfig
from .dataset import STREAM_BASELINE_NOISE, Dataset, make_samples
from .evaluation import RunMetrics, angle_error_series, rate_series
from .predictor import position_to_angle, predict_pairs, sample_pairs, split_pairs
from .scene import make_rng, true_angle

SCHEMES = ("mmff", "kf", "ekf", "extrapolate", "persistence", "oracle")


class SchemeError(ValueError):
    pass


@dataclass
class EvalSlots:
    """Test-split pairs; the prediction target is the slot after ``curr``."""
    samples: list
    pairs: np.ndarray
    realization: np.ndarray
    slot: np.ndarray          # slot n within its realization (predict n + 1)
    global_slot: np.ndarray   # global index of the predicted slot
    theta: np.ndarray         # true angle at n + 1
    d: np.ndarray
    xy: np.ndarray            # true position at n + 1


def eval_slots(ds: Dataset, samples=None) -> EvalSlots:
    samples = samples if samples is not None else make_samples(ds)
    _, test = split_pairs(sample_pairs(samples), ds.config.train.train_fraction)
    if not test:
        raise SchemeError("the test split is empty")
    pairs = np.array(test)
    cur = [samples[c] for c in pairs[:, 1]]
    m = ds.config.experiment.n_slots
    return EvalSlots(
        samples=samples,
        pairs=pairs,
        realization=np.array([s.realization for s in cur]),
        slot=np.array([s.slot for s in cur]),
        global_slot=np.array([s.realization * m + s.slot + 1 for s in cur]),
        theta=np.array([s.theta_next for s in cur]),
        d=np.array([s.d_next for s in cur]),
        xy=np.array([s.target for s in cur], dtype=float),
    )


def _baseline_streams(ds, r):
    return (make_rng(ds.config.seed, r, STREAM_BASELINE_NOISE, 0),
            make_rng(ds.config.seed, r, STREAM_BASELINE_NOISE, 1))


def track_positions(ds: Dataset, scheme):
    """Per-realization ``(n_slots, 2)`` arrays; row ``n`` predicts slot ``n + 1``."""
    cfg, b = ds.config, ds.config.baselines
    dt = cfg.scene.slot_duration
    out = []
    for r, real in enumerate(ds.realizations):
        pos_rng, td_rng = _baseline_streams(ds, r)
        traj = real.trajectory
        obs_xy = position_observations(traj, b.kf_obs_sigma, pos_rng)
        if scheme == "kf":
            out.append(track_kf(obs_xy, dt, b.kf_obs_sigma, b.kf_accel_sigma))
        elif scheme == "extrapolate":
            out.append(track_extrapolate(obs_xy, b.history_window))
        elif scheme == "ekf":
            obs = angle_range_observations(traj, cfg.scene, b.ekf_sigma_theta, b.ekf_sigma_d, td_rng)
            out.append(track_ekf(obs, cfg.scene, dt, b.ekf_sigma_theta, b.ekf_sigma_d,
                                 b.ekf_accel_sigma))
        else:
            raise SchemeError(f"{scheme} is not a tracking baseline")
    return out


def predict_positions(ds: Dataset, slots: EvalSlots, scheme, model=None):
    """Predicted next-slot positions for the position-based schemes."""
    if scheme == "mmff":
        if model is None:
            raise SchemeError("the mmff scheme needs a trained checkpoint")
        return predict_pairs(model, slots.samples, slots.pairs)
    tracks = track_positions(ds, scheme)
    return np.array([tracks[r][n] for r, n in zip(slots.realization, slots.slot)])


def predict_angles(ds: Dataset, slots: EvalSlots, scheme, model=None):
    sc = ds.config.scene
    if scheme == "oracle":
        return slots.theta.copy()
    if scheme == "persistence":
        return np.array([true_angle(ds.realizations[r].trajectory.states[n], sc)
                         for r, n in zip(slots.realization, slots.slot)])
    if scheme not in SCHEMES:
        raise SchemeError(f"unknown scheme {scheme!r}")
    xy = predict_positions(ds, slots, scheme, model)
    return np.array([position_to_angle(p, sc) for p in xy])


def antenna_config(arrays: ArrayConfig, n):
    """Symmetric mmWave array with ``n`` transmit and ``n`` receive elements."""
    return replace(arrays, n_tx_mm=int(n), n_rx_mm=int(n))


def run_metrics(ds: Dataset, slots: EvalSlots, scheme, theta_hat, arrays: ArrayConfig, scenario=""):
    abs_err, rel_err = angle_error_series(theta_hat, slots.theta)
    rates = rate_series(theta_hat, np.column_stack([slots.theta, slots.d]), ds.config.budget, arrays)
    return RunMetrics(scheme, abs_err, rel_err, rates, slots.global_slot,
                      (arrays.n_tx_mm, arrays.n_rx_mm), ds.config.seed, scenario)
