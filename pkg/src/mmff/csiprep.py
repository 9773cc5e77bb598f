"""Beamspace preprocessing of sub-6 GHz CSI.

CSI is projected onto a fixed steering dictionary, converted into a
per-beam subcarrier-averaged rate, and all but the strongest beams are
zeroed before the angular feature extractor sees it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import Csi, steering_matrix


class UndefinedProportionError(ValueError):
    """Raised when the total beam energy is zero."""


@dataclass(frozen=True)
class BeamDictionary:
    angles: np.ndarray
    vectors: np.ndarray  # B x n, row b is steering_vector(angles[b], n)

    @property
    def size(self):
        return len(self.angles)


@dataclass(frozen=True)
class BeamEnergy:
    values: np.ndarray


def build_dictionary(B: int = 64, n: int = 64) -> BeamDictionary:
    """Steering dictionary uniform in cos(angle) over [-1 + 1/B, 1 - 1/B]."""
    if B < 2:
        raise ValueError("dictionary needs at least two beams")
    cos_grid = np.linspace(-1 + 1 / B, 1 - 1 / B, B)
    angles = np.arccos(cos_grid)
    return BeamDictionary(angles, steering_matrix(angles, n))


def beam_energy_map(csi: Csi, dictionary: BeamDictionary, rho: float) -> BeamEnergy:
    H = np.asarray(csi.H)
    if dictionary.vectors.shape[1] != H.shape[0]:
        raise ValueError(
            f"dictionary length {dictionary.vectors.shape[1]} != antennas {H.shape[0]}")
    proj = dictionary.vectors @ H  # d_i^T H[k], no conjugation
    power = proj.real ** 2 + proj.imag ** 2
    return BeamEnergy(np.log2(1.0 + rho * power).mean(axis=1))


def topk_indices(values, k):
    # stable sort: lowest index wins ties at the k-th value
    return np.argsort(-np.asarray(values), kind="stable")[:k]


def zero_force_topk(energy: BeamEnergy, k: int = 8) -> BeamEnergy:
    values = np.asarray(energy.values)
    if not 1 <= k <= len(values):
        raise ValueError(f"k={k} outside [1, {len(values)}]")
    out = np.zeros_like(values)
    keep = topk_indices(values, k)
    out[keep] = values[keep]
    return BeamEnergy(out)


def topk_proportion(energy: BeamEnergy, k: int) -> float:
    values = np.asarray(energy.values, dtype=float)
    if not 1 <= k <= len(values):
        raise ValueError(f"k={k} outside [1, {len(values)}]")
    # one sequential cumsum over the sorted energies keeps the ratio monotone in k
    # and exactly 1 at k = len(values)
    running = np.cumsum(np.sort(values)[::-1])
    total = running[-1]
    if total <= 0:
        raise UndefinedProportionError("total beam energy is zero")
    return float(running[k - 1] / total)


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def nearest_beam(dictionary: BeamDictionary, theta: float) -> int:
    return int(np.argmin(np.abs(np.cos(dictionary.angles) - math.cos(theta))))
