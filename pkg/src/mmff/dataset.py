"""Dataset synthesis and on-disk layout.

A dataset directory holds::

    manifest.json     format version, counts, tensor shapes/dtypes, config hash, seed
    config.ini        canonical copy of the generating config
    trajectory.csv    slot,x,y,v,lane,theta_true (slot counts across realizations)
    grid.bin depth.bin csi.bin beam_energy.bin   one tensor record per slot

Realization ``r`` occupies slots ``[r * n_slots, (r + 1) * n_slots)``.  Each
realization draws from its own seeded streams, so they can be simulated in
any order or in parallel and still merge to identical bytes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensorio
from .channel import synth_sub6_csi
from .config import ExperimentConfig, canonical_text, config_hash, parse_config_text
from .csiprep import (BeamEnergy, beam_energy_map, build_dictionary, db_to_linear,
                      zero_force_topk)
from .predictor import SlotSample, minmax_normalize_depth, zscore_normalize
from .scene import (Trajectory, generate_trajectory, make_rng, read_trajectory_csv,
                    render_depth, render_grid, rsu_distance, true_angle,
                    write_trajectory_csv)

FORMAT_VERSION = 1

# independent RNG streams per realization
STREAM_TRAJECTORY = 0
STREAM_CHANNEL = 1
STREAM_DEPTH_NOISE = 2
STREAM_BASELINE_NOISE = 3

TENSORS = {  # name -> dtype code
    "grid": 1,
    "depth": 2,
    "csi": 3,
    "beam_energy": 2,
}


class DataError(ValueError):
    """Dataset missing, corrupt, or inconsistent with its manifest/config."""


@dataclass
class Realization:
    trajectory: Trajectory
    grids: np.ndarray
    depths: np.ndarray
    csi: np.ndarray
    beam_energy: np.ndarray


@dataclass
class Dataset:
    config: ExperimentConfig
    realizations: list

    @property
    def trajectories(self):
        return [r.trajectory for r in self.realizations]


def worker_count(n_tasks):
    cap = os.environ.get("MMFF_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, min(n, n_tasks))


def simulate_realization(cfg: ExperimentConfig, index: int) -> Realization:
    sc = cfg.scene
    traj = generate_trajectory(sc, cfg.experiment.n_slots,
                               make_rng(cfg.seed, index, STREAM_TRAJECTORY))
    ch_rng = make_rng(cfg.seed, index, STREAM_CHANNEL)
    dictionary = build_dictionary(cfg.csiprep.n_beams, cfg.arrays.n_tx_sub6)
    rho = db_to_linear(cfg.csiprep.rho_db)
    grids, depths, csis, energies = [], [], [], []
    for state in traj.states:
        grids.append(render_grid(sc, state))
        depths.append(render_depth(sc, state))
        csi, _ = synth_sub6_csi(cfg.arrays, sc, state, ch_rng)
        csis.append(csi.H)
        energies.append(beam_energy_map(csi, dictionary, rho).values)
    return Realization(traj, np.stack(grids), np.stack(depths), np.stack(csis),
                       np.stack(energies))


def simulate(cfg: ExperimentConfig) -> Dataset:
    n = cfg.experiment.n_realizations
    with ThreadPoolExecutor(max_workers=worker_count(n)) as pool:
        reals = list(pool.map(lambda i: simulate_realization(cfg, i), range(n)))
    return Dataset(cfg, reals)


def write_dataset(ds: Dataset, path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {path}: {exc}") from None
    cfg = ds.config
    write_trajectory_csv(os.path.join(path, "trajectory.csv"), ds.trajectories, cfg.scene)
    stacks = {
        "grid": [r.grids for r in ds.realizations],
        "depth": [r.depths for r in ds.realizations],
        "csi": [r.csi for r in ds.realizations],
        "beam_energy": [r.beam_energy for r in ds.realizations],
    }
    tensors = {}
    for name, code in TENSORS.items():
        recs = [rec for stack in stacks[name] for rec in stack]
        tensorio.write_records(os.path.join(path, f"{name}.bin"), recs, code=code)
        tensors[name] = {"dtype": tensorio.DTYPE_NAMES[code], "code": code,
                         "shape": list(recs[0].shape), "count": len(recs)}
    with open(os.path.join(path, "config.ini"), "w") as fh:
        fh.write(canonical_text(cfg))
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_slots": cfg.experiment.n_slots * cfg.experiment.n_realizations,
        "slots_per_realization": cfg.experiment.n_slots,
        "n_realizations": cfg.experiment.n_realizations,
        "tensors": tensors,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset manifest in {path}: {exc}") from None


def read_dataset(path, expected: ExperimentConfig | None = None) -> Dataset:
    """Load a dataset; ``expected`` must hash to the manifest's config hash."""
    manifest = read_manifest(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError("unsupported dataset format version")
    with open(os.path.join(path, "config.ini")) as fh:
        cfg = parse_config_text(fh.read())
    if config_hash(cfg) != manifest["config_hash"]:
        raise DataError("config.ini does not match the manifest hash")
    if expected is not None and config_hash(expected) != manifest["config_hash"]:
        raise DataError("config differs from the one used to simulate this dataset")
    m = manifest["slots_per_realization"]
    arrays = {}
    for name, meta in manifest["tensors"].items():
        try:
            recs = tensorio.read_records(os.path.join(path, f"{name}.bin"))
        except (OSError, tensorio.TensorFormatError) as exc:
            raise DataError(f"{name}.bin: {exc}") from None
        if len(recs) != meta["count"] or any(list(r.shape) != meta["shape"] for r in recs):
            raise DataError(f"{name}.bin disagrees with the manifest")
        arrays[name] = np.stack(recs)
    trajs = read_trajectory_csv(os.path.join(path, "trajectory.csv"), m,
                                cfg.scene.slot_duration)
    reals = []
    for r, traj in enumerate(trajs):
        sl = slice(r * m, (r + 1) * m)
        reals.append(Realization(traj, arrays["grid"][sl].astype(np.float64),
                                 arrays["depth"][sl], arrays["csi"][sl],
                                 arrays["beam_energy"][sl]))
    if len(reals) != manifest["n_realizations"]:
        raise DataError("trajectory.csv realization count disagrees with the manifest")
    return Dataset(cfg, reals)


def make_samples(ds: Dataset):
    """Preprocess every slot that has a successor into a :class:`SlotSample`.

    Depth noise is drawn from a per-realization stream of the dataset seed.
    """
    cfg = ds.config
    samples = []
    for r, real in enumerate(ds.realizations):
        rng = make_rng(cfg.seed, r, STREAM_DEPTH_NOISE)
        states = real.trajectory.states
        for n in range(len(states) - 1):
            nxt = states[n + 1]
            depth = minmax_normalize_depth(real.depths[n], cfg.scene.depth_noise_var, rng)
            beam = zero_force_topk_values(real.beam_energy[n], cfg.csiprep.top_k)
            samples.append(SlotSample(
                beam_energy=beam,
                grid=zscore_normalize(real.grids[n]).ravel(),
                depth=depth.ravel(),
                target=(nxt.x, nxt.y),
                theta_next=true_angle(nxt, cfg.scene),
                d_next=rsu_distance(nxt.x, nxt.y, cfg.scene),
                realization=r,
                slot=n,
            ))
    return samples


def zero_force_topk_values(values, k):
    return zero_force_topk(BeamEnergy(np.asarray(values)), k).values
