"""Multi-modal next-slot position predictor.

Three extractors turn the zero-forced beam energies, the normalized
occupancy grid and the normalized noisy depth map into angular, visual and
distance features.  Their concatenation feeds an MLP that regresses the
next x coordinate and a two-layer GRU over the (previous, current) slot pair
that regresses the next y coordinate.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorio
from .neural import (GRU, MLP, AdamState, BackwardStateError, GruLayer, TrainConfig, adam_step,
                     lr_schedule)
from .neural import smooth_l1, smooth_l1_grad
from .scene import SceneConfig, angle_from_rsu

Z_EPS = 1e-8


# ---------------------------------------------------------------- preprocessing


def zscore_normalize(grid):
    g = np.asarray(grid, dtype=np.float64)
    if g.size == 0:
        raise ValueError("empty grid")
    return (g - g.mean()) / max(g.std(), Z_EPS)


def minmax_normalize_depth(depth, noise_var, rng):
    """Add N(0, noise_var) noise, then rescale to [0, 1] (all zeros if flat)."""
    y = np.asarray(depth, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty depth map")
    y = y + rng.normal(0.0, math.sqrt(noise_var), size=y.shape)
    lo, hi = y.min(), y.max()
    if hi == lo:
        return np.zeros_like(y)
    return (y - lo) / (hi - lo)


def position_to_angle(xy, cfg: SceneConfig) -> float:
    return angle_from_rsu(float(xy[0]), float(xy[1]), cfg)


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class SlotSample:
    """Preprocessed inputs at slot ``n`` and the slot ``n + 1`` ground truth."""

    beam_energy: np.ndarray  # zero-forced, length B
    grid: np.ndarray  # z-scored, flattened
    depth: np.ndarray  # noisy min-max, flattened
    target: tuple  # (x, y) at n + 1
    theta_next: float
    d_next: float
    realization: int = 0
    slot: int = 0


@dataclass(frozen=True)
class FeatureVec:
    nu: np.ndarray
    chi: np.ndarray
    tau: np.ndarray
    fused: np.ndarray
    slot: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    n_beams: int = 64
    raster: int = 64 * 64
    L_A: int = 8
    L_V: int = 256
    L_D: int = 256
    afe_hidden: tuple = (64, 32, 16)
    afe_dropout: tuple = (0.2, 0.2, 0.0)
    vfe_hidden: tuple = (128, 128)
    dfe_hidden: tuple = (128, 128)
    x_hidden: tuple | None = None  # default (L_A + L_V + L_D, 256, 128, 64)
    x_dropout: tuple = (0.1, 0.0, 0.0, 0.0)
    gru_units: int = 16
    gru_layers: int = 2
    T_u: int = 2
    y_hidden: tuple = (16, 32, 16)
    y_dropout: tuple = (0.1, 0.1, 0.0)

    @property
    def fused_len(self):
        return self.L_A + self.L_V + self.L_D

    @property
    def x_sizes(self):
        hidden = self.x_hidden or (self.fused_len, 256, 128, 64)
        return (self.fused_len, *hidden, 1)

    def to_json(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_json(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# ---------------------------------------------------------------- model


class MmffModel:
    def __init__(self, spec: ModelSpec | None = None, rng=None):
        self.spec = spec = spec or ModelSpec()
        if spec.T_u != 2:
            raise ValueError("the recurrent branch runs over exactly two slots")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.afe = MLP.build((spec.n_beams, *spec.afe_hidden, spec.L_A), rng,
                             spec.afe_dropout, final_relu=True)
        self.vfe = MLP.build((spec.raster, *spec.vfe_hidden, spec.L_V), rng,
                             (0.0,) * len(spec.vfe_hidden), final_relu=True)
        self.dfe = MLP.build((spec.raster, *spec.dfe_hidden, spec.L_D), rng,
                             (0.0,) * len(spec.dfe_hidden), final_relu=True)
        self.x_head = MLP.build(spec.x_sizes, rng, spec.x_dropout)
        self.grus = []
        n_in = spec.fused_len
        for _ in range(spec.gru_layers):
            self.grus.append(GRU(GruLayer.init(n_in, spec.gru_units, spec.T_u, rng)))
            n_in = spec.gru_units
        self.y_head = MLP.build((spec.gru_units, *spec.y_hidden, 1), rng, spec.y_dropout)
        self.norm = {"x_mean": 0.0, "x_std": 1.0, "y_mean": 0.0, "y_std": 1.0}
        self.history = {"epoch": [], "lr": [], "train_loss": [], "test_loss": []}
        self.seed = None
        self._batch = None

    # modules in a fixed order; names prefix every parameter
    def modules(self):
        mods = [("afe.", self.afe), ("vfe.", self.vfe), ("dfe.", self.dfe),
                ("x_head.", self.x_head)]
        mods += [(f"gru{i}.", g) for i, g in enumerate(self.grus)]
        mods.append(("y_head.", self.y_head))
        return mods

    def mlps(self):
        return [(p, m) for p, m in self.modules() if isinstance(m, MLP)]

    def parameters(self):
        out = {}
        for prefix, m in self.modules():
            out.update(m.parameters(prefix))
        return out

    def gradients(self):
        out = {}
        for prefix, m in self.modules():
            out.update(m.gradients(prefix))
        return out

    # -- features
    def features(self, beam, grid, depth, train=False, rng=None, masks=None):
        masks = masks or {}
        nu = self.afe.forward(beam, train, rng, masks.get("afe."))
        chi = self.vfe.forward(grid, train, rng, masks.get("vfe."))
        tau = self.dfe.forward(depth, train, rng, masks.get("dfe."))
        return nu, chi, tau, np.concatenate([nu, chi, tau], axis=-1)

    # -- batched forward over (prev, curr) pairs; returns normalized (x, y)
    def forward(self, prev, curr, train=False, rng=None, masks=None):
        """``prev``/``curr`` are ``(beam, grid, depth)`` arrays with matching batch size."""
        masks = masks or {}
        B = len(prev[0])
        rows = [np.concatenate([p, c]) for p, c in zip(prev, curr)]
        _, _, _, fused = self.features(*rows, train=train, rng=rng, masks=masks)
        f_prev, f_curr = fused[:B], fused[B:]
        xo = self.x_head.forward(f_curr, train, rng, masks.get("x_head."))
        h = np.stack([f_prev, f_curr])
        for g in self.grus:
            h = g.forward(h)
        yo = self.y_head.forward(h[-1], train, rng, masks.get("y_head."))
        self._batch = B
        return np.concatenate([xo, yo], axis=1)

    def recorded_masks(self):
        return {p: m.masks for p, m in self.mlps()}

    def backward(self, dpred):
        if self._batch is None:
            raise BackwardStateError("model.backward before forward")
        B = self._batch
        df_curr = self.x_head.backward(dpred[:, :1])
        dh_last = self.y_head.backward(dpred[:, 1:])
        dh = np.zeros((self.spec.T_u, B, self.spec.gru_units))
        dh[-1] = dh_last
        for g in reversed(self.grus):
            dh = g.backward(dh)
        dfused = np.concatenate([dh[0], dh[1] + df_curr])
        s = self.spec
        self.afe.backward(dfused[:, :s.L_A])
        self.vfe.backward(dfused[:, s.L_A:s.L_A + s.L_V])
        self.dfe.backward(dfused[:, s.L_A + s.L_V:])
        return self.gradients()

    def loss_and_grads(self, prev, curr, targets, train=False, rng=None, masks=None):
        pred = self.forward(prev, curr, train, rng, masks)
        loss = smooth_l1(pred, targets)
        grads = self.backward(smooth_l1_grad(pred, targets))
        return loss, grads

    # -- normalization
    def normalize_targets(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        n = self.norm
        return np.stack([(xy[..., 0] - n["x_mean"]) / n["x_std"],
                         (xy[..., 1] - n["y_mean"]) / n["y_std"]], axis=-1)

    def denormalize(self, pred):
        n = self.norm
        return np.stack([pred[..., 0] * n["x_std"] + n["x_mean"],
                         pred[..., 1] * n["y_std"] + n["y_mean"]], axis=-1)

    def predict_batch(self, prev, curr):
        return self.denormalize(self.forward(prev, curr, train=False))


def backward(model: MmffModel, dloss):
    """Reverse-mode gradients of the last recorded forward pass."""
    return model.backward(dloss)


def _inputs(samples):
    return (np.stack([s.beam_energy for s in samples]),
            np.stack([s.grid for s in samples]),
            np.stack([s.depth for s in samples]))


def extract_features(model: MmffModel, sample: SlotSample) -> FeatureVec:
    beam, grid, depth = _inputs([sample])
    s = model.spec
    if beam.shape[1] != s.n_beams or grid.shape[1] != s.raster or depth.shape[1] != s.raster:
        raise ValueError("sample dimensions do not match the model")
    nu, chi, tau, fused = model.features(beam, grid, depth)
    return FeatureVec(nu[0], chi[0], tau[0], fused[0], sample.slot)


def predict_position(model: MmffModel, f_prev: FeatureVec, f_curr: FeatureVec):
    """Next-slot ``(x, y)`` in meters from two consecutive fused features."""
    if f_prev.slot is not None and f_curr.slot is not None and f_prev.slot + 1 != f_curr.slot:
        raise ValueError(f"features must be consecutive (got slots {f_prev.slot}, {f_curr.slot})")
    xo = model.x_head.forward(f_curr.fused[None, :])
    h = np.stack([f_prev.fused[None, :], f_curr.fused[None, :]])
    for g in model.grus:
        h = g.forward(h)
    yo = model.y_head.forward(h[-1])
    x, y = model.denormalize(np.concatenate([xo, yo], axis=1))[0]
    return float(x), float(y)


# ---------------------------------------------------------------- training


def sample_pairs(samples):
    """Indices ``(i - 1, i)`` whose slots are consecutive within one realization."""
    return [(i - 1, i) for i in range(1, len(samples))
            if samples[i - 1].realization == samples[i].realization
            and samples[i - 1].slot + 1 == samples[i].slot]


def split_pairs(pairs, train_fraction):
    """Chronological block split: the first fraction trains, the rest tests."""
    n_train = int(round(train_fraction * len(pairs)))
    return pairs[:n_train], pairs[n_train:]


def _gather(arrays, idx):
    return tuple(a[idx] for a in arrays)


def train_mmff(dataset, cfg: TrainConfig | None = None, rng=None, spec: ModelSpec | None = None,
               log=None) -> MmffModel:
    cfg = cfg or TrainConfig()
    if not dataset:
        raise ValueError("empty dataset")
    if len(dataset) < 10:
        raise ValueError("need at least 10 samples")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    pairs = sample_pairs(dataset)
    train, test = split_pairs(pairs, cfg.train_fraction)
    if not train:
        raise ValueError("no consecutive slot pairs to train on")

    model = MmffModel(spec, rng)
    model.seed = cfg.seed
    inputs = _inputs(dataset)
    targets = np.array([s.target for s in dataset], dtype=np.float64)
    tr_curr = np.array([c for _, c in train])
    model.norm = {
        "x_mean": float(targets[tr_curr, 0].mean()),
        "x_std": float(max(targets[tr_curr, 0].std(), Z_EPS)),
        "y_mean": float(targets[tr_curr, 1].mean()),
        "y_std": float(max(targets[tr_curr, 1].std(), Z_EPS)),
    }
    norm_targets = model.normalize_targets(targets)
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    train = np.array(train)
    test = np.array(test) if test else np.zeros((0, 2), dtype=int)

    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg)
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = train[order[start:start + cfg.batch_size]]
            loss, grads = model.loss_and_grads(
                _gather(inputs, batch[:, 0]), _gather(inputs, batch[:, 1]),
                norm_targets[batch[:, 1]], train=True, rng=rng)
            adam_step(opt, params, grads)
            losses.append(loss * len(batch))
        train_loss = float(np.sum(losses) / len(train))
        if not math.isfinite(train_loss):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        test_loss = evaluate_loss(model, inputs, norm_targets, test)
        model.history["epoch"].append(epoch)
        model.history["lr"].append(opt.lr)
        model.history["train_loss"].append(train_loss)
        model.history["test_loss"].append(test_loss)
        if log is not None:
            log(epoch, opt.lr, train_loss, test_loss)
    model.epoch = cfg.epochs
    return model


def evaluate_loss(model, inputs, norm_targets, pairs, chunk=256):
    if len(pairs) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(pairs), chunk):
        p = pairs[start:start + chunk]
        pred = model.forward(_gather(inputs, p[:, 0]), _gather(inputs, p[:, 1]))
        total += smooth_l1(pred, norm_targets[p[:, 1]]) * len(p)
    return total / len(pairs)


def predict_pairs(model, dataset, pairs, chunk=256):
    """Denormalized next-slot positions for each ``(prev, curr)`` index pair."""
    inputs = _inputs(dataset)
    pairs = np.asarray(pairs).reshape(-1, 2)
    out = []
    for start in range(0, len(pairs), chunk):
        p = pairs[start:start + chunk]
        out.append(model.predict_batch(_gather(inputs, p[:, 0]), _gather(inputs, p[:, 1])))
    return np.concatenate(out) if out else np.zeros((0, 2))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: MmffModel, path, extra=None):
    """Directory with ``manifest.json`` and ``params.bin`` (float64 records in manifest order)."""
    os.makedirs(path, exist_ok=True)
    params = model.parameters()
    manifest = {
        "format_version": 1,
        "spec": model.spec.to_json(),
        "seed": model.seed,
        "epoch": getattr(model, "epoch", 0),
        "norm": model.norm,
        "params": [[name, list(p.shape)] for name, p in params.items()],
        "extra": extra or {},
    }
    tensorio.write_records(os.path.join(path, "params.bin"), params.values(), code=2)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> MmffModel:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    model = MmffModel(ModelSpec.from_json(manifest["spec"]))
    arrays = tensorio.read_records(os.path.join(path, "params.bin"))
    params = model.parameters()
    if len(arrays) != len(manifest["params"]) or len(arrays) != len(params):
        raise ValueError("checkpoint parameter count mismatch")
    for (name, shape), a in zip(manifest["params"], arrays):
        if name not in params or tuple(shape) != params[name].shape or a.shape != params[name].shape:
            raise ValueError(f"checkpoint tensor {name} does not fit the model")
        params[name][...] = a
    model.norm = {k: float(v) for k, v in manifest["norm"].items()}
    model.seed = manifest["seed"]
    model.epoch = manifest["epoch"]
    model.extra = manifest.get("extra", {})
    return model
