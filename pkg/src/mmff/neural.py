"""Small numpy neural core with hand-written reverse-mode gradients.

Everything runs in float64 and on row-major batches ``(batch, features)``.
Modules cache what their backward pass needs during ``forward``; calling
``backward`` without a preceding forward raises :class:`BackwardStateError`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

try:
    from ._optim import adam_update as _fused_adam
except ImportError:  # extension not built
    _fused_adam = None
if os.environ.get("MMFF_PURE_PYTHON"):
    _fused_adam = None


class BackwardStateError(RuntimeError):
    """backward() was called before a recorded forward pass."""


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_width(x, n, what):
    if x.shape[-1] != n:
        raise ValueError(f"{what}: expected width {n}, got {x.shape[-1]}")


# ---------------------------------------------------------------- dense / MLP


@dataclass
class DenseLayer:
    W: np.ndarray  # out x in
    b: np.ndarray

    @classmethod
    def init(cls, n_in, n_out, rng):
        return cls(_uniform(rng, n_in, (n_out, n_in)), np.zeros(n_out))

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


class MLP:
    """Stack of dense layers; ReLU after every hidden layer and optionally the last.

    ``dropout`` holds one inverted-dropout rate per hidden layer.
    """

    def __init__(self, layers, dropout=None, final_relu=False):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ValueError(f"layer chain mismatch: {a.n_out} -> {b.n_in}")
        n_hidden = len(self.layers) - 1
        self.dropout = tuple(dropout) if dropout is not None else (0.0,) * n_hidden
        if len(self.dropout) != n_hidden:
            raise ValueError("need one dropout rate per hidden layer")
        self.final_relu = final_relu
        self._cache = None

    @classmethod
    def build(cls, sizes, rng, dropout=None, final_relu=False):
        layers = [DenseLayer.init(a, b, rng) for a, b in zip(sizes, sizes[1:])]
        return cls(layers, dropout, final_relu)

    @property
    def sizes(self):
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    def forward(self, x, train=False, rng=None, masks=None):
        """Forward pass; in train mode dropout masks are drawn from ``rng``
        unless ``masks`` (from a previous pass) are given for replay."""
        x = np.asarray(x, dtype=np.float64)
        _check_width(x, self.layers[0].n_in, "mlp input")
        last = len(self.layers) - 1
        inputs, pre, drop = [], [], []
        h = x
        for l, layer in enumerate(self.layers):
            inputs.append(h)
            a = h @ layer.W.T + layer.b
            pre.append(a)
            h = np.maximum(a, 0.0) if (l < last or self.final_relu) else a
            mask = None
            if l < last and train and self.dropout[l] > 0.0:
                if masks is not None:
                    mask = masks[l]
                else:
                    p = self.dropout[l]
                    mask = (rng.random(h.shape) >= p) / (1.0 - p)
                h = h * mask
            drop.append(mask)
        self._cache = (inputs, pre, drop)
        return h

    @property
    def masks(self):
        if self._cache is None:
            raise BackwardStateError("no forward pass recorded")
        return self._cache[2]

    def backward(self, grad):
        if self._cache is None:
            raise BackwardStateError("MLP.backward before forward")
        inputs, pre, drop = self._cache
        last = len(self.layers) - 1
        grads = [None] * len(self.layers)
        g = grad
        for l in range(last, -1, -1):
            if drop[l] is not None:
                g = g * drop[l]
            if l < last or self.final_relu:
                g = g * (pre[l] > 0.0)
            grads[l] = (g.T @ inputs[l], g.sum(axis=0))
            g = g @ self.layers[l].W
        self.grads = grads
        return g

    def parameters(self, prefix=""):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}{i}.W"] = layer.W
            out[f"{prefix}{i}.b"] = layer.b
        return out

    def gradients(self, prefix=""):
        out = {}
        for i, (gW, gb) in enumerate(self.grads):
            out[f"{prefix}{i}.W"] = gW
            out[f"{prefix}{i}.b"] = gb
        return out


def mlp_forward(layers, x, dropout_rates=None, train_mode=False, rng=None, final_relu=False):
    """One forward pass through ``layers`` (a list of :class:`DenseLayer`)."""
    return MLP(layers, dropout_rates, final_relu).forward(x, train_mode, rng)


# ---------------------------------------------------------------- GRU


@dataclass
class GruLayer:
    w_z: np.ndarray
    w_r: np.ndarray
    w_o: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_o: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_o: np.ndarray
    T_u: int = 2

    PARAMS = ("w_z", "w_r", "w_o", "u_z", "u_r", "u_o", "b_z", "b_r", "b_o")

    @classmethod
    def init(cls, n_in, hidden=16, T_u=2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        w = [_uniform(rng, n_in, (hidden, n_in)) for _ in range(3)]
        u = [_uniform(rng, hidden, (hidden, hidden)) for _ in range(3)]
        b = [np.zeros(hidden) for _ in range(3)]
        return cls(*w, *u, *b, T_u=T_u)

    @classmethod
    def zeros(cls, n_in, hidden, T_u=2):
        return cls(*(np.zeros((hidden, n_in)) for _ in range(3)),
                   *(np.zeros((hidden, hidden)) for _ in range(3)),
                   *(np.zeros(hidden) for _ in range(3)), T_u=T_u)

    @property
    def hidden(self):
        return self.w_z.shape[0]

    @property
    def n_in(self):
        return self.w_z.shape[1]


def _gru_step(layer, x, h):
    z = sigmoid(x @ layer.w_z.T + h @ layer.u_z.T + layer.b_z)
    r = sigmoid(x @ layer.w_r.T + h @ layer.u_r.T + layer.b_r)
    rh = r * h
    o_tilde = np.tanh(x @ layer.w_o.T + rh @ layer.u_o.T + layer.b_o)
    o = (1.0 - z) * h + z * o_tilde
    return o, (x, h, z, r, rh, o_tilde)


def gru_cell(layer: GruLayer, x_t, y_prev):
    """``o = (1 - z) * y_prev + z * tanh(w_o x + u_o (r * y_prev) + b_o)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    y_prev = np.asarray(y_prev, dtype=np.float64)
    _check_width(x_t, layer.n_in, "gru input")
    _check_width(y_prev, layer.hidden, "gru state")
    return _gru_step(layer, x_t, y_prev)[0]


def gru_layer(layer: GruLayer, xs):
    """Run ``T_u`` chained cells from a zero state; returns the output sequence."""
    xs = np.asarray(xs, dtype=np.float64)
    if len(xs) != layer.T_u:
        raise ValueError(f"sequence length {len(xs)} != T_u={layer.T_u}")
    h = np.zeros(xs.shape[1:-1] + (layer.hidden,))
    ys = []
    for x in xs:
        h = gru_cell(layer, x, h)
        ys.append(h)
    return np.stack(ys)


class GRU:
    """Trainable wrapper around :class:`GruLayer` over ``(T, batch, in)`` inputs."""

    def __init__(self, layer: GruLayer):
        self.layer = layer
        self._cache = None

    def forward(self, xs):
        xs = np.asarray(xs, dtype=np.float64)
        if len(xs) != self.layer.T_u:
            raise ValueError(f"sequence length {len(xs)} != T_u={self.layer.T_u}")
        _check_width(xs, self.layer.n_in, "gru input")
        h = np.zeros(xs.shape[1:-1] + (self.layer.hidden,))
        ys, cache = [], []
        for x in xs:
            h, c = _gru_step(self.layer, x, h)
            ys.append(h)
            cache.append(c)
        self._cache = cache
        return np.stack(ys)

    def backward(self, dys):
        if self._cache is None:
            raise BackwardStateError("GRU.backward before forward")
        L = self.layer
        g = {name: np.zeros_like(getattr(L, name)) for name in GruLayer.PARAMS}
        dxs = []
        dh_next = np.zeros_like(dys[0])
        for t in range(len(self._cache) - 1, -1, -1):
            x, h, z, r, rh, ot = self._cache[t]
            do = dys[t] + dh_next
            dz = do * (ot - h)
            dot = do * z
            dh = do * (1.0 - z)
            da_o = dot * (1.0 - ot * ot)
            g["w_o"] += da_o.T @ x
            g["u_o"] += da_o.T @ rh
            g["b_o"] += da_o.sum(axis=0)
            drh = da_o @ L.u_o
            dr = drh * h
            dh += drh * r
            da_z = dz * z * (1.0 - z)
            da_r = dr * r * (1.0 - r)
            g["w_z"] += da_z.T @ x
            g["u_z"] += da_z.T @ h
            g["b_z"] += da_z.sum(axis=0)
            g["w_r"] += da_r.T @ x
            g["u_r"] += da_r.T @ h
            g["b_r"] += da_r.sum(axis=0)
            dh += da_z @ L.u_z + da_r @ L.u_r
            dxs.append(da_o @ L.w_o + da_z @ L.w_z + da_r @ L.w_r)
            dh_next = dh
        self.grads = g
        return np.stack(dxs[::-1])

    def parameters(self, prefix=""):
        return {f"{prefix}{n}": getattr(self.layer, n) for n in GruLayer.PARAMS}

    def gradients(self, prefix=""):
        return {f"{prefix}{n}": v for n, v in self.grads.items()}


# ---------------------------------------------------------------- loss


def smooth_l1(pred, target, beta=1.0):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    e = np.abs(pred - target)
    per = np.where(e < beta, 0.5 * e * e / beta, e - 0.5 * beta)
    return float(per.mean())


def smooth_l1_grad(pred, target, beta=1.0):
    e = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    g = np.where(np.abs(e) < beta, e / beta, np.sign(e))
    return g / e.size


# ---------------------------------------------------------------- optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    scratch: dict = field(default_factory=dict, repr=False)


def _flat_ok(*arrays):
    return all(a.dtype == np.float64 and a.flags.c_contiguous for a in arrays)


def adam_step(state: AdamState, params: dict, grads: dict, fused=None) -> dict:
    """Bias-corrected ADAM update applied in place to ``params``.

    ``fused=False`` forces the numpy path even when the compiled kernel exists.
    """
    if params.keys() != grads.keys():
        raise ValueError("params and grads have different keys")
    if fused is None:
        fused = _fused_adam is not None
    elif fused and _fused_adam is None:
        raise RuntimeError("compiled ADAM kernel is not built")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if fused and _flat_ok(p, g, m, v):
            _fused_adam(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                        state.beta1, state.beta2, state.lr, state.eps, c1, c2)
            continue
        if name not in state.scratch:
            state.scratch[name] = (np.empty_like(p), np.empty_like(p))
        a, b = state.scratch[name]
        # in-place form of: m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
        # p -= lr (m / c1) / (sqrt(v / c2) + eps)
        m *= state.beta1
        np.multiply(g, 1.0 - state.beta1, out=a)
        m += a
        v *= state.beta2
        np.multiply(g, 1.0 - state.beta2, out=a)
        a *= g
        v += a
        np.divide(v, c2, out=a)
        np.sqrt(a, out=a)
        a += state.eps
        np.divide(m, c1, out=b)
        b *= state.lr
        b /= a
        p -= b
    return params


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 10
    lr: float = 1e-3
    lr_decay: float = 0.3
    milestones: tuple = (15, 30)
    train_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0 or self.lr_decay <= 0:
            raise ValueError("epochs, batch_size, lr and lr_decay must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def test_fraction(self):
        return 1.0 - self.train_fraction


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    n = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr * cfg.lr_decay ** n
