"""Pure numpy fallback for the compiled ray-casting core."""

import numpy as np


def _hit_circles(ox, oy, dirs, circles):
    dx = dirs[:, 0:1]
    dy = dirs[:, 1:2]
    ocx = ox - circles[None, :, 0]
    ocy = oy - circles[None, :, 1]
    r = circles[None, :, 2]
    b = ocx * dx + ocy * dy
    q = (ocx * ocx + ocy * ocy) - r * r
    disc = b * b - q
    with np.errstate(invalid="ignore"):
        sq = np.sqrt(disc)
    near = -b - sq
    far = -b + sq
    t = np.where(near >= 0.0, near, np.where(far >= 0.0, 0.0, np.inf))
    return np.where(disc < 0.0, np.inf, t)


def _slab(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    parallel = d == 0.0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    return tmin, tmax


def _hit_boxes(ox, oy, dirs, boxes):
    txn, txf = _slab(ox, dirs[:, 0:1], boxes[None, :, 0], boxes[None, :, 2])
    tyn, tyf = _slab(oy, dirs[:, 1:2], boxes[None, :, 1], boxes[None, :, 3])
    tn = np.maximum(txn, tyn)
    tf = np.minimum(txf, tyf)
    miss = (tn > tf) | (tf < 0.0)
    return np.where(miss, np.inf, np.where(tn < 0.0, 0.0, tn))


def cast_rays(ox, oy, dirs, boxes, circles, max_range):
    best = np.full(dirs.shape[0], float(max_range))
    if len(boxes):
        best = np.minimum(best, _hit_boxes(ox, oy, dirs, boxes).min(axis=1))
    if len(circles):
        best = np.minimum(best, _hit_circles(ox, oy, dirs, circles).min(axis=1))
    return best


def rasterize(xs, ys, boxes, circles):
    px = xs[None, :, None]
    py = ys[:, None, None]
    occ = np.zeros((len(ys), len(xs)), dtype=bool)
    if len(boxes):
        b = boxes[None, None, :, :]
        occ |= ((b[..., 0] <= px) & (px <= b[..., 2])
                & (b[..., 1] <= py) & (py <= b[..., 3])).any(axis=2)
    if len(circles):
        c = circles[None, None, :, :]
        ex = px - c[..., 0]
        ey = py - c[..., 1]
        occ |= (ex * ex + ey * ey <= c[..., 2] * c[..., 2]).any(axis=2)
    return occ.astype(np.float64)
