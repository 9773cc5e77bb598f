"""Backend selection for the scene ray-casting kernels.

The compiled core (``mmff._raycast``) is used when it was built; otherwise,
or when ``MMFF_PURE_PYTHON`` is set, the numpy implementation is used.
Both expose::

    cast_rays(ox, oy, dirs, boxes, circles, max_range) -> (R,) distances
    rasterize(xs, ys, boxes, circles) -> (len(ys), len(xs)) occupancy

``boxes`` rows are ``(xmin, ymin, xmax, ymax)``; ``circles`` rows are
``(cx, cy, radius)``; ``dirs`` rows are unit direction vectors.
"""

import os

import numpy as np

from . import _raycast_py

try:
    from . import _raycast as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("MMFF_PURE_PYTHON"):
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _raycast_py


def _as2d(a, width):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return a.reshape(-1, width)


def cast_rays(origin, dirs, boxes, circles, max_range, backend=None):
    impl = _select(backend)
    return impl.cast_rays(float(origin[0]), float(origin[1]), _as2d(dirs, 2),
                          _as2d(boxes, 4), _as2d(circles, 3), float(max_range))


def rasterize(xs, ys, boxes, circles, backend=None):
    impl = _select(backend)
    return impl.rasterize(np.ascontiguousarray(xs, dtype=np.float64),
                          np.ascontiguousarray(ys, dtype=np.float64),
                          _as2d(boxes, 4), _as2d(circles, 3))


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _raycast_py
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled ray-casting core is not built")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")
