"""Road scene, drifting vehicle trajectories and synthetic sensing frames.

World frame: ``x`` runs along the road, ``y`` across it.  Lane ``i`` has its
center at ``(i + 0.5) * lane_width``.  The RSU sits beside the road and all
angles are measured from its array axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import raycast

ANGLE_EPS = 1e-6


class DegenerateGeometryError(ValueError):
    """Raised when a position coincides with the RSU."""


def _default_scatterers():
    # buildings across the road plus one pole on the RSU side
    return (
        (20.0, 27.0, 4.0),
        (60.0, 28.0, 5.0),
        (100.0, 26.0, 3.0),
        (140.0, 29.0, 5.0),
        (180.0, 27.0, 4.0),
        (55.0, -13.0, 2.0),
    )


@dataclass(frozen=True)
class SceneConfig:
    n_lanes: int = 5
    lane_width: float = 3.5
    lane_length: float = 200.0
    rsu_position: tuple = (100.0, -8.0)
    rsu_array_axis: tuple = (1.0, 0.0)
    scatterers: tuple = field(default_factory=_default_scatterers)
    drift_probability: float = 0.05
    slot_duration: float = 0.1
    seed: int = 2024
    speed_range: tuple = (12.0, 16.0)
    start_x_range: tuple = (5.0, 15.0)
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    raster_h: int = 64
    raster_w: int = 64
    max_range: float = 250.0
    depth_noise_var: float = 0.1
    grid_x_range: tuple | None = None
    grid_y_range: tuple | None = None

    def __post_init__(self):
        if self.n_lanes < 1:
            raise ValueError("n_lanes must be >= 1")
        if self.lane_width <= 0 or self.lane_length <= 0:
            raise ValueError("lane dimensions must be positive")
        if not 0.0 <= self.drift_probability <= 1.0:
            raise ValueError("drift_probability must lie in [0, 1]")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")
        if any(s[2] <= 0 for s in self.scatterers):
            raise ValueError("scatterer radii must be positive")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError("speed_range must satisfy 0 < lo <= hi")
        if self.raster_h < 1 or self.raster_w < 1:
            raise ValueError("raster sizes must be >= 1")
        if self.max_range <= 0 or self.depth_noise_var < 0:
            raise ValueError("max_range must be positive, depth_noise_var >= 0")
        ax = np.asarray(self.rsu_array_axis, dtype=float)
        if np.linalg.norm(ax) == 0:
            raise ValueError("rsu_array_axis must be nonzero")
        object.__setattr__(self, "rsu_array_axis", tuple(float(v) for v in ax / np.linalg.norm(ax)))
        object.__setattr__(self, "rsu_position", tuple(float(v) for v in self.rsu_position))
        object.__setattr__(self, "scatterers", tuple(tuple(float(v) for v in s) for s in self.scatterers))

    @property
    def road_width(self):
        return self.n_lanes * self.lane_width

    def lane_center(self, lane):
        return (lane + 0.5) * self.lane_width

    @property
    def grid_extent(self):
        # default y window spans the road, the RSU and every scatterer, plus 1 m
        xr = self.grid_x_range or (0.0, self.lane_length)
        if self.grid_y_range is None:
            lo = min([-self.lane_width, self.rsu_position[1]] + [s[1] - s[2] for s in self.scatterers])
            hi = max([self.road_width + self.lane_width] + [s[1] + s[2] for s in self.scatterers])
            yr = (math.floor(lo) - 1.0, math.ceil(hi) + 1.0)
        else:
            yr = self.grid_y_range
        return tuple(xr), tuple(yr)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float
    lane: int


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    slot_duration: float

    def __len__(self):
        return len(self.states)

    @property
    def xy(self):
        return np.array([(s.x, s.y) for s in self.states])

    @property
    def lanes(self):
        return np.array([s.lane for s in self.states])

    def drift_slots(self):
        """Indices ``n`` where the lane differs from slot ``n - 1``."""
        lanes = self.lanes
        return np.flatnonzero(lanes[1:] != lanes[:-1]) + 1


@dataclass(frozen=True)
class SensingFrame:
    grid: np.ndarray
    depth: np.ndarray
    noise_var: float


def make_rng(seed, *stream):
    """Independent generator for ``(seed, *stream)``; streams never overlap."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def generate_trajectory(cfg: SceneConfig, n_slots: int, rng=None) -> Trajectory:
    """Constant-speed drive along x with random adjacent-lane jumps.

    Draw order from ``rng``: speed, start x, start lane, then one
    ``(drift, direction)`` uniform pair per slot transition.
    """
    if n_slots < 2:
        raise ValueError("n_slots must be >= 2")
    if rng is None:
        rng = make_rng(cfg.seed)
    v = float(rng.uniform(*cfg.speed_range))
    x = float(rng.uniform(*cfg.start_x_range))
    lane = int(rng.integers(cfg.n_lanes))
    draws = rng.random((n_slots - 1, 2))
    dx = v * cfg.slot_duration
    states = [VehicleState(x, cfg.lane_center(lane), v, lane)]
    for n in range(1, n_slots):
        if draws[n - 1, 0] < cfg.drift_probability:
            step = -1 if draws[n - 1, 1] < 0.5 else 1
            lane = min(max(lane + step, 0), cfg.n_lanes - 1)
        x = x + dx
        states.append(VehicleState(x, cfg.lane_center(lane), v, lane))
    return Trajectory(tuple(states), cfg.slot_duration)


def angle_from_rsu(x, y, cfg: SceneConfig) -> float:
    """Angle in (0, pi) between the array axis and the RSU->(x, y) vector."""
    px = x - cfg.rsu_position[0]
    py = y - cfg.rsu_position[1]
    if px == 0.0 and py == 0.0:
        raise DegenerateGeometryError("position coincides with the RSU")
    ax, ay = cfg.rsu_array_axis
    along = ax * px + ay * py
    across = abs(ax * py - ay * px)
    theta = math.atan2(across, along)
    return min(max(theta, ANGLE_EPS), math.pi - ANGLE_EPS)


def true_angle(state: VehicleState, cfg: SceneConfig) -> float:
    return angle_from_rsu(state.x, state.y, cfg)


def rsu_distance(x, y, cfg: SceneConfig) -> float:
    return math.hypot(x - cfg.rsu_position[0], y - cfg.rsu_position[1])


def vehicle_box(cfg: SceneConfig, state: VehicleState):
    hl = cfg.vehicle_length / 2
    hw = cfg.vehicle_width / 2
    return np.array([[state.x - hl, state.y - hw, state.x + hl, state.y + hw]])


def ray_directions(cfg: SceneConfig) -> np.ndarray:
    """Unit directions of the H*W depth raster, fanned over (0, pi) from the axis.

    Ray ``(i, j)`` is the ``i * W + j``-th ray counter-clockwise from the axis.
    """
    n = cfg.raster_h * cfg.raster_w
    phi = (np.arange(n) + 0.5) * (math.pi / n)
    ax, ay = cfg.rsu_array_axis
    c, s = np.cos(phi), np.sin(phi)
    return np.stack([ax * c - ay * s, ax * s + ay * c], axis=1)


def _circles(cfg):
    return np.asarray(cfg.scatterers, dtype=np.float64).reshape(-1, 3)


def render_depth(cfg: SceneConfig, state: VehicleState | None, backend=None) -> np.ndarray:
    """First-hit distance from the RSU along each raster ray (max_range on a miss).

    ``state=None`` renders the scene without the vehicle.
    """
    boxes = vehicle_box(cfg, state) if state is not None else np.zeros((0, 4))
    d = raycast.cast_rays(cfg.rsu_position, ray_directions(cfg), boxes, _circles(cfg),
                          cfg.max_range, backend=backend)
    return d.reshape(cfg.raster_h, cfg.raster_w)


def grid_cell_centers(cfg: SceneConfig):
    (x0, x1), (y0, y1) = cfg.grid_extent
    xs = x0 + (np.arange(cfg.raster_w) + 0.5) * ((x1 - x0) / cfg.raster_w)
    ys = y0 + (np.arange(cfg.raster_h) + 0.5) * ((y1 - y0) / cfg.raster_h)
    return xs, ys


def render_grid(cfg: SceneConfig, state: VehicleState | None, backend=None) -> np.ndarray:
    """Top-down occupancy: 1 where a cell center lies in the vehicle or a scatterer."""
    boxes = vehicle_box(cfg, state) if state is not None else np.zeros((0, 4))
    xs, ys = grid_cell_centers(cfg)
    return raycast.rasterize(xs, ys, boxes, _circles(cfg), backend=backend)


def sense(cfg: SceneConfig, state: VehicleState) -> SensingFrame:
    return SensingFrame(render_grid(cfg, state), render_depth(cfg, state), cfg.depth_noise_var)


TRAJECTORY_COLUMNS = ("slot", "x", "y", "v", "lane", "theta_true")


def write_trajectory_csv(path, trajectories, cfg: SceneConfig):
    """Write one row per slot; ``slot`` counts across realizations in order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        slot = 0
        for traj in trajectories:
            for s in traj.states:
                w.writerow([slot, repr(s.x), repr(s.y), repr(s.v), s.lane,
                            repr(true_angle(s, cfg))])
                slot += 1


def read_trajectory_csv(path, slots_per_realization, slot_duration):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    states = [VehicleState(float(r["x"]), float(r["y"]), float(r["v"]), int(r["lane"]))
              for r in rows]
    m = slots_per_realization
    return [Trajectory(tuple(states[i:i + m]), slot_duration)
            for i in range(0, len(states), m)]
