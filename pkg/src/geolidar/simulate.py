"""Synthetic world generation and LiDAR scan simulation.

Worlds are boxes on a gently sloped ground plane with a street-style
trajectory threading between them; scans are ray-cast per (channel, azimuth)
direction against the boxes and the plane.  Everything is deterministic from
seeds (NumPy PCG64 via ``default_rng``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evalmetrics import Trajectory
from .geom import Pose, quat_from_axis_angle, quat_mul
from .refmap import BuildingFootprint, ElevationGrid

SYNTH_CRS = "local-meters"
TRAJECTORY_CLEARANCE = 4.0  # generation-time margin; the spec floor is 1 m
_RAY_T_MIN = 0.05


@dataclass
class SensorModel:
    """Spinning-LiDAR ray pattern plus range noise."""

    channels: int = 16
    horizontal_steps: int = 512
    vfov_deg: tuple[float, float] = (-25.0, 5.0)
    max_range: float = 60.0
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.channels < 1 or self.horizontal_steps < 1:
            raise ValueError("channels and horizontal_steps must be at least 1")
        if self.max_range <= 0 or self.noise_sigma < 0:
            raise ValueError("invalid sensor range or noise")

    def directions(self, az_phase: float = 0.0, el_offset: float = 0.0) -> np.ndarray:
        """Unit ray directions in the sensor frame, (channels * steps, 3).

        az_phase and el_offset shift the whole pattern; per-frame values model
        the spin phase and mount jitter of a real sensor, whose rays never
        retrace the previous frame exactly.
        """
        az = az_phase + 2.0 * math.pi * np.arange(self.horizontal_steps) / self.horizontal_steps
        if self.channels == 1:
            el = np.array([math.radians(0.5 * (self.vfov_deg[0] + self.vfov_deg[1]))])
        else:
            el = np.radians(np.linspace(self.vfov_deg[0], self.vfov_deg[1], self.channels))
        el = el + el_offset
        az_g, el_g = np.meshgrid(az, el)
        ce = np.cos(el_g).ravel()
        return np.column_stack(
            [ce * np.cos(az_g).ravel(), ce * np.sin(az_g).ravel(), np.sin(el_g.ravel())]
        )


@dataclass
class SyntheticWorld:
    footprints: list[BuildingFootprint]
    ground: ElevationGrid
    trajectory: Trajectory
    seed: int
    extent: float
    plane: tuple[float, float, float]  # z = g0 + gx*x + gy*y
    # gentle world-fixed undulation, rows (amplitude, kx, ky, phase); without
    # it a perfectly planar ground makes zero motion an exact optimum of
    # point-to-point scan matching between identical ray patterns
    bumps: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    boxes: np.ndarray = field(default=None)  # (B, 6): xmin ymin zmin xmax ymax zmax

    def ground_height(self, x, y):
        g0, gx, gy = self.plane
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = g0 + gx * x + gy * y
        for amp, kx, ky, phase in self.bumps:
            z = z + amp * np.cos(kx * x + ky * y + phase)
        return z


def _rounded_rect_path(half: float, corner: float, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """CCW rounded-rectangle loop centered at the origin.

    Returns positions (N, 2) and headings (N,) sampled every `spacing` meters.
    """
    s_len = 2.0 * (half - corner)
    arc = 0.5 * math.pi * corner
    segs = []  # (length, kind, anchor, heading/angle0)
    for k in range(4):
        heading = 0.5 * math.pi * k
        segs.append(("line", s_len, heading))
        segs.append(("arc", arc, heading))
    perimeter = 4 * (s_len + arc)
    s_vals = np.arange(0.0, perimeter, spacing)

    # segment start points, walked CCW from the bottom-left straight start
    pos = np.array([-(half - corner), -half])
    starts = []
    for kind, length, heading in segs:
        starts.append(pos.copy())
        if kind == "line":
            pos = pos + s_len * np.array([math.cos(heading), math.sin(heading)])
        else:
            a0 = heading - 0.5 * math.pi
            center = pos - corner * np.array([math.cos(a0), math.sin(a0)])
            pos = center + corner * np.array(
                [math.cos(a0 + 0.5 * math.pi), math.sin(a0 + 0.5 * math.pi)]
            )

    points = np.zeros((len(s_vals), 2))
    yaws = np.zeros(len(s_vals))
    bounds = np.cumsum([length for _, length, _ in segs])
    seg_idx = np.searchsorted(bounds, s_vals, side="right")
    seg_s = s_vals - np.concatenate([[0.0], bounds[:-1]])[seg_idx]
    for i, (kind, _, heading) in enumerate(segs):
        m = seg_idx == i
        if not m.any():
            continue
        if kind == "line":
            d = np.array([math.cos(heading), math.sin(heading)])
            points[m] = starts[i] + seg_s[m, None] * d
            yaws[m] = heading
        else:
            a0 = heading - 0.5 * math.pi
            center = starts[i] - corner * np.array([math.cos(a0), math.sin(a0)])
            ang = a0 + seg_s[m] / corner
            points[m] = center + corner * np.column_stack([np.cos(ang), np.sin(ang)])
            yaws[m] = ang + 0.5 * math.pi
    return points, yaws


def _rect_distance(px: np.ndarray, py: np.ndarray, rect: np.ndarray) -> np.ndarray:
    dx = np.maximum(np.maximum(rect[0] - px, px - rect[2]), 0.0)
    dy = np.maximum(np.maximum(rect[1] - py, py - rect[3]), 0.0)
    return np.hypot(dx, dy)


def generate_world(
    seed: int,
    extent: float = 200.0,
    building_count: int = 12,
    frame_spacing: float = 2.0,
    path: str = "loop",
    sensor_height: float = 1.8,
    corner_radius: float = 18.0,
    roughness: float = 0.05,
    clutter_count: int | None = None,
) -> SyntheticWorld:
    """Deterministic box-world: buildings lining a vehicle-style trajectory.

    `path` is "loop" (rounded rectangle) or "straight" (along +x through the
    middle).  `roughness` scales the gentle ground undulation; 0 gives an
    exactly planar ground.  `clutter_count` pole-like obstacles (default
    2 per building) appear in scans but not in the prior map, mimicking
    street furniture.  Raises when the requested building count cannot be
    placed.
    """
    if extent <= 50:
        raise ValueError("extent must exceed 50 m")
    rng = np.random.default_rng(seed)
    g0 = rng.uniform(0.0, 2.0)
    gx, gy = rng.uniform(-0.005, 0.005, size=2)
    n_bumps = 24
    amps = rng.uniform(0.5, 1.0, size=n_bumps) * roughness
    wavelengths = rng.uniform(4.0, 18.0, size=n_bumps)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=n_bumps)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n_bumps)
    k = 2.0 * math.pi / wavelengths
    bumps = np.column_stack([amps, k * np.cos(angles), k * np.sin(angles), phases])
    if roughness == 0.0:
        bumps = np.zeros((0, 4))

    def height(x, y):
        z = g0 + gx * x + gy * y
        for amp, bkx, bky, phase in bumps:
            z = z + amp * np.cos(bkx * x + bky * y + phase)
        return z

    margin = 42.0
    if path == "loop":
        half = 0.5 * extent - margin
        if half <= corner_radius + 1.0:
            raise ValueError("extent too small for a loop trajectory")
        xy, yaws = _rounded_rect_path(half, corner_radius, frame_spacing)
    elif path == "straight":
        xs = np.arange(-0.5 * extent + margin, 0.5 * extent - margin, frame_spacing)
        xy = np.column_stack([xs, np.zeros_like(xs)])
        yaws = np.zeros(len(xs))
    else:
        raise ValueError(f"unknown path kind {path!r}")

    z = height(xy[:, 0], xy[:, 1]) + sensor_height
    # small per-frame pitch/roll, like a real vehicle on its suspension; this
    # also de-aliases the otherwise identical ground-ring pattern per frame
    pitches = rng.uniform(-0.007, 0.007, size=len(xy))
    rolls = rng.uniform(-0.007, 0.007, size=len(xy))
    poses = [
        Pose(
            np.array([x, y, zz]),
            quat_mul(
                quat_from_axis_angle([0, 0, 1], yaw),
                quat_mul(
                    quat_from_axis_angle([0, 1, 0], pitch),
                    quat_from_axis_angle([1, 0, 0], roll),
                ),
            ),
        )
        for (x, y), zz, yaw, pitch, roll in zip(xy, z, yaws, pitches, rolls)
    ]
    trajectory = Trajectory.from_poses(poses)

    rects: list[np.ndarray] = []
    heights: list[float] = []
    limit = 0.5 * extent - 1.0
    attempts = 0
    max_attempts = 150 * max(building_count, 1)
    while len(rects) < building_count and attempts < max_attempts:
        attempts += 1
        k = int(rng.integers(len(xy)))
        side = 1.0 if rng.random() < 0.5 else -1.0
        lateral = rng.uniform(10.0, 26.0)
        w, l = rng.uniform(8.0, 30.0, size=2)
        normal = np.array([-math.sin(yaws[k]), math.cos(yaws[k])])
        center = xy[k] + side * normal * (lateral + 0.5 * max(w, l))
        rect = np.array(
            [center[0] - 0.5 * w, center[1] - 0.5 * l, center[0] + 0.5 * w, center[1] + 0.5 * l]
        )
        if rect[0] < -limit or rect[1] < -limit or rect[2] > limit or rect[3] > limit:
            continue
        if _rect_distance(xy[:, 0], xy[:, 1], rect).min() < TRAJECTORY_CLEARANCE:
            continue
        inflated = rect + np.array([-2.0, -2.0, 2.0, 2.0])
        if any(
            not (inflated[2] < r[0] or r[2] < inflated[0] or inflated[3] < r[1] or r[3] < inflated[1])
            for r in rects
        ):
            continue
        rects.append(rect)
        heights.append(float(rng.uniform(4.0, 20.0)))
    if len(rects) < building_count:
        raise ValueError(
            f"could not place {building_count} buildings in a {extent:.0f} m world "
            f"after {max_attempts} attempts"
        )

    footprints = [
        BuildingFootprint(
            np.array([[r[0], r[1]], [r[2], r[1]], [r[2], r[3]], [r[0], r[3]]]),
            height=h,
        )
        for r, h in zip(rects, heights)
    ]
    boxes = np.zeros((len(rects), 6))
    for i, (r, h) in enumerate(zip(rects, heights)):
        cx, cy = 0.5 * (r[0] + r[2]), 0.5 * (r[1] + r[3])
        base = float(height(cx, cy))
        boxes[i] = [r[0], r[1], base, r[2], r[3], base + h]

    # street furniture close to the road: parked-car boxes and poles.  Scans
    # see them, the prior map does not, mirroring real clutter; their compact
    # footprints anchor the scan-to-scan alignment along the street
    if clutter_count is None:
        clutter_count = 3 * building_count
    clutter: list[list[float]] = []
    attempts = 0
    while len(clutter) < clutter_count and attempts < 80 * max(clutter_count, 1):
        attempts += 1
        k = int(rng.integers(len(xy)))
        side = 1.0 if rng.random() < 0.5 else -1.0
        if rng.random() < 0.5:  # parked car
            lateral = rng.uniform(3.0, 5.5)
            w, l = rng.uniform(1.7, 2.1), rng.uniform(4.0, 5.0)
            obj_h = rng.uniform(1.4, 1.8)
        else:  # pole
            lateral = rng.uniform(4.5, 9.0)
            w = l = rng.uniform(0.2, 0.5)
            obj_h = rng.uniform(2.5, 5.5)
        heading = yaws[k]
        normal = np.array([-math.sin(heading), math.cos(heading)])
        along = np.array([math.cos(heading), math.sin(heading)])
        c = xy[k] + side * normal * lateral
        # orient the long car side roughly along the street, axis-aligned
        if abs(along[0]) >= abs(along[1]):
            hx, hy = 0.5 * l, 0.5 * w
        else:
            hx, hy = 0.5 * w, 0.5 * l
        rect = np.array([c[0] - hx, c[1] - hy, c[0] + hx, c[1] + hy])
        if rect[0] < -limit or rect[1] < -limit or rect[2] > limit or rect[3] > limit:
            continue
        if _rect_distance(xy[:, 0], xy[:, 1], rect).min() < 1.2:
            continue
        inflated = rect + np.array([-1.0, -1.0, 1.0, 1.0])
        if any(
            not (inflated[2] < r[0] or r[2] < inflated[0] or inflated[3] < r[1] or r[3] < inflated[1])
            for r in rects
        ):
            continue
        if any(
            not (rect[2] < r[0] or r[2] < rect[0] or rect[3] < r[1] or r[3] < rect[1])
            for r in (np.asarray(cl[:2] + cl[3:5]) for cl in clutter)
        ):
            continue
        base = float(height(c[0], c[1]))
        clutter.append([rect[0], rect[1], base, rect[2], rect[3], base + obj_h])
    if clutter:
        boxes = np.vstack([boxes, np.asarray(clutter)])

    pad = 8.0
    n_cells = int(math.ceil(extent + 2 * pad))
    x0 = y0 = -0.5 * extent - pad
    jj, ii = np.meshgrid(np.arange(n_cells), np.arange(n_cells))
    ground = ElevationGrid(
        x0=x0,
        y0=y0,
        cell_size=1.0,
        nrows=n_cells,
        ncols=n_cells,
        values=height(x0 + (jj + 0.5), y0 + (ii + 0.5)),
        crs=SYNTH_CRS,
    )

    return SyntheticWorld(
        footprints=footprints,
        ground=ground,
        trajectory=trajectory,
        seed=seed,
        extent=extent,
        plane=(g0, gx, gy),
        bumps=bumps,
        boxes=boxes,
    )


def _raycast_ground(world: SyntheticWorld, o: np.ndarray, d: np.ndarray, max_range: float) -> np.ndarray:
    """First ray-ground crossing per ray.

    The crossing must lie where the ray height is within the total bump
    amplitude of the base plane, a narrow parameter band around the analytic
    plane intersection; that band is marched and the first bracket refined by
    bisection.
    """
    g0, gx, gy = world.plane
    denom = d[:, 2] - gx * d[:, 0] - gy * d[:, 1]
    num = g0 + gx * o[0] + gy * o[1] - o[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = num / denom
    t_plane = np.where(np.isfinite(t_plane) & (t_plane > _RAY_T_MIN), t_plane, np.inf)
    if len(world.bumps) == 0:
        return t_plane

    band = float(np.sum(np.abs(world.bumps[:, 0]))) + 0.02
    half_width = band / np.maximum(np.abs(denom), 1e-3)
    lo_t = np.maximum(t_plane - half_width, _RAY_T_MIN)
    hi_t = np.minimum(t_plane + half_width, max_range + 1.0)
    valid = np.isfinite(t_plane) & (t_plane <= max_range + 1.0)

    t = np.full(len(d), np.inf)
    if not valid.any():
        return t
    n_steps = 24
    lo_v = lo_t[valid]
    span = (hi_t[valid] - lo_v) / n_steps
    dv = d[valid]
    above_prev = np.ones(len(dv), dtype=bool)  # sensor is above ground
    lo = np.full(len(dv), np.nan)
    hi = np.full(len(dv), np.nan)
    found = np.zeros(len(dv), dtype=bool)
    for i in range(n_steps + 1):
        ti = lo_v + span * i
        above = (
            o[2] + dv[:, 2] * ti
            - world.ground_height(o[0] + dv[:, 0] * ti, o[1] + dv[:, 1] * ti)
        ) > 0.0
        new = ~found & above_prev & ~above & (i > 0)
        lo[new] = ti[new] - span[new]
        hi[new] = ti[new]
        found |= new
        above_prev = above
    if not found.any():
        return t
    idx = np.flatnonzero(valid)[found]
    lo_b = lo[found]
    hi_b = hi[found]
    db = d[idx]
    for _ in range(22):
        mid = 0.5 * (lo_b + hi_b)
        above_mid = (
            o[2] + db[:, 2] * mid
            - world.ground_height(o[0] + db[:, 0] * mid, o[1] + db[:, 1] * mid)
        ) > 0.0
        lo_b = np.where(above_mid, mid, lo_b)
        hi_b = np.where(above_mid, hi_b, mid)
    t[idx] = 0.5 * (lo_b + hi_b)
    return t


def simulate_scan(world: SyntheticWorld, pose: Pose, sensor: SensorModel, seed=0) -> np.ndarray:
    """Ray-cast one scan from the given pose; returns sensor-frame points.

    The nearest hit per ray against building boxes and the ground surface,
    within max_range, with additive Gaussian range noise; misses return
    nothing.  The seed drives both the per-frame ray-pattern jitter and the
    range noise, so a frame is reproducible from (world, pose, sensor, seed).
    """
    o = pose.t
    if abs(o[0]) > 0.5 * world.extent + 1.0 or abs(o[1]) > 0.5 * world.extent + 1.0:
        raise ValueError("scan pose lies outside the world extent")
    rng = np.random.default_rng(seed)
    az_phase = rng.uniform(0.0, 2.0 * math.pi / sensor.horizontal_steps)
    if sensor.channels > 1:
        el_span = math.radians(
            (sensor.vfov_deg[1] - sensor.vfov_deg[0]) / (sensor.channels - 1)
        )
    else:
        el_span = 0.0
    el_offset = rng.uniform(-0.4, 0.4) * el_span
    dirs_sensor = sensor.directions(az_phase, el_offset)
    d = dirs_sensor @ pose.rotation_matrix().T

    t_best = _raycast_ground(world, o, d, sensor.max_range)
    if len(world.boxes):
        bmin = world.boxes[:, :3]
        bmax = world.boxes[:, 3:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (bmin[None] - o) / d[:, None, :]
            tb = (bmax[None] - o) / d[:, None, :]
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        lo[np.isnan(lo)] = -np.inf
        hi[np.isnan(hi)] = np.inf
        t_enter = lo.max(axis=2)
        t_exit = hi.min(axis=2)
        ok = (t_enter <= t_exit) & (t_enter > _RAY_T_MIN)
        t_box = np.where(ok, t_enter, np.inf).min(axis=1)
        t_best = np.minimum(t_best, t_box)

    hit = t_best <= sensor.max_range
    ranges = t_best[hit]
    if sensor.noise_sigma > 0:
        ranges = ranges + rng.normal(0.0, sensor.noise_sigma, len(ranges))
    return dirs_sensor[hit] * ranges[:, None]
