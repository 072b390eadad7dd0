"""Deterministic 2D teleoperation world.

Fixed-timestep differential-drive kinematics, a rasterized arena with a
ray-cast range sensor, footprint collision checks, and the delayed command
channel used to model degraded communication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import _kernels

# Control tick of the whole artifact (20 Hz).
CONTROL_DT = 0.05

_MIN_RANGE = 1e-6


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return math.pi - ((math.pi - a) % (2.0 * math.pi))


@dataclass(frozen=True)
class Twist:
    """Velocity command: linear m/s, angular rad/s."""

    linear: float = 0.0
    angular: float = 0.0

    def is_finite(self) -> bool:
        return math.isfinite(self.linear) and math.isfinite(self.angular)


ZERO_TWIST = Twist(0.0, 0.0)


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class RobotSpec:
    """Kinematic limits and geometry of the vehicle.

    ``r_r`` is the effective radius used for obstacle enlargement (smaller
    than the physical footprint, which is what collisions are checked
    against).
    """

    r_r: float = 0.4
    footprint_radius: float = 0.53
    v_max: float = 0.8
    omega_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.r_r <= self.footprint_radius:
            raise ValueError(
                f"r_r must be in (0, footprint_radius]: r_r={self.r_r}, "
                f"footprint={self.footprint_radius}"
            )

    def clamp(self, cmd: Twist) -> Twist:
        return Twist(
            min(self.v_max, max(-self.v_max, cmd.linear)),
            min(self.omega_max, max(-self.omega_max, cmd.angular)),
        )


@dataclass(frozen=True)
class SensorSpec:
    """360 deg scan, 1 deg increment, 5 m range by default."""

    angle_min: float = -math.pi
    angle_increment: float = math.radians(1.0)
    n_beams: int = 360
    range_max: float = 5.0

    @property
    def angle_max(self) -> float:
        return self.angle_min + (self.n_beams - 1) * self.angle_increment

    def beam_angles(self) -> np.ndarray:
        return self.angle_min + np.arange(self.n_beams) * self.angle_increment


@dataclass
class LaserScan:
    angle_min: float
    angle_max: float
    angle_increment: float
    range_max: float
    ranges: np.ndarray

    def __post_init__(self) -> None:
        expected = (
            int(math.floor((self.angle_max - self.angle_min) / self.angle_increment + 1e-9))
            + 1
        )
        if len(self.ranges) != expected:
            raise ValueError(
                f"scan has {len(self.ranges)} ranges, expected {expected}"
            )

    def beam_angles(self) -> np.ndarray:
        return self.angle_min + np.arange(len(self.ranges)) * self.angle_increment


class ArenaError(ValueError):
    """Raised for malformed or infeasible arena configs."""


@dataclass
class ArenaMap:
    """Rasterized arena.

    ``prior`` holds the walls/obstacles known up front (what the operator
    and UI see); ``world`` additionally holds obstacles injected after the
    fact, which are only observable through live scans.  Both grids carry a
    one-cell occupied ring outside [0,width]x[0,height], so the inner wall
    surface sits exactly on the arena boundary.
    """

    width: float
    height: float
    resolution: float
    prior: np.ndarray
    world: np.ndarray
    start: Pose2D
    goal_center: tuple[float, float]
    goal_radius: float
    shapes: list[dict] = field(default_factory=list)
    hidden_shapes: list[dict] = field(default_factory=list)
    route: list[tuple[float, float]] = field(default_factory=list)

    @property
    def origin(self) -> tuple[float, float]:
        return (-self.resolution, -self.resolution)

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return (
            int(math.floor((x - ox) / self.resolution)),
            int(math.floor((y - oy) / self.resolution)),
        )

    def copy(self) -> "ArenaMap":
        return replace(
            self,
            prior=self.prior.copy(),
            world=self.world.copy(),
            shapes=list(self.shapes),
            hidden_shapes=list(self.hidden_shapes),
            route=list(self.route),
        )


def _rasterize_shape(grid: np.ndarray, shape: dict, res: float, origin: tuple[float, float]) -> None:
    ny, nx = grid.shape
    ox, oy = origin
    kind = shape.get("type", "rect")
    if kind == "rect":
        x0, y0, x1, y1 = shape["rect"]
        if x1 <= x0 or y1 <= y0:
            raise ArenaError(f"degenerate rect {shape['rect']}")
        ix0 = max(0, int(math.floor((x0 - ox) / res + 1e-9)))
        iy0 = max(0, int(math.floor((y0 - oy) / res + 1e-9)))
        ix1 = min(nx, int(math.ceil((x1 - ox) / res - 1e-9)))
        iy1 = min(ny, int(math.ceil((y1 - oy) / res - 1e-9)))
        grid[iy0:iy1, ix0:ix1] = True
    elif kind == "circle":
        cx, cy, r = shape["x"], shape["y"], shape["radius"]
        if r <= 0:
            raise ArenaError(f"circle radius must be positive: {shape}")
        ix0 = max(0, int(math.floor((cx - r - ox) / res)))
        iy0 = max(0, int(math.floor((cy - r - oy) / res)))
        ix1 = min(nx, int(math.ceil((cx + r - ox) / res)) + 1)
        iy1 = min(ny, int(math.ceil((cy + r - oy) / res)) + 1)
        if ix1 <= ix0 or iy1 <= iy0:
            return
        xs = ox + (np.arange(ix0, ix1) + 0.5) * res
        ys = oy + (np.arange(iy0, iy1) + 0.5) * res
        gx, gy = np.meshgrid(xs, ys)
        # nearest point of each cell rectangle to the circle center; the
        # tolerance keeps exactly-tangent cells free despite float noise
        dx = np.maximum(np.abs(gx - cx) - res / 2.0, 0.0)
        dy = np.maximum(np.abs(gy - cy) - res / 2.0, 0.0)
        grid[iy0:iy1, ix0:ix1] |= dx * dx + dy * dy < r * r - 1e-9
    else:
        raise ArenaError(f"unknown shape type {kind!r}")


def rasterize_obstacle(arena: ArenaMap, shape: dict, hidden: bool = True) -> None:
    """Add a shape to the world grid (and to the prior too unless hidden)."""
    _rasterize_shape(arena.world, shape, arena.resolution, arena.origin)
    if hidden:
        arena.hidden_shapes.append(shape)
    else:
        _rasterize_shape(arena.prior, shape, arena.resolution, arena.origin)
        arena.shapes.append(shape)


def load_arena(source) -> ArenaMap:
    """Build an ArenaMap from a YAML document (path, text, or parsed dict).

    Raises ArenaError with the offending field on validation failure.
    """
    if isinstance(source, dict):
        doc = source
    else:
        text = None
        if hasattr(source, "read"):
            text = source.read()
        else:
            s = str(source)
            if "\n" in s:
                text = s
            else:
                with open(s, "r", encoding="utf-8") as fh:
                    text = fh.read()
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ArenaError(f"arena config does not parse: {exc}") from exc
    if not isinstance(doc, dict) or "arena" not in doc:
        raise ArenaError("arena config must be a mapping with an 'arena' section")

    arena_sec = doc["arena"]
    try:
        width = float(arena_sec["width"])
        height = float(arena_sec["height"])
        res = float(arena_sec.get("resolution", 0.1))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArenaError(f"arena section needs numeric width/height: {exc}") from exc
    if width <= 0 or height <= 0 or res <= 0:
        raise ArenaError("arena width/height/resolution must be positive")

    nx = int(round(width / res)) + 2
    ny = int(round(height / res)) + 2
    grid = np.zeros((ny, nx), dtype=bool)
    # border ring just outside the arena interior
    grid[0, :] = grid[-1, :] = True
    grid[:, 0] = grid[:, -1] = True

    shapes: list[dict] = []
    for i, rect in enumerate(doc.get("walls", []) or []):
        shapes.append({"type": "rect", "rect": [float(v) for v in rect]})
    for i, obs in enumerate(doc.get("obstacles", []) or []):
        if not isinstance(obs, dict) or "type" not in obs:
            raise ArenaError(f"obstacles[{i}] must be a mapping with a 'type'")
        shapes.append(obs)
    for shape in shapes:
        _rasterize_shape(grid, shape, res, (-res, -res))

    try:
        s = doc["start"]
        start = Pose2D(float(s["x"]), float(s["y"]), float(s.get("theta", 0.0)))
        g = doc["goal"]
        goal_center = (float(g["x"]), float(g["y"]))
        goal_radius = float(g.get("radius", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArenaError(f"start/goal sections malformed: {exc}") from exc

    route = [(float(p[0]), float(p[1])) for p in (doc.get("route") or [])]

    arena = ArenaMap(
        width=width,
        height=height,
        resolution=res,
        prior=grid,
        world=grid.copy(),
        start=start,
        goal_center=goal_center,
        goal_radius=goal_radius,
        shapes=shapes,
    )
    arena.route = route

    spec = RobotSpec()
    if not arena.contains(start.x, start.y):
        raise ArenaError("start pose lies outside the arena")
    if check_collision(start, arena, spec):
        raise ArenaError("start pose collides with an obstacle or wall")
    if not arena.contains(*goal_center):
        raise ArenaError("goal center lies outside the arena")
    if _point_occupied(goal_center[0], goal_center[1], arena):
        raise ArenaError("goal center lies inside an obstacle or wall")
    return arena


def _point_occupied(x: float, y: float, arena: ArenaMap) -> bool:
    ix, iy = arena.cell_of(x, y)
    ny, nx = arena.world.shape
    if not (0 <= ix < nx and 0 <= iy < ny):
        return True
    return bool(arena.world[iy, ix])


def raycast_scan(pose: Pose2D, arena: ArenaMap, sensor: SensorSpec) -> LaserScan:
    """Cast every beam against the world grid.

    Each range is the distance at which the beam enters the first occupied
    cell, capped at range_max; beams that never hit read range_max.
    """
    if not arena.contains(pose.x, pose.y):
        raise ValueError(f"sensor pose ({pose.x:.2f},{pose.y:.2f}) outside arena bounds")
    angles = pose.theta + sensor.beam_angles()
    ox, oy = arena.origin
    ranges = _kernels.raycast_kernel(
        arena.world,
        pose.x,
        pose.y,
        arena.resolution,
        ox,
        oy,
        angles,
        sensor.range_max,
    )
    return LaserScan(
        angle_min=sensor.angle_min,
        angle_max=sensor.angle_max,
        angle_increment=sensor.angle_increment,
        range_max=sensor.range_max,
        ranges=ranges,
    )


def step_dynamics(pose: Pose2D, cmd: Twist, dt: float, spec: RobotSpec | None = None) -> Pose2D:
    """Unicycle integration step; the command is clamped first if a spec is given."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if spec is not None:
        cmd = spec.clamp(cmd)
    return Pose2D(
        pose.x + cmd.linear * math.cos(pose.theta) * dt,
        pose.y + cmd.linear * math.sin(pose.theta) * dt,
        wrap_angle(pose.theta + cmd.angular * dt),
    )


def check_collision(pose: Pose2D, arena: ArenaMap, spec: RobotSpec) -> bool:
    """True iff the footprint disc overlaps any occupied cell of the world grid."""
    r = spec.footprint_radius
    res = arena.resolution
    ox, oy = arena.origin
    ny, nx = arena.world.shape
    ix0 = max(0, int(math.floor((pose.x - r - ox) / res)))
    iy0 = max(0, int(math.floor((pose.y - r - oy) / res)))
    ix1 = min(nx, int(math.ceil((pose.x + r - ox) / res)) + 1)
    iy1 = min(ny, int(math.ceil((pose.y + r - oy) / res)) + 1)
    if ix1 <= ix0 or iy1 <= iy0:
        return False
    sub = arena.world[iy0:iy1, ix0:ix1]
    if not sub.any():
        return False
    iys, ixs = np.nonzero(sub)
    cx = ox + (ixs + ix0 + 0.5) * res
    cy = oy + (iys + iy0 + 0.5) * res
    dx = np.maximum(np.abs(pose.x - cx) - res / 2.0, 0.0)
    dy = np.maximum(np.abs(pose.y - cy) - res / 2.0, 0.0)
    return bool(np.any(dx * dx + dy * dy < r * r))


class DelayedChannel:
    """Command queue modelling a fixed transmission delay.

    The sampled output at time t is the newest command pushed at or before
    t - delay; before anything is that old, the output is a zero Twist.
    """

    def __init__(self, delay: float):
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.delay = delay
        self._queue: list[tuple[float, Twist]] = []

    def push(self, t: float, cmd: Twist) -> None:
        if self._queue and t < self._queue[-1][0]:
            raise ValueError(
                f"out-of-order timestamp {t} after {self._queue[-1][0]}"
            )
        self._queue.append((t, cmd))

    def sample(self, now: float) -> Twist:
        cutoff = now - self.delay
        # drop entries strictly older than the newest qualifying one
        while len(self._queue) >= 2 and self._queue[1][0] <= cutoff:
            self._queue.pop(0)
        if self._queue and self._queue[0][0] <= cutoff:
            return self._queue[0][1]
        return ZERO_TWIST


def delayed_sample(
    channel: DelayedChannel,
    push: tuple[float, Twist] | None,
    now: float,
) -> Twist:
    """Push-then-sample convenience matching the control loop's per-tick use."""
    if push is not None:
        channel.push(push[0], push[1])
    return channel.sample(now)
