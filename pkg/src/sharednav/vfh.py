"""Goal-agnostic VFH+ obstacle avoidance.

Pipeline per control tick:

  1. update the robot-centered certainty grid from the latest scan,
  2. reduce it to the primary polar histogram (obstacle magnitude per
     angular sector, with obstacle enlargement),
  3. threshold with hysteresis into the binary histogram,
  4. mask out sectors unreachable given the current turning circles,
  5. enumerate narrow/wide openings into candidate directions,
  6. pick the candidate with the lowest steering cost and turn it into a
     velocity command.

Histogram angles live in the robot frame with the forward direction pinned
at 90 deg, so sector index k means angle k * alpha_res and the steering
goal is the constant forward sector: the module only ever steers *away*
from obstacles, never toward a map goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .world import LaserScan, Pose2D, RobotSpec, Twist, wrap_angle

_EPS = 1e-9

_sector_angle_cache: dict[tuple[int, float], np.ndarray] = {}


def _sector_rel_angles(n: int, alpha_res: float) -> np.ndarray:
    """Robot-frame angle of each sector center (0 = forward), wrapped to (-pi, pi]."""
    key = (n, alpha_res)
    cached = _sector_angle_cache.get(key)
    if cached is None:
        raw = np.arange(n) * alpha_res - math.pi / 2.0
        cached = math.pi - np.mod(math.pi - raw, 2.0 * math.pi)
        _sector_angle_cache[key] = cached
    return cached


def active_window_range(w_s: int, cell_size: float) -> float:
    """Usable sensing radius of a w_s x w_s active window (its corner reach)."""
    if w_s < 3:
        raise ValueError("active window needs w_s >= 3")
    return math.sqrt(2.0) * (w_s - 1) / 2.0 * cell_size


@dataclass
class VfhParams:
    """Tuning constants for the histogram pipeline.

    ``b`` is tied to the window size by the zero-at-horizon constraint
    a - b*d_max^2 = 0; build instances with :meth:`for_window` so the tie
    holds.

    Threshold defaults follow from the blocking distance of a fully
    confirmed cell: magnitude crosses tau_high when such a cell comes
    within ~1.6 m and the sector frees again beyond ~2.0 m (the hysteresis
    band), so a confirmed wall at 1 m always blocks its sector while a
    single misreading (low certainty, quadratic weight) never does.
    """

    alpha_res: float = math.radians(5.0)
    a: float = 100.0
    b: float = 0.0
    c_max: int = 20
    tau_high: float | None = None
    tau_low: float | None = None
    s_max: int = 16
    mu1: float = 5.0
    mu2: float = 2.0
    mu3: float = 2.0
    r_r: float = 0.4
    safety_factor: float = 1.10
    d_s: float = 0.1
    turn_gain: float = 2.0
    target_sector: int = field(default=-1)

    def __post_init__(self) -> None:
        n = round(2.0 * math.pi / self.alpha_res)
        if abs(n * self.alpha_res - 2.0 * math.pi) > 1e-9 or n < 4:
            raise ValueError("alpha_res must evenly divide a full circle")
        if self.tau_high is None:
            self.tau_high = 0.85 * self.c_max**2 * self.a
        if self.tau_low is None:
            self.tau_low = 0.9 * self.tau_high
        if not self.tau_low < self.tau_high:
            raise ValueError("need tau_low < tau_high")
        if not self.mu1 > self.mu2 + self.mu3:
            raise ValueError("need mu1 > mu2 + mu3")
        if not 0 < self.s_max < n / 2:
            raise ValueError("need 0 < s_max < n_sectors/2")
        if self.target_sector < 0:
            self.target_sector = round((math.pi / 2.0) / self.alpha_res) % n

    @property
    def n_sectors(self) -> int:
        return round(2.0 * math.pi / self.alpha_res)

    @property
    def r_enlarged(self) -> float:
        """Obstacle enlargement radius: safety-scaled robot radius plus d_s."""
        return self.safety_factor * self.r_r + self.d_s

    @classmethod
    def for_window(cls, w_s: int, cell_size: float, **overrides) -> "VfhParams":
        d_max = active_window_range(w_s, cell_size)
        a = overrides.pop("a", 100.0)
        return cls(a=a, b=a / d_max**2, **overrides)


class HistogramGrid:
    """Robot-centered, world-aligned certainty grid.

    Recentering shifts whole cells (content moves, no interpolation); cell
    (row, col) covers world cell (center + offset), certainties saturate in
    [0, c_max].
    """

    def __init__(self, w_s: int = 60, cell_size: float = 0.1, c_max: int = 20):
        if w_s < 3:
            raise ValueError("w_s must be >= 3")
        self.w_s = w_s
        self.cell_size = cell_size
        self.c_max = c_max
        self.cells = np.zeros((w_s, w_s), dtype=np.int32)
        self.anchor: Pose2D | None = None
        self._center = (0, 0)  # world cell index (ix, iy) of the robot

    @property
    def d_max(self) -> float:
        return active_window_range(self.w_s, self.cell_size)

    @property
    def half(self) -> int:
        return self.w_s // 2

    def world_origin(self) -> tuple[float, float]:
        """World coordinates of the grid's lower-left corner."""
        cx, cy = self._center
        return (
            (cx - self.half) * self.cell_size,
            (cy - self.half) * self.cell_size,
        )

    def cell_centers(self, rows: np.ndarray, cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ox, oy = self.world_origin()
        return ox + (cols + 0.5) * self.cell_size, oy + (rows + 0.5) * self.cell_size

    def recenter(self, pose: Pose2D) -> None:
        new_center = (
            int(math.floor(pose.x / self.cell_size)),
            int(math.floor(pose.y / self.cell_size)),
        )
        if self.anchor is not None and new_center != self._center:
            dx = new_center[0] - self._center[0]
            dy = new_center[1] - self._center[1]
            self.cells = _shift2d(self.cells, dy, dx)
        self._center = new_center
        self.anchor = pose

    def copy(self) -> "HistogramGrid":
        g = HistogramGrid(self.w_s, self.cell_size, self.c_max)
        g.cells = self.cells.copy()
        g.anchor = self.anchor
        g._center = self._center
        return g


def _shift2d(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[r, c] = arr[r + dy, c + dx], zero-filled outside."""
    n, m = arr.shape
    out = np.zeros_like(arr)
    if abs(dy) >= n or abs(dx) >= m:
        return out
    src_r = slice(max(0, dy), min(n, n + dy))
    dst_r = slice(max(0, -dy), min(n, n - dy))
    src_c = slice(max(0, dx), min(m, m + dx))
    dst_c = slice(max(0, -dx), min(m, m - dx))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def update_grid(grid: HistogramGrid, scan: LaserScan, pose: Pose2D) -> HistogramGrid:
    """Fold one scan into the certainty grid.

    Per beam, every cell the beam traverses before the hit is decremented
    and the cell containing the hit point is incremented, both saturating
    in [0, c_max].  Beams apply in scan order.  Recentering on the robot
    happens first.
    """
    if scan.range_max < grid.d_max - 1e-6:
        raise ValueError(
            f"sensor range {scan.range_max} is below the window range {grid.d_max:.3f}"
        )
    grid.recenter(pose)

    angles = pose.theta + scan.beam_angles()
    gx0, gy0 = grid.world_origin()
    _kernels.scan_update_kernel(
        grid.cells,
        grid.c_max,
        grid.cell_size,
        gx0,
        gy0,
        pose.x,
        pose.y,
        angles,
        np.asarray(scan.ranges, dtype=float),
        scan.range_max,
    )
    return grid


def _active_cells_rel(grid: HistogramGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Certainties and positions of occupied cells relative to the anchor."""
    rows, cols = np.nonzero(grid.cells)
    if len(rows) == 0 or grid.anchor is None:
        empty = np.empty(0)
        return empty, empty, empty
    wx, wy = grid.cell_centers(rows, cols)
    return (
        grid.cells[rows, cols].astype(float),
        wx - grid.anchor.x,
        wy - grid.anchor.y,
    )


def build_primary(grid: HistogramGrid, params: VfhParams) -> np.ndarray:
    """Primary polar histogram: summed obstacle magnitude per sector.

    Each occupied cell contributes m = c^2 (a - b d^2) to every sector whose
    angle falls within +/- gamma of the cell bearing, where
    gamma = arcsin(r_enlarged / d); cells closer than the enlargement radius
    block a full half-circle.
    """
    n = params.n_sectors
    hist = np.zeros(n)
    c, dx, dy = _active_cells_rel(grid)
    if len(c) == 0:
        return hist

    theta = grid.anchor.theta
    d = np.hypot(dx, dy)
    m = c * c * np.maximum(params.a - params.b * d * d, 0.0)
    # histogram angle: robot-frame bearing shifted so forward sits at 90 deg
    phi = np.mod(np.arctan2(dy, dx) - theta + math.pi / 2.0, 2.0 * math.pi)
    r_e = params.r_enlarged
    gamma = np.where(d <= r_e, math.pi / 2.0, np.arcsin(np.minimum(r_e / np.maximum(d, _EPS), 1.0)))

    alpha = params.alpha_res
    k_lo = np.ceil((phi - gamma) / alpha - 1e-12).astype(int)
    k_hi = np.floor((phi + gamma) / alpha + 1e-12).astype(int)
    for lo, hi, mag in zip(k_lo, k_hi, m):
        if mag <= 0.0:
            continue
        idx = np.arange(lo, hi + 1) % n
        hist[idx] += mag
    return hist


def build_binary(
    primary: np.ndarray,
    previous: np.ndarray | None,
    params: VfhParams,
) -> np.ndarray:
    """Threshold with hysteresis: block above tau_high, clear below tau_low,
    keep the previous state in between."""
    if previous is None:
        blocked = np.zeros(len(primary), dtype=bool)
    else:
        if len(previous) != len(primary):
            raise ValueError("histogram lengths differ")
        blocked = previous.copy()
    blocked[primary > params.tau_high] = True
    blocked[primary < params.tau_low] = False
    return blocked


def build_masked(
    binary: np.ndarray,
    current_cmd: Twist,
    grid: HistogramGrid,
    params: VfhParams,
    robot: RobotSpec,
) -> np.ndarray:
    """Add kinematic infeasibility to the binary histogram.

    At speed v the robot moves on circles of radius v/omega_max beside
    itself; an occupied cell inside either circle (inflated by the
    enlargement radius) makes every direction beyond it on that side
    unreachable.  At standstill the turning radius is zero and the masked
    histogram equals the binary one.
    """
    masked = binary.copy()
    v = abs(current_cmd.linear)
    if v <= _EPS or robot.omega_max <= 0:
        return masked
    c, dx, dy = _active_cells_rel(grid)
    if len(c) == 0:
        return masked

    theta = grid.anchor.theta
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rx = cos_t * dx + sin_t * dy
    ry = -sin_t * dx + cos_t * dy
    bearing = np.arctan2(ry, rx)

    r_t = v / robot.omega_max
    limit = r_t + params.r_enlarged
    d_right = rx**2 + (ry + r_t) ** 2
    d_left = rx**2 + (ry - r_t) ** 2

    phi_r = -math.pi
    right = (d_right <= limit**2 + _EPS) & (bearing <= 0.0)
    if right.any():
        phi_r = float(bearing[right].max())
    phi_l = math.pi
    left = (d_left <= limit**2 + _EPS) & (bearing >= 0.0)
    if left.any():
        phi_l = float(bearing[left].min())

    rel = _sector_rel_angles(params.n_sectors, params.alpha_res)
    masked |= (rel > phi_l + _EPS) | (rel < phi_r - _EPS)
    return masked


@dataclass
class Candidate:
    """A steering option: a free sector plus how it was generated."""

    sector: int
    kind: str  # "narrow" | "wide_right" | "wide_left" | "target"
    cost: float = 0.0


def sector_distance(a: int, b: int, n: int) -> int:
    """Circular distance between sector indices, in sectors."""
    d = abs(a - b) % n
    return min(d, n - d)


def _round_toward(value: float, target: int, n: int) -> int:
    """Round a fractional sector, breaking .5 ties toward the target sector."""
    lo = math.floor(value)
    hi = math.ceil(value)
    if lo == hi:
        return lo % n
    frac = value - lo
    if abs(frac - 0.5) < 1e-9:
        d_lo = sector_distance(lo % n, target, n)
        d_hi = sector_distance(hi % n, target, n)
        return lo % n if d_lo <= d_hi else hi % n
    return round(value) % n


def find_candidates(masked: np.ndarray, params: VfhParams) -> list[Candidate]:
    """Candidate directions from the maximal free openings.

    Narrow openings (width < s_max) yield their center; wide openings yield
    a candidate s_max/2 inside each border, plus the target sector when it
    lies between them.  A fully free histogram collapses to the single
    target candidate; a fully blocked one yields no candidates.
    """
    n = params.n_sectors
    if len(masked) != n:
        raise ValueError("histogram length does not match params")
    free = ~np.asarray(masked, dtype=bool)
    target = params.target_sector
    if not free.any():
        return []
    if free.all():
        return [Candidate(target, "target")]

    # walk the circle starting just after a blocked sector
    start = int(np.argmin(free))  # some blocked sector
    openings: list[tuple[int, int]] = []  # (first free sector, run length)
    run_start, run_len = None, 0
    for i in range(1, n + 1):
        s = (start + i) % n
        if free[s]:
            if run_start is None:
                run_start = s
            run_len += 1
        elif run_start is not None:
            openings.append((run_start, run_len))
            run_start, run_len = None, 0

    out: list[Candidate] = []
    for first, length in openings:
        k_r = first
        k_l = (first + length - 1) % n
        if length < params.s_max:
            center = k_r + (length - 1) / 2.0
            out.append(Candidate(_round_toward(center, target, n), "narrow"))
        else:
            c_r = k_r + params.s_max / 2.0
            c_l = k_r + (length - 1) - params.s_max / 2.0
            out.append(Candidate(_round_toward(c_r, target, n), "wide_right"))
            out.append(Candidate(_round_toward(c_l, target, n), "wide_left"))
            # unwrap the target into run coordinates to test c_r <= t <= c_l
            t_run = (target - k_r) % n
            if c_r - k_r - 1e-9 <= t_run <= c_l - k_r + 1e-9:
                out.append(Candidate(target, "target"))
    return out


def select_direction(
    candidates: list[Candidate],
    previous_direction: int | None,
    params: VfhParams,
) -> int | None:
    """Lowest-cost candidate sector, or None when nothing is free.

    Cost weighs distance to the target sector, to the current heading (which
    the robot-frame histogram pins to the target sector), and to the
    previously selected direction; ties break toward the target, then toward
    the previous direction.
    """
    if not candidates:
        return None
    n = params.n_sectors
    target = params.target_sector
    heading = target
    prev = previous_direction if previous_direction is not None else target

    def cost(c: Candidate) -> float:
        return (
            params.mu1 * sector_distance(c.sector, target, n)
            + params.mu2 * sector_distance(c.sector, heading, n)
            + params.mu3 * sector_distance(c.sector, prev, n)
        )

    for c in candidates:
        c.cost = cost(c)
    best = min(
        candidates,
        key=lambda c: (
            c.cost,
            sector_distance(c.sector, target, n),
            sector_distance(c.sector, prev, n),
            c.sector,
        ),
    )
    return best.sector


def direction_to_twist(
    k_d: int | None,
    masked: np.ndarray,
    params: VfhParams,
    robot: RobotSpec,
) -> Twist:
    """Convert the selected sector into a velocity command.

    Turn rate is proportional to the angular offset from forward; forward
    speed scales with the cosine of that offset and with how clear the
    front half of the masked histogram is.  No direction means stop.
    """
    if k_d is None:
        return Twist(0.0, 0.0)
    offset = wrap_angle(k_d * params.alpha_res - math.pi / 2.0)
    angular = max(-robot.omega_max, min(robot.omega_max, params.turn_gain * offset))

    rel = _sector_rel_angles(params.n_sectors, params.alpha_res)
    front = np.abs(rel) <= math.pi / 2.0 + _EPS
    blocked_frac = float(np.asarray(masked)[front].mean())

    linear = robot.v_max * max(0.0, math.cos(offset)) * (1.0 - blocked_frac)
    return Twist(linear, angular)


class VfhPipeline:
    """One avoidance module instance: owns the grid and per-frame state."""

    def __init__(
        self,
        params: VfhParams | None = None,
        robot: RobotSpec | None = None,
        grid: HistogramGrid | None = None,
    ):
        self.robot = robot or RobotSpec()
        self.grid = grid or HistogramGrid()
        if params is None:
            params = VfhParams.for_window(self.grid.w_s, self.grid.cell_size)
        d_max = self.grid.d_max
        if abs(params.a - params.b * d_max**2) > 1e-6 * max(params.a, 1.0):
            raise ValueError("params.b is not tied to this window (a - b*d_max^2 != 0)")
        if params.c_max != self.grid.c_max:
            raise ValueError("params.c_max differs from the grid's c_max")
        self.params = params
        self.binary: np.ndarray | None = None
        self.previous_direction: int | None = None
        self.last_masked = np.zeros(params.n_sectors, dtype=bool)
        self.last_candidates: list[Candidate] = []
        self.last_direction: int | None = None

    def step(self, scan: LaserScan, pose: Pose2D, current_cmd: Twist = Twist()) -> Twist:
        """Run the full pipeline for one frame and return the avoidance command."""
        update_grid(self.grid, scan, pose)
        primary = build_primary(self.grid, self.params)
        self.binary = build_binary(primary, self.binary, self.params)
        masked = build_masked(self.binary, current_cmd, self.grid, self.params, self.robot)
        candidates = find_candidates(masked, self.params)
        k_d = select_direction(candidates, self.previous_direction, self.params)
        cmd = direction_to_twist(k_d, masked, self.params, self.robot)
        if k_d is not None:
            self.previous_direction = k_d
        self.last_masked = masked
        self.last_candidates = candidates
        self.last_direction = k_d
        return cmd
