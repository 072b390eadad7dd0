"""The fixed-timestep control loop shared by batch trials and live sessions.

Each tick: sense, snapshot for the stale-feedback buffer, get the operator
command, pass it through the delayed channel, run the avoidance pipeline,
blend, clamp and integrate, then resolve contacts by rejecting penetrating
motion components.  Contact episodes are debounced so a scrape along a
wall counts once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .blend import ArbitrationConfig, BlendContext, blend
from .operators import CommandTrace, Observation
from .vfh import VfhParams, VfhPipeline
from .world import (
    CONTROL_DT,
    ArenaMap,
    DelayedChannel,
    LaserScan,
    Pose2D,
    RobotSpec,
    SensorSpec,
    Twist,
    check_collision,
    raycast_scan,
    step_dynamics,
)

STATUS_RUNNING = "running"
STATUS_COMPLETED = "completed"
STATUS_TIMEOUT = "timeout"

# minimum contact-free time before a new contact counts as a new collision
COLLISION_DEBOUNCE_S = 0.5


@dataclass
class TrialMetrics:
    completion_time: float
    collisions: int
    path_length: float
    mode: str
    timed_out: bool

    def __post_init__(self) -> None:
        if self.collisions < 0:
            raise ValueError("collisions must be >= 0")


@dataclass
class TickState:
    """Snapshot of one control tick, for logging and the live bridge."""

    t: float
    pose: Pose2D
    scan: LaserScan | None
    u_h: Twist
    u_r: Twist
    u_f: Twist
    collisions: int
    status: str
    blocked_sectors: list[int] = field(default_factory=list)


class TrialRunner:
    def __init__(
        self,
        arena: ArenaMap,
        operator,
        arbitration: ArbitrationConfig,
        robot: RobotSpec | None = None,
        vfh_params: VfhParams | None = None,
        sensor: SensorSpec | None = None,
        command_delay: float = 1.0,
        observation_delay: float = 1.4,
        observation_rate: float = 2.5,
        dt: float = CONTROL_DT,
        timeout: float = 600.0,
        compute_autonomy: bool = True,
        always_scan: bool = False,
    ):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.arena = arena
        self.operator = operator
        self.arbitration = arbitration
        self.robot = robot or RobotSpec()
        self.sensor = sensor or SensorSpec()
        self.dt = dt
        self.timeout = timeout
        self.command_delay = command_delay
        self.observation_delay = observation_delay
        self.observation_period = 1.0 / observation_rate
        self.compute_autonomy = compute_autonomy
        # the waypoint operator only reads the stale pose, so pure-teleop
        # batch trials can skip ray casting entirely; live sessions always
        # scan because the UI displays the reflections
        self.needs_scan = compute_autonomy or always_scan

        self.pipeline = VfhPipeline(params=vfh_params, robot=self.robot)
        self.channel = DelayedChannel(command_delay)
        self.pose = arena.start
        self.tick_index = 0
        self.status = STATUS_RUNNING
        self.collisions = 0
        self.path_length = 0.0
        self._last_contact_t: float | None = None
        self._next_obs_t = 0.0
        self._observations: list[Observation] = []
        self._last_executed = Twist()
        self._last_pushed: Twist | None = None
        self.trace = CommandTrace()
        self.last_tick: TickState | None = None

    @property
    def t(self) -> float:
        return self.tick_index * self.dt

    def stale_observation(self, now: float) -> Observation | None:
        """Newest snapshot at least observation_delay old, or None."""
        cutoff = now - self.observation_delay
        best = None
        for obs in self._observations:
            if obs.t <= cutoff + 1e-9:
                best = obs
            else:
                break
        # prune everything older than the one we return
        if best is not None:
            while self._observations and self._observations[0].t < best.t:
                self._observations.pop(0)
        return best

    def tick(self) -> TickState:
        if self.status != STATUS_RUNNING:
            raise RuntimeError(f"trial already {self.status}")
        now = self.t

        scan = (
            raycast_scan(self.pose, self.arena, self.sensor) if self.needs_scan else None
        )
        if now + 1e-9 >= self._next_obs_t:
            self._observations.append(Observation(now, self.pose, scan))
            self._next_obs_t += self.observation_period

        u_cmd = self.operator.command(self.stale_observation(now), now)
        self.channel.push(now, u_cmd)
        if self._last_pushed is None or u_cmd != self._last_pushed:
            self.trace.append(now, u_cmd)
            self._last_pushed = u_cmd
        u_h = self.channel.sample(now)

        if self.compute_autonomy:
            u_r = self.pipeline.step(scan, self.pose, self._last_executed)
            blocked = self.pipeline.last_masked
            blocked_frac = float(blocked.mean())
        else:
            u_r = Twist()
            blocked = None
            blocked_frac = 0.0

        u_f = blend(u_h, u_r, self.arbitration, BlendContext(u_h, u_r, blocked_frac))
        executed = self.robot.clamp(u_f)

        candidate = step_dynamics(self.pose, executed, self.dt)
        new_pose, contact = self._resolve_contact(candidate)
        if contact:
            if (
                self._last_contact_t is None
                or now - self._last_contact_t > COLLISION_DEBOUNCE_S - 1e-9
            ):
                self.collisions += 1
            self._last_contact_t = now

        self.path_length += math.hypot(new_pose.x - self.pose.x, new_pose.y - self.pose.y)
        self.pose = new_pose
        self._last_executed = executed
        self.tick_index += 1

        gx, gy = self.arena.goal_center
        if math.hypot(self.pose.x - gx, self.pose.y - gy) <= self.arena.goal_radius:
            self.status = STATUS_COMPLETED
        elif self.t >= self.timeout - 1e-9:
            self.status = STATUS_TIMEOUT

        self.last_tick = TickState(
            t=self.t,
            pose=self.pose,
            scan=scan,
            u_h=u_h,
            u_r=u_r,
            u_f=u_f,
            collisions=self.collisions,
            status=self.status,
            blocked_sectors=[] if blocked is None else [int(i) for i in blocked.nonzero()[0]],
        )
        return self.last_tick

    def _resolve_contact(self, candidate: Pose2D) -> tuple[Pose2D, bool]:
        """Slide along obstacles by rejecting the penetrating motion component."""
        if not check_collision(candidate, self.arena, self.robot):
            return candidate, False
        slide_x = Pose2D(candidate.x, self.pose.y, candidate.theta)
        if not check_collision(slide_x, self.arena, self.robot):
            return slide_x, True
        slide_y = Pose2D(self.pose.x, candidate.y, candidate.theta)
        if not check_collision(slide_y, self.arena, self.robot):
            return slide_y, True
        return Pose2D(self.pose.x, self.pose.y, candidate.theta), True

    def run(self) -> TrialMetrics:
        while self.status == STATUS_RUNNING:
            self.tick()
        return self.metrics()

    def metrics(self) -> TrialMetrics:
        timed_out = self.status == STATUS_TIMEOUT
        completion = self.timeout if timed_out else self.t
        return TrialMetrics(
            completion_time=completion,
            collisions=self.collisions,
            path_length=self.path_length,
            mode=self.arbitration.mode,
            timed_out=timed_out,
        )
