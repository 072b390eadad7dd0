"""Scripted operator surrogates and exact command-trace replay.

The waypoint operator stands in for a human driving from stale feedback:
it steers toward the next waypoint using a pose that is observation-delay
seconds old, optionally overcorrecting and adding command noise, which
under a command delay reproduces the oscillatory style of real delayed
teleoperation.
"""

from __future__ import annotations

import math

import numpy as np
import random
from dataclasses import dataclass, field, replace

from .world import LaserScan, Pose2D, RobotSpec, Twist, wrap_angle


@dataclass(frozen=True)
class Observation:
    """A stale state snapshot as presented to an operator."""

    t: float
    pose: Pose2D
    scan: LaserScan | None = None


@dataclass(frozen=True)
class OperatorPolicy:
    waypoints: tuple[tuple[float, float], ...] = ()
    gain: float = 0.8  # rad/s per rad of bearing error
    command_noise: float = 0.0  # std-dev added to each command component
    observation_delay: float = 1.4
    decision_rate: float = 5.0
    overcorrection: float = 0.0
    capture_radius: float = 1.0
    # move-and-wait pacing: large corrections are executed as a
    # dead-reckoned turn burst followed by a settle period driving
    # straight, the way operators handle delayed feedback instead of
    # fighting it continuously
    turn_threshold: float = 0.25
    settle_time: float = 2.4
    # throttle down when the (stale) scan shows anything near the heading
    # cone; a delayed operator cannot afford speed they cannot react to
    caution_distance: float = 1.6
    caution_floor: float = 0.25
    # yielding: when sustained turn commands visibly change nothing (the
    # assistance is pulling the other way), release the stick and let the
    # robot steer itself for a moment
    resist_window: float = 2.5
    yield_duration: float = 3.0
    # stall recovery: when the stale pose stops progressing (either frozen
    # in place, or moving without getting closer to the waypoint) the
    # operator backs off and re-orients, the way real operators break out
    # of a stand-off with the avoidance module
    stall_window: float = 3.0
    stall_distance: float = 0.05
    # the progress window must outlast a full turn-burst-plus-settle so a
    # deliberate rotation is not mistaken for being stuck
    progress_window: float = 10.0
    progress_epsilon: float = 0.25
    recovery_duration: float = 1.5

    def __post_init__(self) -> None:
        if self.decision_rate <= 0:
            raise ValueError("decision_rate must be positive")
        if self.command_noise < 0 or self.overcorrection < 0:
            raise ValueError("noise and overcorrection must be >= 0")

    def with_waypoints(self, waypoints) -> "OperatorPolicy":
        return replace(self, waypoints=tuple((float(x), float(y)) for x, y in waypoints))


# The teleop-like profile overcorrects and is noisy, reproducing the
# oscillatory driving style seen under delayed feedback; the idealized
# profile is the clean baseline.
PRESETS: dict[str, OperatorPolicy] = {
    "idealized": OperatorPolicy(overcorrection=0.0, command_noise=0.0),
    "teleop_like": OperatorPolicy(overcorrection=0.9, command_noise=0.13),
}


def operator_preset(name: str) -> OperatorPolicy:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown operator preset {name!r}; have {sorted(PRESETS)}") from None


class WaypointOperator:
    """Delayed-feedback waypoint seeker with move-and-wait pacing.

    Decisions are recomputed at the policy's decision rate and held in
    between; each decision reads only the stale observation it is given.
    A large bearing error triggers a dead-reckoned turn burst (steering law
    angular = gain*(1+overcorrection)*error, held for the time that
    rotation needs, so the overcorrection factor directly overshoots the
    turn) followed by a settle period of driving straight while the stale
    feedback catches up.  Deterministic for a fixed seed: noise is drawn
    once per freshly computed decision, never while a burst is held.
    """

    def __init__(self, policy: OperatorPolicy, robot: RobotSpec, seed: int = 0):
        self.policy = policy
        self.robot = robot
        self.rng = random.Random(seed)
        self.waypoint_index = 0
        self._held = Twist()
        self._decisions = 0
        self._pose_history: list[tuple[float, float, float]] = []
        self._recovery_until = -1.0
        self._recovery_turn = 0.0
        self._burst_until = -1.0
        self._settle_until = -1.0
        self._yield_until = -1.0
        self._sent: list[tuple[float, float]] = []  # (t, angular command)
        self._heading_log: list[tuple[float, float]] = []  # (obs.t, theta)
        self._route_anchor: tuple[float, float] | None = None

    def command(self, observation: Observation | None, now: float) -> Twist:
        period = 1.0 / self.policy.decision_rate
        if observation is not None and now + 1e-9 >= self._decisions * period:
            self._held = self._decide(observation, now)
            self._decisions = int(math.floor(now / period + 1e-9)) + 1
            self._sent.append((now, self._held.angular))
            cutoff = now - self.policy.resist_window - self.policy.observation_delay - 2.0
            while self._sent and self._sent[0][0] < cutoff:
                self._sent.pop(0)
        return self._held

    def _decide(self, obs: Observation, now: float) -> Twist:
        pol = self.policy
        if self.waypoint_index >= len(pol.waypoints):
            return Twist()
        pose = obs.pose
        if self._route_anchor is None:
            self._route_anchor = (pose.x, pose.y)
        while self.waypoint_index < len(pol.waypoints):
            wx, wy = pol.waypoints[self.waypoint_index]
            if math.hypot(wx - pose.x, wy - pose.y) <= pol.capture_radius:
                captured = True
            else:
                # passed the waypoint's gate plane (perpendicular to the
                # route leg): keep going rather than circling back
                ax, ay = (
                    pol.waypoints[self.waypoint_index - 1]
                    if self.waypoint_index > 0
                    else self._route_anchor
                )
                lx, ly = wx - ax, wy - ay
                captured = (pose.x - wx) * lx + (pose.y - wy) * ly > 0.0
            if not captured:
                break
            self.waypoint_index += 1
            self._pose_history.clear()
        if self.waypoint_index >= len(pol.waypoints):
            return Twist()
        wx, wy = pol.waypoints[self.waypoint_index]

        err = wrap_angle(math.atan2(wy - pose.y, wx - pose.x) - pose.theta)
        dist_wp = math.hypot(wx - pose.x, wy - pose.y)

        if now < self._recovery_until:
            return self._held
        caution = self._caution_factor(obs)
        stall = self._stalled(obs, dist_wp, mid_maneuver=now < self._settle_until)
        if stall == "frozen":
            self._recovery_until = now + pol.recovery_duration
            self._burst_until = self._settle_until = -1.0
            self._recovery_turn = self._recovery_direction(obs, err)
            self._pose_history.clear()
            return self._noisy(Twist(-self.robot.v_max / 2.0, self._recovery_turn))

        # releasing the stick means coasting carefully, not cruising
        yield_cmd = Twist(max(0.0, self.robot.v_max * math.cos(err)) * caution * 0.6, 0.0)
        if now < self._yield_until:
            return self._noisy(yield_cmd)
        if stall == "circling" or self._robot_resists(obs):
            # moving without getting anywhere: release the stick and let
            # whatever is steering (the blend, or plain momentum) sort it out
            self._yield_until = now + pol.yield_duration
            self._burst_until = self._settle_until = -1.0
            self._pose_history.clear()
            return self._noisy(yield_cmd)

        if now < self._burst_until:
            return self._held
        if now < self._settle_until:
            return self._noisy(Twist(max(0.0, self.robot.v_max * math.cos(err)) * caution, 0.0))

        angular = pol.gain * (1.0 + pol.overcorrection) * err
        angular = max(-self.robot.omega_max, min(self.robot.omega_max, angular))
        linear = max(0.0, self.robot.v_max * math.cos(err)) * caution
        cmd = self._noisy(Twist(linear, angular))
        if abs(err) > pol.turn_threshold and abs(angular) > 1e-6:
            # dead-reckon the turn: hold the command long enough to rotate
            # through the (overcorrected) error, then settle
            burst = min(abs(err) * (1.0 + pol.overcorrection) / abs(angular), 5.0)
            self._burst_until = now + burst
            self._settle_until = self._burst_until + pol.settle_time
        return cmd

    def _robot_resists(self, obs: Observation) -> bool:
        """Sustained turn commands with no observed heading change."""
        pol = self.policy
        log = self._heading_log
        if not log or obs.t > log[-1][0]:
            log.append((obs.t, obs.pose.theta))
        while log and log[0][0] < obs.t - pol.resist_window - 1e-9:
            log.pop(0)
        if len(log) < 2 or log[-1][0] - log[0][0] < pol.resist_window - 0.5:
            return False
        turned = sum(
            abs(wrap_angle(b[1] - a[1])) for a, b in zip(log, log[1:])
        )
        if turned > 0.3:
            return False
        # only count steering commands whose effect the stale feedback has
        # had time to show; anything fresher would be falsely blamed
        lo = log[0][0] - 0.5
        hi = log[-1][0] - 1.5
        sent = [abs(a) for t, a in self._sent if lo <= t <= hi and abs(a) > 0.1]
        if len(sent) < 3:
            return False
        return sum(sent) / len(sent) > 0.5 * self.robot.omega_max

    def _caution_factor(self, obs: Observation) -> float:
        pol = self.policy
        scan = obs.scan
        if scan is None or pol.caution_distance <= 0:
            return 1.0
        angles = scan.beam_angles()
        ahead = np.abs(angles) <= math.pi / 4.0
        if not ahead.any():
            return 1.0
        nearest = float(np.min(np.asarray(scan.ranges)[ahead]))
        if nearest >= pol.caution_distance:
            return 1.0
        return max(pol.caution_floor, nearest / pol.caution_distance)

    def _recovery_direction(self, obs: Observation, err: float) -> float:
        """Back-off turn direction: toward the side with more scanned room,
        falling back to alternation when no scan is available."""
        scan = obs.scan
        if scan is not None:
            angles = scan.beam_angles()
            left = right = 0.0
            n_left = n_right = 0
            for a, r in zip(angles, scan.ranges):
                if 0.0 < a <= 1.75:
                    left += r
                    n_left += 1
                elif -1.75 <= a < 0.0:
                    right += r
                    n_right += 1
            if n_left and n_right:
                side = 1.0 if left / n_left >= right / n_right else -1.0
                return side * self.robot.omega_max
        if self._recovery_turn == 0.0:
            return math.copysign(self.robot.omega_max, err if err != 0 else 1.0)
        return -self._recovery_turn

    def _noisy(self, cmd: Twist) -> Twist:
        noise = self.policy.command_noise
        if noise <= 0:
            return cmd
        return Twist(
            cmd.linear + self.rng.gauss(0.0, noise),
            cmd.angular + self.rng.gauss(0.0, noise),
        )

    def _stalled(self, obs: Observation, dist_wp: float, mid_maneuver: bool = False) -> str | None:
        """Distinguish being frozen in place from circling without progress."""
        pol = self.policy
        hist = self._pose_history
        if not hist or obs.t > hist[-1][0]:
            hist.append((obs.t, obs.pose.x, obs.pose.y, dist_wp))
        window = max(pol.stall_window, pol.progress_window)
        while hist and hist[0][0] < obs.t - window - 1e-9:
            hist.pop(0)
        if not hist:
            return None
        span = hist[-1][0] - hist[0][0]
        if span >= pol.stall_window - 0.5:
            recent = [h for h in hist if h[0] >= obs.t - pol.stall_window - 1e-9]
            moved = max(math.hypot(x - obs.pose.x, y - obs.pose.y) for _, x, y, _ in recent)
            if moved < pol.stall_distance:
                return "frozen"
        # a deliberate turn pauses progress; only judge it afterwards
        if not mid_maneuver and span >= pol.progress_window - 0.5:
            best_earlier = min(d for _, _, _, d in hist[:-1])
            if dist_wp > best_earlier - pol.progress_epsilon:
                return "circling"
        return None


class NullSource:
    """No operator input: always the zero command."""

    def command(self, observation: Observation | None, now: float) -> Twist:
        return Twist()


@dataclass
class CommandTrace:
    """Ordered (timestamp, Twist) pairs with strictly increasing timestamps."""

    entries: list[tuple[float, Twist]] = field(default_factory=list)

    def append(self, t: float, cmd: Twist) -> None:
        if self.entries and t <= self.entries[-1][0]:
            raise ValueError(f"trace timestamps must strictly increase ({t} after {self.entries[-1][0]})")
        self.entries.append((t, cmd))

    def sample(self, now: float) -> Twist:
        return replay_step(self, now)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# timestamp linear angular\n")
            for t, cmd in self.entries:
                fh.write(f"{t!r} {cmd.linear!r} {cmd.angular!r}\n")

    @classmethod
    def load(cls, path) -> "CommandTrace":
        trace = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                t_s, lin_s, ang_s = line.split()
                trace.append(float(t_s), Twist(float(lin_s), float(ang_s)))
        return trace


def replay_step(trace: CommandTrace, now: float) -> Twist:
    """Zero-order hold over the trace; zero before the first entry."""
    held = Twist()
    for t, cmd in trace.entries:
        if t <= now + 1e-12:
            held = cmd
        else:
            break
    return held


class ReplaySource:
    """Feeds a recorded trace back into the control loop.

    Keeps a cursor so per-tick sampling stays O(1) over a long run.
    """

    def __init__(self, trace: CommandTrace):
        self.trace = trace
        self._i = 0
        self._held = Twist()

    def command(self, observation: Observation | None, now: float) -> Twist:
        entries = self.trace.entries
        while self._i < len(entries) and entries[self._i][0] <= now + 1e-12:
            self._held = entries[self._i][1]
            self._i += 1
        return self._held
