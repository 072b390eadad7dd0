"""Shared-control navigation: VFH+ avoidance blended with teleoperation,
inside a deterministic 2D simulator with latency injection."""

from .blend import ArbitrationConfig, BlendContext, blend, set_mode
from .engine import TrialMetrics, TrialRunner
from .operators import CommandTrace, Observation, OperatorPolicy, WaypointOperator
from .vfh import HistogramGrid, VfhParams, VfhPipeline, active_window_range
from .world import (
    ArenaMap,
    DelayedChannel,
    LaserScan,
    Pose2D,
    RobotSpec,
    SensorSpec,
    Twist,
    check_collision,
    load_arena,
    raycast_scan,
    step_dynamics,
    wrap_angle,
)

__all__ = [
    "ArbitrationConfig",
    "ArenaMap",
    "BlendContext",
    "CommandTrace",
    "DelayedChannel",
    "HistogramGrid",
    "LaserScan",
    "Observation",
    "OperatorPolicy",
    "Pose2D",
    "RobotSpec",
    "SensorSpec",
    "TrialMetrics",
    "TrialRunner",
    "Twist",
    "VfhParams",
    "VfhPipeline",
    "WaypointOperator",
    "active_window_range",
    "blend",
    "check_collision",
    "load_arena",
    "raycast_scan",
    "set_mode",
    "step_dynamics",
    "wrap_angle",
]

__version__ = "0.1.0"
