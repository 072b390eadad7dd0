"""Shared-control arbitration: convex blending of operator and autonomy commands."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

from .world import Twist

MODE_TELEOP = "teleop"
MODE_SHARED = "shared"
MODES = (MODE_TELEOP, MODE_SHARED)


@dataclass(frozen=True)
class BlendContext:
    """What an arbitration function may look at when picking alpha."""

    u_h: Twist
    u_r: Twist
    blocked_fraction: float = 0.0


# An arbitration function maps the control context to alpha in [0, 1].
# The default behaviour is the constant-alpha blend; dynamic policies plug
# in here without touching the controller.
ArbitrationFn = Callable[[BlendContext], float]


@dataclass(frozen=True)
class ArbitrationConfig:
    alpha: float = 0.5
    mode: str = MODE_SHARED
    alpha_fn: Optional[ArbitrationFn] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def blend(
    u_h: Twist,
    u_r: Twist,
    config: ArbitrationConfig,
    context: BlendContext | None = None,
) -> Twist:
    """Final command: alpha*u_h + (1-alpha)*u_r per component (teleop passes u_h through)."""
    if not (u_h.is_finite() and u_r.is_finite()):
        raise ValueError(f"non-finite command component: u_h={u_h}, u_r={u_r}")
    if config.mode == MODE_TELEOP:
        return u_h
    alpha = config.alpha
    if config.alpha_fn is not None:
        alpha = config.alpha_fn(context or BlendContext(u_h, u_r))
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"arbitration function returned alpha={alpha}")
    return Twist(
        alpha * u_h.linear + (1.0 - alpha) * u_r.linear,
        alpha * u_h.angular + (1.0 - alpha) * u_r.angular,
    )


def set_mode(
    config: ArbitrationConfig,
    mode: str | None = None,
    alpha: float | None = None,
) -> ArbitrationConfig:
    """Updated config for an on-demand level-of-autonomy switch.

    Validation happens in the constructor; the switch takes effect whenever
    the caller starts using the returned config (next control tick).
    """
    changes = {}
    if mode is not None:
        changes["mode"] = mode
    if alpha is not None:
        changes["alpha"] = alpha
    return replace(config, **changes)
