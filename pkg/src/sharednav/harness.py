"""Batch experiment harness: randomized arenas, paired trials, metrics, stats.

Paired runs share a seed, so the world (including the randomly injected
unobserved obstacles) and the operator noise stream are identical between
teleoperation and shared mode; only the arbitration differs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .blend import MODE_SHARED, MODE_TELEOP, ArbitrationConfig
from .engine import TrialMetrics, TrialRunner
from .operators import (
    CommandTrace,
    OperatorPolicy,
    ReplaySource,
    WaypointOperator,
    operator_preset,
)
from .stats import StatsResult, paired_t_test, wilcoxon_signed_rank
from .vfh import VfhParams
from .world import ArenaMap, RobotSpec, load_arena, rasterize_obstacle

CSV_COLUMNS = [
    "config_hash",
    "seed",
    "mode",
    "completed",
    "timed_out",
    "completion_time_s",
    "collisions",
    "path_length_m",
]


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class TrialConfig:
    arena: str | dict
    seed: int = 0
    mode: str = MODE_SHARED
    alpha: float = 0.5
    operator: str = "teleop_like"
    command_delay: float = 1.0
    observation_delay: float = 1.4
    observation_rate: float = 2.5
    obstacle_count: int = 6
    obstacle_radius: tuple[float, float] = (0.25, 0.45)
    timeout: float = 600.0
    dt: float = 0.05
    waypoints: list[tuple[float, float]] | None = None
    vfh: dict = field(default_factory=dict)
    operator_overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")

    @classmethod
    def from_file(cls, path) -> "TrialConfig":
        import yaml

        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ValueError("trial config must be a mapping")
        if "arena" not in doc:
            raise ValueError("trial config needs an 'arena' path")
        arena = doc["arena"]
        if isinstance(arena, str) and not Path(arena).is_absolute():
            arena = str((Path(path).parent / arena).resolve())
        kwargs = {k: v for k, v in doc.items() if k != "arena"}
        if "obstacle_radius" in kwargs:
            kwargs["obstacle_radius"] = tuple(kwargs["obstacle_radius"])
        if "waypoints" in kwargs and kwargs["waypoints"] is not None:
            kwargs["waypoints"] = [tuple(p) for p in kwargs["waypoints"]]
        return cls(arena=arena, **kwargs)

    def config_hash(self) -> str:
        """Stable short hash over everything that defines the experiment,
        excluding seed and mode (so paired rows join on it)."""
        payload = {
            "arena": self.arena if isinstance(self.arena, dict) else Path(self.arena).name,
            "alpha": self.alpha,
            "operator": self.operator,
            "command_delay": self.command_delay,
            "observation_delay": self.observation_delay,
            "observation_rate": self.observation_rate,
            "obstacle_count": self.obstacle_count,
            "obstacle_radius": list(self.obstacle_radius),
            "timeout": self.timeout,
            "dt": self.dt,
            "waypoints": self.waypoints,
            "vfh": self.vfh,
            "operator_overrides": self.operator_overrides,
        }
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def reachable(arena: ArenaMap, clearance: float) -> bool:
    """Whether start and goal are connected in the inflated free-space grid."""
    occ = arena.world
    radius_cells = int(math.ceil(clearance / arena.resolution))
    if radius_cells > 0:
        r = np.arange(-radius_cells, radius_cells + 1)
        disc = (r[:, None] ** 2 + r[None, :] ** 2) <= (clearance / arena.resolution) ** 2
        inflated = ndimage.binary_dilation(occ, structure=disc)
    else:
        inflated = occ
    passable = ~inflated
    labels, _ = ndimage.label(passable)
    six, siy = arena.cell_of(arena.start.x, arena.start.y)
    gix, giy = arena.cell_of(*arena.goal_center)
    ls = labels[siy, six]
    lg = labels[giy, gix]
    return bool(ls != 0 and ls == lg)


class PlacementError(RuntimeError):
    """Could not place the requested obstacles without sealing the task."""


def place_random_obstacles(
    arena: ArenaMap,
    count: int,
    radius_range: tuple[float, float],
    seed: int,
    robot: RobotSpec | None = None,
    d_s: float = 0.1,
    max_attempts: int = 200,
) -> ArenaMap:
    """Scatter circular obstacles that the prior map does not know about.

    Each placement keeps the start and goal clear and preserves an A-to-B
    corridor of at least twice (footprint + d_s) in the inflated grid;
    placements failing that are rerolled.  Deterministic per seed.
    """
    out = arena.copy()
    if count == 0:
        return out
    robot = robot or RobotSpec()
    clearance = robot.footprint_radius + d_s
    rng = random.Random(seed)
    r_lo, r_hi = radius_range
    keep_clear = 2.0 * (robot.footprint_radius + d_s)

    for i in range(count):
        for attempt in range(max_attempts):
            r = rng.uniform(r_lo, r_hi)
            x = rng.uniform(r, arena.width - r)
            y = rng.uniform(r, arena.height - r)
            if math.hypot(x - arena.start.x, y - arena.start.y) < r + keep_clear:
                continue
            gx, gy = arena.goal_center
            if math.hypot(x - gx, y - gy) < r + arena.goal_radius + keep_clear:
                continue
            trial = out.copy()
            shape = {"type": "circle", "x": x, "y": y, "radius": r}
            rasterize_obstacle(trial, shape, hidden=True)
            if reachable(trial, clearance):
                out = trial
                break
        else:
            raise PlacementError(
                f"could not place obstacle {i + 1}/{count} after {max_attempts} attempts"
            )
    return out


def build_arena(config: TrialConfig) -> ArenaMap:
    arena = load_arena(config.arena)
    if config.obstacle_count > 0:
        arena = place_random_obstacles(
            arena,
            config.obstacle_count,
            config.obstacle_radius,
            seed=derive_seed(config.seed, "obstacles"),
        )
    return arena


def _build_operator(config: TrialConfig, arena: ArenaMap, robot: RobotSpec):
    policy = operator_preset(config.operator)
    if config.operator_overrides:
        policy = replace(policy, **config.operator_overrides)
    waypoints = config.waypoints or arena.route or [arena.goal_center]
    policy = policy.with_waypoints(waypoints)
    policy = replace(policy, observation_delay=config.observation_delay)
    return WaypointOperator(policy, robot, seed=derive_seed(config.seed, "operator"))


def build_runner(
    config: TrialConfig,
    arena: ArenaMap | None = None,
    operator=None,
    compute_autonomy: bool | None = None,
) -> TrialRunner:
    arena = arena if arena is not None else build_arena(config)
    robot = RobotSpec()
    if operator is None:
        operator = _build_operator(config, arena, robot)
    arbitration = ArbitrationConfig(alpha=config.alpha, mode=config.mode)
    vfh_params = VfhParams.for_window(60, 0.1, **config.vfh) if config.vfh else None
    if compute_autonomy is None:
        compute_autonomy = config.mode != MODE_TELEOP
    return TrialRunner(
        arena=arena,
        operator=operator,
        arbitration=arbitration,
        robot=robot,
        vfh_params=vfh_params,
        command_delay=config.command_delay,
        observation_delay=config.observation_delay,
        observation_rate=config.observation_rate,
        dt=config.dt,
        timeout=config.timeout,
        compute_autonomy=compute_autonomy,
        # the operator's console shows scan reflections in both modes
        always_scan=True,
    )


def run_trial(config: TrialConfig, replay: CommandTrace | None = None) -> TrialMetrics:
    operator = ReplaySource(replay) if replay is not None else None
    runner = build_runner(config, operator=operator)
    return runner.run()


@dataclass
class GroupSummary:
    n: int
    time_mean: float
    time_sd: float
    collisions_mean: float
    collisions_sd: float
    collisions_total: int
    timeouts: int


@dataclass
class Summary:
    groups: dict[str, GroupSummary]
    time_delta_pct: float | None = None
    collision_reduction_pct: float | None = None
    collision_ratio: float | None = None


def _group_summary(metrics: list[TrialMetrics]) -> GroupSummary:
    times = np.array([m.completion_time for m in metrics], dtype=float)
    cols = np.array([m.collisions for m in metrics], dtype=float)
    ddof = 1 if len(metrics) > 1 else 0
    return GroupSummary(
        n=len(metrics),
        time_mean=float(times.mean()),
        time_sd=float(times.std(ddof=ddof)),
        collisions_mean=float(cols.mean()),
        collisions_sd=float(cols.std(ddof=ddof)),
        collisions_total=int(cols.sum()),
        timeouts=sum(1 for m in metrics if m.timed_out),
    )


def summarize(metrics_by_mode: dict[str, list[TrialMetrics]]) -> Summary:
    """Per-mode means/SDs plus the comparison deltas.

    Time delta is (teleop - shared)/shared, i.e. how much slower teleop is
    relative to shared.  A single "percent fewer collisions" is not well
    defined, so both the reduction relative to teleop and the teleop/shared
    ratio are reported.
    """
    for mode, ms in metrics_by_mode.items():
        if not ms:
            raise ValueError(f"empty metrics group {mode!r}")
    groups = {mode: _group_summary(ms) for mode, ms in metrics_by_mode.items()}
    summary = Summary(groups=groups)
    if MODE_TELEOP in groups and MODE_SHARED in groups:
        tele, shared = groups[MODE_TELEOP], groups[MODE_SHARED]
        if shared.time_mean > 0:
            summary.time_delta_pct = (tele.time_mean - shared.time_mean) / shared.time_mean * 100.0
        if tele.collisions_mean > 0:
            summary.collision_reduction_pct = (
                (tele.collisions_mean - shared.collisions_mean) / tele.collisions_mean * 100.0
            )
        summary.collision_ratio = (
            tele.collisions_mean / shared.collisions_mean
            if shared.collisions_mean > 0
            else math.inf
        )
    return summary


@dataclass
class BatchResult:
    rows: list[dict]
    summary: Summary | None
    time_test: StatsResult | None
    collision_test: StatsResult | None
    warnings: list[str] = field(default_factory=list)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = []
        if self.summary:
            for mode in sorted(self.summary.groups):
                g = self.summary.groups[mode]
                lines.append(
                    f"{mode}: n={g.n} time {g.time_mean:.1f}s (SD {g.time_sd:.1f}) "
                    f"collisions {g.collisions_mean:.2f} (SD {g.collisions_sd:.2f}, "
                    f"total {g.collisions_total}), timeouts {g.timeouts}"
                )
            if self.summary.time_delta_pct is not None:
                lines.append(
                    f"teleop is {self.summary.time_delta_pct:.1f}% slower than shared"
                )
            if self.summary.collision_reduction_pct is not None:
                lines.append(
                    "shared reduces mean collisions by "
                    f"{self.summary.collision_reduction_pct:.1f}% "
                    f"(teleop/shared ratio {self.summary.collision_ratio:.2f})"
                )
        if self.time_test:
            d = self.time_test.detail
            lines.append(
                f"paired t (time): t({d['df']}) = {self.time_test.statistic:.3f}, "
                f"p = {self.time_test.p_value:.3g}"
            )
        if self.collision_test:
            d = self.collision_test.detail
            lines.append(
                f"wilcoxon (collisions): W = {self.collision_test.statistic:.1f}, "
                f"z = {d['z']:.2f}, p = {self.collision_test.p_value:.3g}"
            )
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def _run_one(args) -> tuple[int, str, TrialMetrics]:
    config, seed, mode = args
    cfg = replace(config, seed=seed, mode=mode)
    return seed, mode, run_trial(cfg)


def run_batch(
    config: TrialConfig,
    seeds,
    modes: tuple[str, ...] = (MODE_TELEOP, MODE_SHARED),
    workers: int = 1,
    out_dir=None,
) -> BatchResult:
    """Run every (seed, mode) pair and aggregate.

    Rows come out ordered by (seed, mode) regardless of worker scheduling,
    so the CSV is byte-identical across runs and worker counts.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(config, seed, mode) for seed in seeds for mode in modes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    results.sort(key=lambda r: (r[0], r[1]))
    chash = config.config_hash()
    rows = []
    by_mode: dict[str, list[TrialMetrics]] = {m: [] for m in modes}
    by_seed: dict[int, dict[str, TrialMetrics]] = {}
    for seed, mode, metrics in results:
        rows.append(
            {
                "config_hash": chash,
                "seed": seed,
                "mode": mode,
                "completed": int(not metrics.timed_out),
                "timed_out": int(metrics.timed_out),
                "completion_time_s": f"{metrics.completion_time:.6f}",
                "collisions": metrics.collisions,
                "path_length_m": f"{metrics.path_length:.6f}",
            }
        )
        by_mode[mode].append(metrics)
        by_seed.setdefault(seed, {})[mode] = metrics

    warnings = []
    time_test = collision_test = None
    summary = summarize(by_mode) if all(by_mode.values()) else None
    paired = [
        s for s in by_seed.values() if MODE_TELEOP in s and MODE_SHARED in s
    ]
    if len(paired) >= 2 and len(modes) >= 2:
        time_diffs = [
            s[MODE_TELEOP].completion_time - s[MODE_SHARED].completion_time for s in paired
        ]
        time_test = paired_t_test(time_diffs)
        col_diffs = [
            s[MODE_TELEOP].collisions - s[MODE_SHARED].collisions for s in paired
        ]
        nonzero = sum(1 for d in col_diffs if d != 0)
        if nonzero >= 5:
            collision_test = wilcoxon_signed_rank(col_diffs)
        else:
            warnings.append(
                f"only {nonzero} nonzero collision differences; wilcoxon skipped"
            )
    else:
        warnings.append("fewer than 2 paired seeds; paired statistics skipped")

    result = BatchResult(rows, summary, time_test, collision_test, warnings)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trials.csv").write_text(result.csv_text(), encoding="utf-8")
        (out / "summary.txt").write_text(result.summary_text(), encoding="utf-8")
    return result
