import math
from collections import deque
from dataclasses import replace

import numpy as np
import pytest

from sharednav.blend import MODE_SHARED, MODE_TELEOP
from sharednav.engine import TrialMetrics
from sharednav.harness import (
    PlacementError,
    TrialConfig,
    build_arena,
    build_runner,
    place_random_obstacles,
    run_batch,
    run_trial,
    summarize,
)
from sharednav.operators import ReplaySource
from sharednav.world import RobotSpec, load_arena

ARENA_12 = {
    "arena": {"width": 12, "height": 12, "resolution": 0.1},
    "start": {"x": 2, "y": 2, "theta": 0.0},
    "goal": {"x": 10, "y": 10, "radius": 1.0},
    "route": [[10, 10]],
}

ARENA_24 = {
    "arena": {"width": 24, "height": 24, "resolution": 0.1},
    "start": {"x": 2, "y": 2, "theta": 0.0},
    "goal": {"x": 22, "y": 22, "radius": 1.0},
    "walls": [[8, 0, 8.4, 14], [16, 10, 16.4, 24]],
    "route": [[5, 20], [12, 18], [20, 12], [22, 22]],
}


def bfs_reachable(arena, clearance):
    """Independent reachability oracle: disc inflation by explicit offsets,
    then breadth-first search on the inflated free grid."""
    occ = arena.world
    ny, nx = occ.shape
    res = arena.resolution
    rad = int(math.ceil(clearance / res))
    offsets = [
        (dy, dx)
        for dy in range(-rad, rad + 1)
        for dx in range(-rad, rad + 1)
        if math.hypot(dy, dx) * res <= clearance
    ]
    inflated = np.zeros_like(occ)
    ys, xs = np.nonzero(occ)
    for dy, dx in offsets:
        y2 = ys + dy
        x2 = xs + dx
        ok = (y2 >= 0) & (y2 < ny) & (x2 >= 0) & (x2 < nx)
        inflated[y2[ok], x2[ok]] = True
    six, siy = arena.cell_of(arena.start.x, arena.start.y)
    gix, giy = arena.cell_of(*arena.goal_center)
    if inflated[siy, six] or inflated[giy, gix]:
        return False
    seen = np.zeros_like(occ)
    q = deque([(siy, six)])
    seen[siy, six] = True
    while q:
        y, x = q.popleft()
        if (y, x) == (giy, gix):
            return True
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            y2, x2 = y + dy, x + dx
            if 0 <= y2 < ny and 0 <= x2 < nx and not seen[y2, x2] and not inflated[y2, x2]:
                seen[y2, x2] = True
                q.append((y2, x2))
    return False


class TestPlaceRandomObstacles:
    def test_count_zero_identity(self):
        arena = load_arena(ARENA_12)
        out = place_random_obstacles(arena, 0, (0.2, 0.4), seed=1)
        assert (out.world == arena.world).all()
        assert out.hidden_shapes == []

    def test_same_seed_identical(self):
        arena = load_arena(ARENA_12)
        a = place_random_obstacles(arena, 4, (0.2, 0.4), seed=7)
        b = place_random_obstacles(arena, 4, (0.2, 0.4), seed=7)
        assert a.hidden_shapes == b.hidden_shapes
        assert (a.world == b.world).all()

    def test_different_seed_differs(self):
        arena = load_arena(ARENA_12)
        a = place_random_obstacles(arena, 4, (0.2, 0.4), seed=7)
        b = place_random_obstacles(arena, 4, (0.2, 0.4), seed=8)
        assert a.hidden_shapes != b.hidden_shapes

    def test_hidden_from_prior(self):
        arena = load_arena(ARENA_12)
        out = place_random_obstacles(arena, 4, (0.2, 0.4), seed=7)
        assert (out.prior == arena.prior).all()  # operator's map unchanged
        assert out.world.sum() > arena.world.sum()

    def test_feasibility_oracle_24m(self):
        arena = load_arena(ARENA_24)
        clearance = RobotSpec().footprint_radius + 0.1
        for seed in range(5):
            out = place_random_obstacles(arena, 5, (0.25, 0.45), seed=seed)
            assert bfs_reachable(out, clearance), f"seed {seed} sealed the route"

    def test_impossible_placement_raises(self):
        arena = load_arena(ARENA_12)
        with pytest.raises(PlacementError):
            place_random_obstacles(arena, 200, (1.5, 2.0), seed=3, max_attempts=5)


class TestRunTrial:
    def test_empty_arena_clean_completion(self):
        cfg = TrialConfig(
            arena=ARENA_12, seed=1, mode=MODE_SHARED, operator="idealized",
            obstacle_count=0, timeout=120.0,
        )
        m = run_trial(cfg)
        assert not m.timed_out
        assert m.collisions == 0

    def test_forced_timeout(self):
        cfg = TrialConfig(
            arena=ARENA_12, seed=1, operator="idealized", obstacle_count=0, timeout=1.0
        )
        m = run_trial(cfg)
        assert m.timed_out and m.completion_time == 1.0

    def test_paired_world_identical_across_modes(self):
        base = TrialConfig(arena=ARENA_24, seed=5, obstacle_count=5)
        a = build_arena(replace(base, mode=MODE_TELEOP))
        b = build_arena(replace(base, mode=MODE_SHARED))
        assert a.hidden_shapes == b.hidden_shapes
        assert (a.world == b.world).all()

    def test_replay_reproduces_metrics(self):
        cfg = TrialConfig(
            arena=ARENA_12, seed=3, mode=MODE_SHARED, operator="teleop_like",
            obstacle_count=2, timeout=180.0,
        )
        runner = build_runner(cfg)
        live = runner.run()
        replayed = run_trial(cfg, replay=runner.trace)
        assert replayed == live


class TestSummarize:
    def _metrics(self, mode, times, collisions):
        return [
            TrialMetrics(t, c, 30.0, mode, False) for t, c in zip(times, collisions)
        ]

    def test_paper_time_delta(self):
        groups = {
            MODE_TELEOP: self._metrics(MODE_TELEOP, [205.1], [3]),
            MODE_SHARED: self._metrics(MODE_SHARED, [158.3], [0]),
        }
        s = summarize(groups)
        assert s.time_delta_pct == pytest.approx(29.6, abs=0.05)

    def test_collision_conventions(self):
        groups = {
            MODE_TELEOP: self._metrics(MODE_TELEOP, [200.0] * 4, [2, 3, 3, 3.2]),
            MODE_SHARED: self._metrics(MODE_SHARED, [150.0] * 4, [0.25, 0.25, 0.25, 0.25]),
        }
        s = summarize(groups)
        # mean 2.8 vs 0.25: a 91.07% reduction and an 11.2x ratio
        assert s.collision_reduction_pct == pytest.approx(91.07, abs=0.01)
        assert s.collision_ratio == pytest.approx(11.2, abs=0.01)

    def test_identical_groups_zero_delta(self):
        groups = {
            MODE_TELEOP: self._metrics(MODE_TELEOP, [100.0, 110.0], [1, 1]),
            MODE_SHARED: self._metrics(MODE_SHARED, [100.0, 110.0], [1, 1]),
        }
        s = summarize(groups)
        assert s.time_delta_pct == 0.0
        assert s.collision_reduction_pct == 0.0

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            summarize({MODE_TELEOP: []})


class TestRunBatch:
    CFG = TrialConfig(
        arena=ARENA_12, operator="idealized", obstacle_count=1, timeout=120.0
    )

    def test_csv_shape_and_pairing(self):
        result = run_batch(self.CFG, seeds=range(4))
        assert len(result.rows) == 8  # 4 paired seeds, both modes
        assert result.time_test is not None
        text = result.csv_text()
        assert text.count("\n") == 9  # header + 8 rows

    def test_single_mode_degenerate(self):
        result = run_batch(self.CFG, seeds=[0], modes=(MODE_SHARED,))
        assert result.warnings
        assert result.time_test is None

    def test_byte_identical_reruns(self):
        a = run_batch(self.CFG, seeds=range(3)).csv_text()
        b = run_batch(self.CFG, seeds=range(3)).csv_text()
        assert a.encode() == b.encode()

    def test_workers_do_not_change_bytes(self):
        a = run_batch(self.CFG, seeds=range(3), workers=1).csv_text()
        b = run_batch(self.CFG, seeds=range(3), workers=2).csv_text()
        assert a == b

    def test_output_files(self, tmp_path):
        run_batch(self.CFG, seeds=range(2), out_dir=tmp_path)
        assert (tmp_path / "trials.csv").exists()
        assert (tmp_path / "summary.txt").exists()


class TestTrialConfigFile:
    def test_from_file_resolves_arena_path(self, tmp_path):
        import yaml

        arena_path = tmp_path / "arena.yaml"
        arena_path.write_text(yaml.safe_dump(ARENA_12))
        cfg_path = tmp_path / "trial.yaml"
        cfg_path.write_text(
            "arena: arena.yaml\nseed: 9\nalpha: 0.5\nobstacle_count: 2\n"
            "obstacle_radius: [0.2, 0.3]\n"
        )
        cfg = TrialConfig.from_file(cfg_path)
        assert cfg.seed == 9
        assert cfg.obstacle_radius == (0.2, 0.3)
        arena = build_arena(cfg)
        assert arena.width == 12

    def test_config_hash_ignores_seed_and_mode(self):
        a = TrialConfig(arena=ARENA_12, seed=1, mode=MODE_TELEOP)
        b = TrialConfig(arena=ARENA_12, seed=2, mode=MODE_SHARED)
        assert a.config_hash() == b.config_hash()

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            TrialConfig(arena=ARENA_12, timeout=0.0)
        with pytest.raises(ValueError):
            TrialConfig(arena=ARENA_12, obstacle_count=-1)
