import math

import numpy as np
import pytest

from sharednav.vfh import (
    Candidate,
    HistogramGrid,
    VfhParams,
    VfhPipeline,
    active_window_range,
    build_binary,
    build_masked,
    build_primary,
    direction_to_twist,
    find_candidates,
    sector_distance,
    select_direction,
    update_grid,
)
from sharednav.world import LaserScan, Pose2D, RobotSpec, SensorSpec, Twist, wrap_angle

PARAMS = VfhParams.for_window(60, 0.1)
N = PARAMS.n_sectors  # 72
TARGET = PARAMS.target_sector  # 18 == +90 deg == forward


def single_beam_scan(angle: float, rng: float, range_max: float = 5.0) -> LaserScan:
    return LaserScan(
        angle_min=angle,
        angle_max=angle,
        angle_increment=math.radians(1.0),
        range_max=range_max,
        ranges=np.array([rng]),
    )


def grid_with_cells(cells: dict[tuple[float, float], int], anchor=Pose2D(5.05, 5.05, 0.0)):
    """Grid anchored at a cell center, with certainties at given world points."""
    grid = HistogramGrid(60, 0.1, c_max=PARAMS.c_max)
    grid.recenter(anchor)
    for (x, y), c in cells.items():
        col = math.floor(x / 0.1) - (grid._center[0] - grid.half)
        row = math.floor(y / 0.1) - (grid._center[1] - grid.half)
        grid.cells[row, col] = c
    return grid


class TestActiveWindowRange:
    def test_paper_window(self):
        assert active_window_range(60, 0.1) == pytest.approx(4.1719, abs=1e-3)

    def test_smallest_window(self):
        assert active_window_range(3, 1.0) == pytest.approx(math.sqrt(2.0))

    def test_odd_window(self):
        # direct evaluation: sqrt(2) * (61-1)/2 * 0.1
        assert active_window_range(61, 0.1) == pytest.approx(math.sqrt(2.0) * 3.0)
        assert active_window_range(61, 0.1) == pytest.approx(4.2426, abs=1e-3)

    def test_too_small(self):
        with pytest.raises(ValueError):
            active_window_range(2, 0.1)


class TestUpdateGrid:
    def test_single_beam_hit(self):
        grid = HistogramGrid(60, 0.1)
        pose = Pose2D(5.05, 5.05, 0.0)
        update_grid(grid, single_beam_scan(0.0, 2.0), pose)
        hit_col = math.floor((5.05 + 2.0) / 0.1) - (grid._center[0] - grid.half)
        row = grid.half
        assert grid.cells[row, hit_col] == 1
        before = grid.cells[row, grid.half + 1 : hit_col]
        assert (before == 0).all()
        assert grid.cells.sum() == 1

    def test_saturation_at_c_max(self):
        grid = HistogramGrid(60, 0.1, c_max=20)
        pose = Pose2D(5.05, 5.05, 0.0)
        for _ in range(25):
            update_grid(grid, single_beam_scan(0.0, 2.0), pose)
        assert grid.cells.max() == 20

    def test_decay_when_obstacle_removed(self):
        # oracle: certainty is +1 per confirming scan, -1 per clearing scan,
        # saturating in [0, c_max]
        grid = HistogramGrid(60, 0.1, c_max=20)
        pose = Pose2D(5.05, 5.05, 0.0)
        n_build, n_clear = 7, 4
        for _ in range(n_build):
            update_grid(grid, single_beam_scan(0.0, 2.0), pose)
        hit_col = math.floor(7.05 / 0.1) - (grid._center[0] - grid.half)
        row = grid.half
        assert grid.cells[row, hit_col] == n_build
        # obstacle vanishes: the same beam now passes through to 3.0 m
        for _ in range(n_clear):
            update_grid(grid, single_beam_scan(0.0, 3.0), pose)
        assert grid.cells[row, hit_col] == n_build - n_clear
        for _ in range(n_build):
            update_grid(grid, single_beam_scan(0.0, 3.0), pose)
        assert grid.cells[row, hit_col] == 0

    def test_capped_beam_does_not_increment(self):
        grid = HistogramGrid(60, 0.1)
        update_grid(grid, single_beam_scan(0.0, 5.0), Pose2D(5.05, 5.05, 0.0))
        assert grid.cells.sum() == 0

    def test_recenter_shifts_content(self):
        grid = HistogramGrid(60, 0.1)
        pose = Pose2D(5.05, 5.05, 0.0)
        update_grid(grid, single_beam_scan(0.0, 2.0), pose)
        # move one cell in +x; the confirmed cell must follow in grid coords
        pose2 = Pose2D(5.15, 5.05, 0.0)
        update_grid(grid, single_beam_scan(0.0, 1.9), pose2)
        hit_col = math.floor(7.05 / 0.1) - (grid._center[0] - grid.half)
        assert grid.cells[grid.half, hit_col] == 2

    def test_short_sensor_range_rejected(self):
        grid = HistogramGrid(60, 0.1)
        with pytest.raises(ValueError):
            update_grid(grid, single_beam_scan(0.0, 1.0, range_max=2.0), Pose2D(5, 5, 0))


class TestBuildPrimary:
    def test_empty_grid_all_zero(self):
        grid = HistogramGrid(60, 0.1)
        grid.recenter(Pose2D(5.05, 5.05, 0.0))
        assert (build_primary(grid, PARAMS) == 0).all()

    def test_zero_at_horizon(self):
        # the magnitude law vanishes at the window range: a - b*d_max^2 = 0,
        # and any cell at or past that distance contributes nothing
        d_max = active_window_range(60, 0.1)
        assert PARAMS.a - PARAMS.b * d_max**2 == pytest.approx(0.0, abs=1e-9)
        grid = HistogramGrid(60, 0.1)
        grid.recenter(Pose2D(5.05, 5.05, 0.0))
        grid.cells[0, 0] = PARAMS.c_max  # corner cell, offset (-3, -3), d > d_max
        d = math.hypot(3.0, 3.0)
        assert d >= d_max
        hist = build_primary(grid, PARAMS)
        assert np.abs(hist).max() == pytest.approx(0.0, abs=1e-9)

    def test_exact_arcsine_arc(self):
        # single cell 1 m directly ahead with 0.5 m enlargement blocks +/-30 deg
        params = VfhParams.for_window(60, 0.1, r_r=0.4, safety_factor=1.0, d_s=0.1)
        assert params.r_enlarged == pytest.approx(0.5)
        grid = grid_with_cells({(6.05, 5.05): 5})
        hist = build_primary(grid, params)
        nz = set(np.nonzero(hist)[0])
        lo = round((90 - 30) / 5)
        hi = round((90 + 30) / 5)
        assert nz == set(range(lo, hi + 1))

    def test_heading_rotates_histogram(self):
        # same world cell, robot turned 90 deg left: obstacle moves to the
        # robot's right, i.e. histogram angle 0
        grid = grid_with_cells({(6.05, 5.05): 5}, anchor=Pose2D(5.05, 5.05, math.pi / 2))
        hist = build_primary(grid, PARAMS)
        assert hist[0] > 0
        assert hist[TARGET] == 0

    def test_sector_count_conserved(self):
        grid = grid_with_cells({(6.05, 5.05): 3, (5.05, 7.05): 9})
        assert len(build_primary(grid, PARAMS)) == N


class TestBuildBinary:
    def test_all_blocked_above_high(self):
        prim = np.full(N, PARAMS.tau_high + 1.0)
        assert build_binary(prim, None, PARAMS).all()

    def test_hysteresis_retains_free(self):
        prev = np.zeros(N, dtype=bool)
        prim = np.full(N, (PARAMS.tau_low + PARAMS.tau_high) / 2)
        assert not build_binary(prim, prev, PARAMS).any()

    def test_hysteresis_retains_blocked(self):
        prev = np.ones(N, dtype=bool)
        prim = np.full(N, (PARAMS.tau_low + PARAMS.tau_high) / 2)
        assert build_binary(prim, prev, PARAMS).all()

    def test_alternating_magnitudes_toggle(self):
        # two-frame trace: high -> blocked, low -> free, repeated
        hi = np.full(N, PARAMS.tau_high + 1e-9 + 1.0)
        lo = np.full(N, PARAMS.tau_low - 1.0)
        state = None
        for frame in range(6):
            state = build_binary(hi if frame % 2 == 0 else lo, state, PARAMS)
            assert state.all() == (frame % 2 == 0)
            assert state.any() == (frame % 2 == 0)

    def test_no_chatter_inside_band(self):
        rng = np.random.default_rng(1)
        state = build_binary(np.full(N, PARAMS.tau_high + 1), None, PARAMS)
        start = state.copy()
        for _ in range(20):
            prim = rng.uniform(PARAMS.tau_low + 1e-6, PARAMS.tau_high - 1e-6, N)
            state = build_binary(prim, state, PARAMS)
            assert (state == start).all()


class TestBuildMasked:
    robot = RobotSpec()

    def test_zero_velocity_equals_binary(self):
        grid = grid_with_cells({(6.05, 5.05): 5})
        binary = np.zeros(N, dtype=bool)
        binary[3] = True
        masked = build_masked(binary, Twist(0.0, 0.5), grid, PARAMS, self.robot)
        assert (masked == binary).all()

    def test_empty_grid_identity(self):
        grid = HistogramGrid(60, 0.1)
        grid.recenter(Pose2D(5.05, 5.05, 0.0))
        binary = np.zeros(N, dtype=bool)
        masked = build_masked(binary, Twist(0.5, 0.0), grid, PARAMS, self.robot)
        assert not masked.any()

    def test_left_circle_block(self):
        # an obstacle inside the left turning circle at bearing ~+60 deg
        # blocks everything further left; the right side stays free.
        v = 0.8
        r_t = v / self.robot.omega_max
        # place the cell just inside the inflated circle at bearing 60 deg
        bearing = math.radians(60)
        d = 1.1  # well inside r_t + r_enlarged for these numbers
        x = 5.05 + d * math.cos(bearing)
        y = 5.05 + d * math.sin(bearing)
        grid = grid_with_cells({(x, y): 5})
        binary = np.zeros(N, dtype=bool)
        masked = build_masked(binary, Twist(v, 0.0), grid, PARAMS, self.robot)
        # oracle: recompute the limit angle from the actual cell center
        col = np.nonzero(grid.cells)[1][0]
        row = np.nonzero(grid.cells)[0][0]
        cx, cy = grid.cell_centers(np.array([row]), np.array([col]))
        rx, ry = float(cx[0]) - 5.05, float(cy[0]) - 5.05
        assert math.hypot(rx, ry - r_t) < r_t + PARAMS.r_enlarged  # inside left circle
        phi_l = math.atan2(ry, rx)
        for k in range(N):
            rel = wrap_angle(k * PARAMS.alpha_res - math.pi / 2)
            assert masked[k] == (rel > phi_l + 1e-9), f"sector {k}"

    def test_monotone_superset_random(self):
        rng = np.random.default_rng(11)
        robot = self.robot
        for _ in range(200):
            grid = HistogramGrid(60, 0.1)
            grid.recenter(Pose2D(5.05, 5.05, float(rng.uniform(-3, 3))))
            n_cells = rng.integers(0, 40)
            rows = rng.integers(0, 60, n_cells)
            cols = rng.integers(0, 60, n_cells)
            grid.cells[rows, cols] = rng.integers(1, 21, n_cells)
            binary = rng.random(N) < 0.3
            v = float(rng.uniform(0, 1.0))
            masked = build_masked(binary, Twist(v, 0.0), grid, PARAMS, robot)
            assert (masked | binary == masked).all()  # superset
            if v == 0.0:
                assert (masked == binary).all()


def brute_force_candidates(masked, params) -> list[Candidate]:
    """Independent opening scanner: checks every sector for being the right
    border of a maximal free run, then applies the narrow/wide equations."""
    n = params.n_sectors
    free = [not b for b in masked]
    target = params.target_sector
    if not any(free):
        return []
    if all(free):
        return [Candidate(target, "target")]

    def round_toward(value):
        lo, hi = math.floor(value), math.ceil(value)
        if lo == hi:
            return lo % n
        if abs(value - lo - 0.5) < 1e-9:
            dl = sector_distance(lo % n, target, n)
            dh = sector_distance(hi % n, target, n)
            return lo % n if dl <= dh else hi % n
        return round(value) % n

    out = []
    for k_r in range(n):
        if not free[k_r] or free[(k_r - 1) % n]:
            continue  # not the right border of a run
        length = 0
        while free[(k_r + length) % n]:
            length += 1
        k_l = (k_r + length - 1) % n
        if length < params.s_max:
            out.append(Candidate(round_toward(k_r + (length - 1) / 2), "narrow"))
        else:
            c_r = k_r + params.s_max / 2
            c_l = k_r + (length - 1) - params.s_max / 2
            out.append(Candidate(round_toward(c_r), "wide_right"))
            out.append(Candidate(round_toward(c_l), "wide_left"))
            t_run = (target - k_r) % n
            if params.s_max / 2 - 1e-9 <= t_run <= (length - 1) - params.s_max / 2 + 1e-9:
                out.append(Candidate(target, "target"))
    return out


class TestFindCandidates:
    def test_narrow_opening_midpoint(self):
        masked = np.ones(N, dtype=bool)
        masked[10:15] = False  # k_r=10, k_l=14
        cands = find_candidates(masked, PARAMS)
        assert [(c.sector, c.kind) for c in cands] == [(12, "narrow")]

    def test_wide_opening_pair_plus_target(self):
        masked = np.ones(N, dtype=bool)
        masked[10:51] = False  # k_r=10, k_l=50
        cands = find_candidates(masked, PARAMS)
        got = {(c.sector, c.kind) for c in cands}
        assert (18, "wide_right") in got
        assert (42, "wide_left") in got
        assert (TARGET, "target") in got  # target 18 lies inside [18, 42]

    def test_all_free_single_target(self):
        masked = np.zeros(N, dtype=bool)
        cands = find_candidates(masked, PARAMS)
        assert [(c.sector, c.kind) for c in cands] == [(TARGET, "target")]

    def test_fully_blocked_empty(self):
        assert find_candidates(np.ones(N, dtype=bool), PARAMS) == []

    def test_against_brute_force_scanner(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            masked = rng.random(N) < rng.uniform(0.1, 0.9)
            got = find_candidates(masked, PARAMS)
            want = brute_force_candidates(masked, PARAMS)
            key = lambda c: (c.sector, c.kind)
            assert sorted(got, key=key) == sorted(want, key=key)
            for c in got:
                assert not masked[c.sector], "candidate in a blocked sector"

    def test_narrow_openings_yield_single_midpoint(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            masked = np.ones(N, dtype=bool)
            start = int(rng.integers(0, N))
            width = int(rng.integers(1, PARAMS.s_max))
            for i in range(width):
                masked[(start + i) % N] = False
            cands = find_candidates(masked, PARAMS)
            assert len(cands) == 1 and cands[0].kind == "narrow"
            # rounded midpoint of the run
            mid = start + (width - 1) / 2
            lo, hi = math.floor(mid) % N, math.ceil(mid) % N
            assert cands[0].sector in (lo, hi)


class TestSelectDirection:
    def test_forward_only_candidate(self):
        k = select_direction([Candidate(TARGET, "target")], None, PARAMS)
        assert k == TARGET
        assert k * PARAMS.alpha_res == pytest.approx(math.pi / 2)  # 90 deg

    def test_tie_breaks_toward_previous(self):
        # two candidates equidistant from the target
        cands = [Candidate(TARGET - 4, "narrow"), Candidate(TARGET + 4, "narrow")]
        assert select_direction(cands, TARGET + 4, PARAMS) == TARGET + 4
        assert select_direction(cands, TARGET - 4, PARAMS) == TARGET - 4

    def test_hand_computed_costs(self):
        prev = 30
        cands = [Candidate(12, "narrow"), Candidate(20, "narrow"), Candidate(40, "wide_left")]
        # brute-force evaluation of g over the candidate set
        def g(c):
            return (
                PARAMS.mu1 * sector_distance(c.sector, TARGET, N)
                + PARAMS.mu2 * sector_distance(c.sector, TARGET, N)
                + PARAMS.mu3 * sector_distance(c.sector, prev, N)
            )

        want = min(cands, key=g).sector
        assert select_direction(cands, prev, PARAMS) == want
        costs = {c.sector: c.cost for c in cands}
        for c in cands:
            assert costs[c.sector] == pytest.approx(g(c))

    def test_empty_returns_none(self):
        assert select_direction([], None, PARAMS) is None

    def test_argmin_invariant_under_weight_scaling(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            sectors = rng.choice(N, size=4, replace=False)
            cands = [Candidate(int(s), "narrow") for s in sectors]
            prev = int(rng.integers(0, N))
            base = select_direction([Candidate(c.sector, c.kind) for c in cands], prev, PARAMS)
            scale = float(rng.uniform(0.1, 10.0))
            scaled = VfhParams.for_window(
                60, 0.1, mu1=PARAMS.mu1 * scale, mu2=PARAMS.mu2 * scale, mu3=PARAMS.mu3 * scale
            )
            assert select_direction(cands, prev, scaled) == base


class TestDirectionToTwist:
    robot = RobotSpec()

    def test_forward_unobstructed(self):
        masked = np.zeros(N, dtype=bool)
        cmd = direction_to_twist(TARGET, masked, PARAMS, self.robot)
        assert cmd == Twist(self.robot.v_max, 0.0)

    def test_dead_end_stops(self):
        cmd = direction_to_twist(None, np.ones(N, dtype=bool), PARAMS, self.robot)
        assert cmd == Twist(0.0, 0.0)

    def test_offset_formula(self):
        # 45 deg left of forward with part of the front span blocked:
        # direct evaluation of the stated formula
        k_d = TARGET + 9  # 45 deg left
        masked = np.zeros(N, dtype=bool)
        rel = np.array([wrap_angle(k * PARAMS.alpha_res - math.pi / 2) for k in range(N)])
        front = np.abs(rel) <= math.pi / 2 + 1e-9
        front_idx = np.nonzero(front)[0]
        blocked_idx = front_idx[: len(front_idx) // 2]
        masked[blocked_idx] = True
        frac = len(blocked_idx) / len(front_idx)
        cmd = direction_to_twist(k_d, masked, PARAMS, self.robot)
        offset = math.radians(45)
        assert cmd.linear == pytest.approx(self.robot.v_max * math.cos(offset) * (1 - frac))
        assert cmd.angular == pytest.approx(
            min(self.robot.omega_max, PARAMS.turn_gain * offset)
        )
        assert frac == pytest.approx(0.5, abs=0.02)


class TestPipeline:
    def test_sector_count_every_frame(self):
        from sharednav.world import load_arena, raycast_scan

        arena = load_arena(
            {
                "arena": {"width": 20, "height": 20, "resolution": 0.1},
                "start": {"x": 4, "y": 10},
                "goal": {"x": 18, "y": 10, "radius": 0.5},
                "obstacles": [{"type": "circle", "x": 8.0, "y": 10.0, "radius": 0.6}],
            }
        )
        pipe = VfhPipeline()
        pose = arena.start
        cmd = Twist()
        for _ in range(50):
            scan = raycast_scan(pose, arena, SensorSpec())
            cmd = pipe.step(scan, pose, cmd)
            assert len(pipe.binary) == N
            assert len(pipe.last_masked) == N
            from sharednav.world import step_dynamics

            pose = step_dynamics(pose, cmd, 0.05)

    def test_params_window_tie_validated(self):
        with pytest.raises(ValueError):
            VfhPipeline(params=VfhParams(b=123.0))
