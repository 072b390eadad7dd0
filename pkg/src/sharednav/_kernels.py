"""Compiled inner loops for ray casting and certainty-grid updates.

Both kernels walk beams with the classic integer grid traversal (step to
whichever axis boundary comes first), which is exact: every cell the beam
passes through is visited, and hit distances are cell-entry distances.
The pure-numpy reference in rays.py computes the same traversal; a test
cross-checks the two.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_MIN_RANGE = 1e-6


@njit(cache=True)
def raycast_kernel(
    occ: np.ndarray,
    ox: float,
    oy: float,
    res: float,
    gx0: float,
    gy0: float,
    angles: np.ndarray,
    range_max: float,
) -> np.ndarray:
    ny, nx = occ.shape
    n = len(angles)
    out = np.empty(n)
    ix0 = int(np.floor((ox - gx0) / res))
    iy0 = int(np.floor((oy - gy0) / res))
    for b in range(n):
        dx = np.cos(angles[b])
        dy = np.sin(angles[b])
        ix, iy = ix0, iy0
        if 0 <= ix < nx and 0 <= iy < ny and occ[iy, ix]:
            out[b] = _MIN_RANGE
            continue
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            nxt = (ix + (1 if dx > 0 else 0)) * res + gx0
            t_max_x = (nxt - ox) / dx
            t_dx = res / abs(dx)
        else:
            t_max_x = np.inf
            t_dx = np.inf
        if dy != 0.0:
            nxt = (iy + (1 if dy > 0 else 0)) * res + gy0
            t_max_y = (nxt - oy) / dy
            t_dy = res / abs(dy)
        else:
            t_max_y = np.inf
            t_dy = np.inf

        rng = range_max
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                t_max_x += t_dx
                ix += step_x
            else:
                t = t_max_y
                t_max_y += t_dy
                iy += step_y
            if t >= range_max:
                break
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                break  # grid region is convex: the beam never re-enters
            if occ[iy, ix]:
                rng = t if t > _MIN_RANGE else _MIN_RANGE
                break
        out[b] = rng
    return out


@njit(cache=True)
def scan_update_kernel(
    cells: np.ndarray,
    c_max: int,
    cell_size: float,
    gx0: float,
    gy0: float,
    ox: float,
    oy: float,
    angles: np.ndarray,
    ranges: np.ndarray,
    range_max: float,
) -> None:
    """Per beam: decrement every traversed cell before the hit, then
    increment the hit cell.  Beams apply sequentially in scan order."""
    w = cells.shape[0]
    ix0 = int(np.floor((ox - gx0) / cell_size))
    iy0 = int(np.floor((oy - gy0) / cell_size))
    for b in range(len(angles)):
        dx = np.cos(angles[b])
        dy = np.sin(angles[b])
        rng = ranges[b]
        has_hit = rng < range_max - 1e-9
        ix, iy = ix0, iy0
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        if dx != 0.0:
            nxt = (ix + (1 if dx > 0 else 0)) * cell_size + gx0
            t_max_x = (nxt - ox) / dx
            t_dx = cell_size / abs(dx)
        else:
            t_max_x = np.inf
            t_dx = np.inf
        if dy != 0.0:
            nxt = (iy + (1 if dy > 0 else 0)) * cell_size + gy0
            t_max_y = (nxt - oy) / dy
            t_dy = cell_size / abs(dy)
        else:
            t_max_y = np.inf
            t_dy = np.inf

        t_entry = 0.0
        while True:
            t_exit = t_max_x if t_max_x < t_max_y else t_max_y
            inside = 0 <= ix < w and 0 <= iy < w
            if has_hit and t_entry <= rng < t_exit:
                # this cell contains the hit point
                if inside and cells[iy, ix] < c_max:
                    cells[iy, ix] += 1
                break
            if t_entry >= rng - 1e-12 or t_entry >= range_max:
                break
            if inside and t_exit <= rng + 1e-12 and cells[iy, ix] > 0:
                cells[iy, ix] -= 1
            t_entry = t_exit
            if t_max_x < t_max_y:
                t_max_x += t_dx
                ix += step_x
            else:
                t_max_y += t_dy
                iy += step_y
