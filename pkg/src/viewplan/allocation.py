"""Grid navigation costs and robot-to-viewpoint assignment."""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sampler import CandidateViewpoint
from .voxel import OccupancyGrid2

Cell = tuple[int, int]

_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    robot_to_viewpoint: dict[int, int]  # robot index -> viewpoint column
    total_cost: float


def _free(grid: OccupancyGrid2, c: Cell) -> bool:
    return grid.in_bounds(c) and not grid.occupancy[c]


def shortest_path(grid: OccupancyGrid2, start: Cell, goal: Cell) -> list[Cell] | None:
    """Dijkstra over 8-connected free cells.

    Step cost is the resolution (cardinal) or sqrt(2) times it (diagonal). A
    diagonal step is refused when both cells it squeezes between are occupied.
    """
    start, goal = tuple(start), tuple(goal)
    for name, c in (("start", start), ("goal", goal)):
        if not grid.in_bounds(c):
            raise AllocationError(f"{name} cell {c} out of bounds")
        if grid.occupancy[c]:
            raise AllocationError(f"{name} cell {c} is occupied")
    res = grid.resolution
    diag = math.sqrt(2.0) * res
    dist = {start: 0.0}
    parent: dict[Cell, Cell] = {}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in done:
            continue
        done.add(cur)
        if cur == goal:
            break
        for dx, dy in _MOVES:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in done or not _free(grid, nxt):
                continue
            if dx and dy:
                if not _free(grid, (cur[0] + dx, cur[1])) and not _free(grid, (cur[0], cur[1] + dy)):
                    continue
                nd = d + diag
            else:
                nd = d + res
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                parent[nxt] = cur
                heapq.heappush(heap, (nd, nxt))
    if goal not in done:
        return None
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    return path[::-1]


def path_length(path: Sequence[Cell], resolution: float) -> float:
    if not path:
        raise AllocationError("empty path")
    P = np.asarray(path, dtype=float) * resolution
    return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1))) if len(P) > 1 else 0.0


def viewpoint_goal_cell(candidate: CandidateViewpoint, grid: OccupancyGrid2) -> Cell:
    cell = grid.cell_of(candidate.base_xy)
    if not grid.in_bounds(cell):
        raise AllocationError(f"candidate {candidate.id} base outside the navigation grid")
    if grid.occupancy[cell]:
        raise AllocationError("goal blocked")
    return cell


def assign(costs: np.ndarray) -> Assignment:
    """Minimum-total-cost matching of robots (rows) to viewpoints (columns).

    Up to 8x8 every permutation is scanned in lexicographic order, so ties
    resolve to the lexicographically smallest mapping. Surplus robots are
    matched to zero-cost dummy viewpoints and left out of the mapping.
    """
    C = np.asarray(costs, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise AllocationError("cost matrix must be 2D and non-empty")
    n_rob, n_vp = C.shape
    if n_vp > n_rob:
        raise AllocationError("more viewpoints than robots")
    n = n_rob
    square = np.zeros((n, n))
    square[:, :n_vp] = C
    if n <= 8:
        best, best_total = None, math.inf
        for perm in itertools.permutations(range(n)):
            total = 0.0
            for r in range(n):
                total += square[r, perm[r]]
            if total < best_total:
                best, best_total = perm, total
        if best is None or not math.isfinite(best_total):
            raise AllocationError("viewpoint unreachable")
    else:
        from scipy.optimize import linear_sum_assignment
        finite = np.isfinite(square)
        if not finite.any():
            raise AllocationError("viewpoint unreachable")
        big = (np.abs(square[finite]).max() + 1.0) * n * 10
        rows, cols = linear_sum_assignment(np.where(finite, square, big))
        best = tuple(int(c) for c in cols[np.argsort(rows)])
        best_total = float(sum(square[r, best[r]] for r in range(n)))
        if not math.isfinite(best_total):
            raise AllocationError("viewpoint unreachable")
    mapping = {r: int(best[r]) for r in range(n) if best[r] < n_vp}
    return Assignment(mapping, float(sum(C[r, v] for r, v in mapping.items())))


def navigation_costs(grid: OccupancyGrid2, starts: Sequence[Sequence[float]],
                     goals: Sequence[Cell]) -> tuple[np.ndarray, dict[tuple[int, int], list[Cell]]]:
    """Path-length matrix (robots x goals) and the paths; inf when unreachable."""
    costs = np.full((len(starts), len(goals)), math.inf)
    paths = {}
    for r, xy in enumerate(starts):
        s = grid.cell_of(xy)
        for g, goal in enumerate(goals):
            path = shortest_path(grid, s, goal)
            if path is not None:
                costs[r, g] = path_length(path, grid.resolution)
                paths[(r, g)] = path
    return costs, paths
