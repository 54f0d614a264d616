"""A* search over the global costmap with 4-connected moves."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .terrain import C_MAX

C_BASE = 1.0
MOVES = ((-1, 0), (0, -1), (0, 1), (1, 0))


class UnreachableError(RuntimeError):
    """No traversable path connects start and goal."""


@dataclass(frozen=True)
class GlobalPath:
    cells: tuple[tuple[int, int], ...]  # (row, col)
    waypoints: np.ndarray  # (N, 2) world x, y of cell centers
    cost: float

    def __len__(self) -> int:
        return len(self.cells)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("index,row,col,x,y\n")
            for k, ((i, j), (x, y)) in enumerate(zip(self.cells, self.waypoints)):
                f.write(f"{k},{i},{j},{x:.3f},{y:.3f}\n")


def astar(costs: np.ndarray, start: tuple[int, int], goal: tuple[int, int],
          c_base: float = C_BASE, step_m: float = 1.0, c_max: float = C_MAX):
    """Optimal 4-connected path between two cells.

    Edge cost = step_m * (c_base + cost[destination]). Cells with cost >= c_max
    are never entered. Heuristic is the Euclidean distance times c_base, which
    never overestimates since every edge costs at least step_m * c_base.
    Ties on f are broken toward the lower flat cell index.
    Returns (cells, total_cost); raises UnreachableError.
    """
    h, w = costs.shape
    si, sj = start
    gi, gj = goal
    for (i, j), name in ((start, "start"), (goal, "goal")):
        if not (0 <= i < h and 0 <= j < w):
            raise ValueError(f"{name} cell {(i, j)} outside grid {costs.shape}")
    if costs[gi, gj] >= c_max:
        raise UnreachableError("goal cell is untraversable")
    if start == goal:
        return [start], 0.0

    cost_list = costs.ravel().tolist()
    n = h * w
    g = [math.inf] * n
    parent = [-1] * n
    closed = bytearray(n)
    s = si * w + sj
    t = gi * w + gj
    hscale = c_base * step_m
    g[s] = 0.0
    heap = [(hscale * math.hypot(si - gi, sj - gj), s)]
    while heap:
        _, u = heapq.heappop(heap)
        if closed[u]:
            continue
        if u == t:
            break
        closed[u] = 1
        ui, uj = divmod(u, w)
        gu = g[u]
        for di, dj in MOVES:
            vi, vj = ui + di, uj + dj
            if not (0 <= vi < h and 0 <= vj < w):
                continue
            v = vi * w + vj
            cv = cost_list[v]
            if closed[v] or cv >= c_max:
                continue
            nd = gu + step_m * (c_base + cv)
            if nd < g[v]:
                g[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd + hscale * math.hypot(vi - gi, vj - gj), v))
    if g[t] == math.inf:
        raise UnreachableError(f"no path from {start} to {goal}")
    path = [t]
    while path[-1] != s:
        path.append(parent[path[-1]])
    path.reverse()
    return [divmod(v, w) for v in path], g[t]


def plan_global(g, start: tuple[float, float], goal: tuple[float, float],
                c_base: float = C_BASE) -> GlobalPath:
    """Plan on a GlobalCostMap between two world points."""
    (si,), (sj,), ok_s = g.cell_of(start)
    (gi,), (gj,), ok_g = g.cell_of(goal)
    if not (ok_s[0] and ok_g[0]):
        raise ValueError("start or goal outside the global costmap")
    cells, cost = astar(g.costs, (int(si), int(sj)), (int(gi), int(gj)), c_base, g.cell_m)
    cells = tuple((int(i), int(j)) for i, j in cells)
    wp = np.array([g.cell_center(i, j) for i, j in cells], dtype=float)
    return GlobalPath(cells, wp, float(cost))
