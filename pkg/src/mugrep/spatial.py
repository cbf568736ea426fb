"""Uniform spatial hash over planar points for radius queries.

Cell size is chosen equal to the query radius, so a radius query only has to
inspect the 3x3 block of cells around the probe point.
"""

from __future__ import annotations

import math
from collections import defaultdict


def euclid(ax: float, ay: float, bx: float, by: float) -> float:
    return math.hypot(ax - bx, ay - by)


class GridIndex:
    """Static point index: build once, query within a fixed radius."""

    def __init__(self, cell_m: float):
        if cell_m <= 0:
            raise ValueError("cell size must be positive")
        self.cell_m = cell_m
        self.cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        self.points: list[tuple[float, float]] = []

    def _key(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor(x / self.cell_m), math.floor(y / self.cell_m))

    def add(self, x: float, y: float) -> int:
        idx = len(self.points)
        self.points.append((x, y))
        self.cells[self._key(x, y)].append(idx)
        return idx

    def cell_block(self, x: float, y: float, radius_m: float):
        """Yield cell keys that can contain points within radius_m of (x, y)."""
        reach = math.ceil(radius_m / self.cell_m)
        cx, cy = self._key(x, y)
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                yield (cx + dx, cy + dy)

    def within(self, x: float, y: float, radius_m: float) -> list[int]:
        """Indices of points at distance <= radius_m, in insertion order."""
        hits = []
        for key in self.cell_block(x, y, radius_m):
            bucket = self.cells.get(key)
            if not bucket:
                continue
            for idx in bucket:
                px, py = self.points[idx]
                if euclid(x, y, px, py) <= radius_m:
                    hits.append(idx)
        hits.sort()
        return hits

    def nearest_within(self, x: float, y: float, max_radius_m: float) -> tuple[int, float] | None:
        """Nearest point at distance <= max_radius_m: (index, distance), else None.

        Expands ring by ring; a point in Chebyshev cell ring r+1 is at least
        r * cell away, so the search stops as soon as the best hit beats that
        bound (ties broken toward the lower index).
        """
        if not self.points:
            return None
        cx, cy = self._key(x, y)
        best_idx, best_d = -1, math.inf
        max_ring = math.ceil(max_radius_m / self.cell_m) + 1
        for reach in range(0, max_ring + 1):
            if best_idx >= 0 and best_d <= (reach - 1) * self.cell_m:
                break
            for dx in range(-reach, reach + 1):
                for dy in range(-reach, reach + 1):
                    if max(abs(dx), abs(dy)) != reach:
                        continue
                    bucket = self.cells.get((cx + dx, cy + dy))
                    if not bucket:
                        continue
                    for idx in bucket:
                        px, py = self.points[idx]
                        d = euclid(x, y, px, py)
                        if d < best_d or (d == best_d and idx < best_idx):
                            best_idx, best_d = idx, d
        if best_idx >= 0 and best_d <= max_radius_m:
            return (best_idx, best_d)
        return None
