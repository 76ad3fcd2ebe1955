"""Heightfield terrain: flat ground, uniform-noise uneven ground and step plateaus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TERRAIN_KINDS = ("flat", "uneven", "steps")
MAX_UNEVEN_AMPLITUDE = 0.035
DEFAULT_STEP_HEIGHTS = (0.025, 0.0275, 0.029)


class TerrainError(ValueError):
    pass


@dataclass
class Terrain:
    """Piecewise-constant heightfield centred on the world origin.

    ``heights[i, j]`` covers x in ``origin[0] + [i, i+1) * cell`` and likewise
    for y.  Queries outside the grid return 0 (flat ground).
    """

    kind: str
    heights: np.ndarray
    cell: float
    origin: tuple = (0.0, 0.0)
    params: dict = field(default_factory=dict)

    @property
    def extent(self):
        nx, ny = self.heights.shape
        return (self.origin[0], self.origin[0] + nx * self.cell,
                self.origin[1], self.origin[1] + ny * self.cell)

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat":
            return np.zeros(np.broadcast(x, y).shape)
        fi = np.floor((x - self.origin[0]) / self.cell)
        fj = np.floor((y - self.origin[1]) / self.cell)
        nx, ny = self.heights.shape
        inside = (fi >= 0) & (fi < nx) & (fj >= 0) & (fj < ny)
        i = np.where(inside, fi, 0).astype(int)
        j = np.where(inside, fj, 0).astype(int)
        return np.where(inside, self.heights[i, j], 0.0)


def flat_terrain():
    return Terrain("flat", np.zeros((1, 1)), 1.0, (0.0, 0.0), {})


def generate_terrain(kind, params=None, seed=0, size=8.0, cell=0.05):
    """Build a terrain of ``kind`` deterministically from ``seed``.

    uneven: ``params["amplitude"]`` (m), per-cell heights uniform in [-a, a].
    steps:  ``params["heights"]`` (set of step heights, m) and optional
            ``params["width"]`` (ring width, m).  Concentric square rings
            around the origin; the first ring rises by one height drawn from
            the set and every further ring moves up or down by that height.
    """
    params = dict(params or {})
    if kind not in TERRAIN_KINDS:
        raise TerrainError(f"unknown terrain kind {kind!r}")
    rng = np.random.default_rng(seed)
    n = int(round(size / cell))
    origin = (-size / 2, -size / 2)
    if kind == "flat":
        return flat_terrain()
    if kind == "uneven":
        a = float(params.get("amplitude", MAX_UNEVEN_AMPLITUDE))
        max_a = float(params.get("max_amplitude", MAX_UNEVEN_AMPLITUDE))
        if a <= 0:
            raise TerrainError("uneven amplitude must be positive")
        if a > max_a:
            raise TerrainError(f"uneven amplitude {a} exceeds maximum {max_a}")
        heights = rng.uniform(-a, a, size=(n, n))
        # keep the spawn patch level so that resets start on defined ground
        c = n // 2
        r = int(round(float(params.get("spawn_radius", 0.3)) / cell))
        heights[c - r:c + r, c - r:c + r] = 0.0
        return Terrain("uneven", heights, cell, origin, {"amplitude": a})
    choices = tuple(float(h) for h in params.get("heights", DEFAULT_STEP_HEIGHTS))
    if not choices or min(choices) <= 0:
        raise TerrainError("step heights must be positive")
    width = float(params.get("width", 0.4))
    h0 = choices[rng.integers(len(choices))]
    centers = origin[0] + (np.arange(n) + 0.5) * cell
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    ring = (np.maximum(np.abs(xx), np.abs(yy)) // width).astype(int)
    n_rings = ring.max() + 1
    level = np.zeros(n_rings)
    level[1:] = rng.choice([-1.0, 1.0], size=n_rings - 1)
    level[1] = 1.0
    ring_heights = np.cumsum(level) * h0
    return Terrain("steps", ring_heights[ring], cell, origin,
                   {"step_height": h0, "width": width})


def uneven_amplitude_for_level(level, max_level, max_amplitude=MAX_UNEVEN_AMPLITUDE):
    """Curriculum mapping from level to uneven-ground amplitude."""
    if max_level <= 0:
        return 0.0
    return max_amplitude * min(level, max_level) / max_level


def curriculum_terrain(n_levels, max_amplitude=MAX_UNEVEN_AMPLITUDE, tile=4.0,
                       cell=0.05, seed=0):
    """One row of uneven tiles of increasing amplitude along x (level 0 is flat).

    Returns the terrain and the (n_levels, 2) tile centres.
    """
    rng = np.random.default_rng(seed)
    m = int(round(tile / cell))
    heights = np.zeros((m * n_levels, m))
    for lvl in range(n_levels):
        a = uneven_amplitude_for_level(lvl, n_levels - 1, max_amplitude)
        if a > 0:
            patch = rng.uniform(-a, a, size=(m, m))
            c, r = m // 2, int(round(0.3 / cell))
            patch[c - r:c + r, c - r:c + r] = 0.0
            heights[lvl * m:(lvl + 1) * m] = patch
    origin = (-tile / 2, -tile / 2)
    centers = np.stack([np.arange(n_levels) * tile, np.zeros(n_levels)], axis=1)
    return Terrain("uneven", heights, cell, origin,
                   {"amplitude": max_amplitude, "levels": n_levels}), centers
