"""Grid-based mapping from predicted 3D points to reservoir indices.

A bounded cubic grid (side C cells of size ell) is placed over the
pre-training scene. Each predicted point is quantised to a raster cell index
in [0, C^3), which a lookup table remaps to one of N preallocated reservoirs.
The first N distinct cells get their own reservoirs; further cells share a
randomly chosen existing reservoir. Mappings never change once made.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictor import PredictionGrid


@dataclass(frozen=True)
class GridConfig:
    cell_size: float      # ell, metres
    cells_per_side: int   # C; grid side length is C * ell

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.cells_per_side < 1:
            raise ValueError("cells_per_side must be >= 1")
        if self.cells_per_side ** 3 > np.iinfo(np.int64).max:
            raise ValueError("cells_per_side too large for int64 indices")


def _round_half_away(x):
    # np.round rounds half to even; the quantiser uses half away from zero.
    return np.trunc(x + np.copysign(0.5, x))


def cell_index_1d(p_k, cfg: GridConfig):
    """Quantise one coordinate: clamp(round(p/ell + C/2), 0, C-1)."""
    idx = _round_half_away(np.asarray(p_k, np.float64) / cfg.cell_size
                           + cfg.cells_per_side / 2.0)
    return np.clip(idx, 0, cfg.cells_per_side - 1).astype(np.int64)


def cell_index(p, cfg: GridConfig):
    """Raster cell index G = C^2 g(z) + C g(y) + g(x), in [0, C^3).

    Accepts one point (3,) or many (n, 3).
    """
    p = np.asarray(p, np.float64)
    g = cell_index_1d(p, cfg)
    C = cfg.cells_per_side
    return g[..., 2] * C * C + g[..., 1] * C + g[..., 0]


class ReservoirLookupTable:
    """Stable, sparse mapping from grid cell indices to reservoir indices."""

    def __init__(self, reservoir_count: int, seed: int = 0):
        if reservoir_count < 1:
            raise ValueError("need at least one reservoir")
        self.reservoir_count = reservoir_count
        self.entries: dict[int, int] = {}
        self.next_free = 0
        self.rng = np.random.default_rng(seed)

    def lookup_or_assign(self, g: int) -> int:
        """Return the reservoir for cell g, assigning one on first sight."""
        g = int(g)
        r = self.entries.get(g)
        if r is not None:
            return r
        if self.next_free < self.reservoir_count:
            r = self.next_free
            self.next_free += 1
        else:
            # All reservoirs taken: share a uniformly random existing one.
            r = int(self.rng.integers(self.reservoir_count))
        self.entries[g] = r
        return r

    @property
    def assigned_count(self) -> int:
        return self.next_free

    @property
    def occupied_cell_count(self) -> int:
        return len(self.entries)


@dataclass
class ReservoirIndexImage:
    indices: np.ndarray  # (grid_h, grid_w) int64; -1 where absent
    valid: np.ndarray    # (grid_h, grid_w) bool


def adapt(pred: PredictionGrid, table: ReservoirLookupTable,
          cfg: GridConfig) -> ReservoirIndexImage:
    """Map every valid predicted point to a reservoir index.

    Lookups happen in row-major scan order, so replaying the same frames
    against a fresh table with the same seed reproduces the assignment
    exactly.
    """
    gh, gw = pred.points.shape[:2]
    indices = np.full((gh, gw), -1, dtype=np.int64)
    if pred.valid.any():
        cells = cell_index(pred.points[pred.valid], cfg)
        mapped = np.array([table.lookup_or_assign(g) for g in cells],
                          dtype=np.int64)
        indices[pred.valid] = mapped
    return ReservoirIndexImage(indices=indices, valid=pred.valid.copy())
