"""Point-to-grid projection with max-pool hole dilation.

Points project orthographically onto a north-up raster (row 0 at maximum y);
within a cell the highest point wins, ties to the lower point index. Hole
pixels carry a -inf sentinel until dilation; pixels still uncovered after the
configured passes are zero-filled and flagged in the residual mask.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import ContractViolation, Tensor
from .engine import ops


@dataclass
class RasterGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    height: int
    width: int

    def __post_init__(self):
        if self.cell_size <= 0 or self.height < 1 or self.width < 1:
            raise ContractViolation(
                f"invalid grid: cell={self.cell_size}, {self.height}x{self.width}"
            )

    @property
    def top_y(self):
        return self.origin_y + self.height * self.cell_size

    def cells_of(self, xy):
        """(row, col) int64 arrays for (N,2) world coordinates (may be out of range)."""
        col = np.floor((xy[:, 0] - self.origin_x) / self.cell_size).astype(np.int64)
        row = np.floor((self.top_y - xy[:, 1]) / self.cell_size).astype(np.int64)
        return row, col

    def coarser(self, factor):
        if self.height % factor or self.width % factor:
            raise ContractViolation(
                f"grid {self.height}x{self.width} not divisible by {factor}"
            )
        return RasterGrid(
            self.origin_x, self.origin_y, self.cell_size * factor,
            self.height // factor, self.width // factor,
        )


@dataclass
class ProjectionMap:
    winner: np.ndarray     # (H,W) int64 point index, -1 for holes
    winner_z: np.ndarray   # (H,W) float64, -inf at holes
    hole_mask: np.ndarray  # (H,W) bool

    @property
    def shape(self):
        return self.winner.shape


def build_projection(pos, grid):
    """Scatter (N,3) points onto the grid; empty input yields an all-hole map."""
    pos = np.asarray(pos, dtype=np.float64)
    row, col = grid.cells_of(pos[:, :2]) if len(pos) else (
        np.empty(0, np.int64), np.empty(0, np.int64))
    inb = (row >= 0) & (row < grid.height) & (col >= 0) & (col < grid.width)
    orig = np.flatnonzero(inb).astype(np.int64)
    win_flat = kernels.project_points(
        np.ascontiguousarray(row[inb]), np.ascontiguousarray(col[inb]),
        np.ascontiguousarray(pos[inb, 2]), grid.height, grid.width,
    )
    winner = np.full(win_flat.shape, -1, dtype=np.int64)
    hit = win_flat >= 0
    winner[hit] = orig[win_flat[hit]]
    winner = winner.reshape(grid.height, grid.width)
    winner_z = np.full(winner.shape, -np.inf)
    covered = winner >= 0
    winner_z[covered] = pos[winner[covered], 2]
    return ProjectionMap(winner=winner, winner_z=winner_z, hole_mask=~covered)


def scatter_features(feats, proj):
    """Place each winning point's feature row at its pixel; holes get -inf.

    Gradients flow only into rows that won a pixel.
    """
    grid_map = ops.scatter_project(feats, proj.winner, fill=-np.inf)
    return grid_map, proj.hole_mask.copy()


def _dilate_mask(mask):
    out = mask.copy()
    h, w = mask.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            src = mask[max(0, -dy): h - max(0, dy), max(0, -dx): w - max(0, dx)]
            out[max(0, dy): h + min(0, dy), max(0, dx): w + min(0, dx)] |= src
    return out


def dilate_fill(grid_map, hole_mask, passes):
    """Fill holes with iterated 3x3 channelwise max of the seeded values.

    After t passes a filled pixel holds the max over seeded pixels within
    Chebyshev distance t. Seeded pixels keep their values bit-exactly; pixels
    still uncovered are set to 0 and returned in the residual mask.
    """
    if passes < 0:
        raise ContractViolation(f"dilate_fill: passes must be >= 0, got {passes}")
    seed_mask = ~hole_mask
    covered = seed_mask.copy()
    buf = grid_map
    for _ in range(passes):
        buf = ops.maxpool2d(buf, (3, 3), (1, 1), pad=(1, 1), pad_value=-np.inf)
        covered = _dilate_mask(covered)
    c = grid_map.shape[0]
    seed3 = np.broadcast_to(seed_mask, (c,) + seed_mask.shape)
    out = ops.where_mask(seed3, grid_map, buf)
    residual = ~covered
    if residual.any():
        out = ops.masked_fill(out, np.broadcast_to(residual, out.shape), 0.0)
    return out, residual


def sense(pos, feats, grid, passes):
    """build_projection -> scatter_features -> dilate_fill, composed."""
    proj = build_projection(pos, grid)
    grid_map, holes = scatter_features(feats, proj)
    filled, residual = dilate_fill(grid_map, holes, passes)
    return filled, residual, proj


def dsm(pos, grid, passes=2):
    """Elevation raster: project point heights, dilate, zero the rest."""
    pos = np.asarray(pos, dtype=np.float64)
    z = Tensor(pos[:, 2:3], dtype=np.float64)
    filled, residual, _ = sense(pos, z, grid, passes)
    return filled.data[0].copy(), residual
