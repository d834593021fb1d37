"""Uniform cell-centred grids on symmetric boxes [-L, L)^d."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class Grid:
    half_width: float
    cells: int
    dim: int = 1

    def __post_init__(self):
        if self.half_width <= 0:
            raise UsageError("grid half_width must be > 0")
        if self.cells < 2 or self.cells & (self.cells - 1):
            raise UsageError(f"grid cells must be a power of two >= 2, got {self.cells}")
        if self.dim not in (1, 2):
            raise UsageError(f"grid dim must be 1 or 2, got {self.dim}")

    @property
    def cell_width(self) -> float:
        return 2.0 * self.half_width / self.cells

    @property
    def shape(self) -> tuple:
        return (self.cells,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.cell_width ** self.dim

    def centers(self) -> np.ndarray:
        """1-d array of cell-centre coordinates along one axis."""
        w = self.cell_width
        return -self.half_width + (np.arange(self.cells) + 0.5) * w

    def mesh(self) -> np.ndarray:
        """Cell centres as an array of shape grid.shape + (dim,)."""
        c = self.centers()
        if self.dim == 1:
            return c[:, None]
        xx, yy = np.meshgrid(c, c, indexing="ij")
        return np.stack([xx, yy], axis=-1)

    def padded(self, factor: int = 2) -> "Grid":
        return Grid(self.half_width * factor, self.cells * factor, self.dim)

    def to_dict(self) -> dict:
        return {"half_width": self.half_width, "cells": self.cells, "dim": self.dim}


@dataclass
class GridFunction:
    """Real values sampled at the cell centres of a grid."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise UsageError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def from_callable(cls, grid: Grid, func, **meta) -> "GridFunction":
        """Sample func at cell centres; func receives one array per axis."""
        mesh = grid.mesh()
        args = [mesh[..., i] for i in range(grid.dim)]
        return cls(grid, np.asarray(func(*args), dtype=float), dict(meta))

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def lp_norm(self, p: float) -> float:
        return lp_norm(self.values, self.grid.cell_volume, p)

    def at(self, x) -> np.ndarray:
        """Linear interpolation of a 1-d grid function at points x (zero outside)."""
        if self.grid.dim != 1:
            raise UsageError("GridFunction.at only supports 1-d grids")
        return np.interp(np.asarray(x, dtype=float), self.grid.centers(), self.values,
                         left=0.0, right=0.0)

    def pad_to(self, grid: Grid) -> "GridFunction":
        """Zero-extend onto a larger concentric grid with the same cell width."""
        if not np.isclose(grid.cell_width, self.grid.cell_width) or grid.dim != self.grid.dim:
            raise UsageError("padding requires the same cell width and dimension")
        extra = grid.cells - self.grid.cells
        if extra < 0 or extra % 2:
            raise UsageError("target grid must be larger by an even number of cells")
        pad = extra // 2
        return GridFunction(grid, np.pad(self.values, pad), dict(self.meta))


def lp_norm(values: np.ndarray, cell_volume: float, p: float) -> float:
    a = np.abs(values)
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 1:
        return float(a.sum() * cell_volume)
    return float((np.power(a, p).sum() * cell_volume) ** (1.0 / p))
