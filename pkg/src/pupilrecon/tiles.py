"""Overlapping tile grids with linear-ramp feathered blending."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


def _axis_origins(length, size, overlap):
    if size > length:
        raise ParameterError("tile larger than image")
    if size == length:
        return [0]
    stride = size - overlap
    if stride <= 0:
        raise ParameterError("overlap must be smaller than the tile size")
    n = int(np.ceil((length - overlap) / stride))
    # spread the tiles evenly so every overlap is at least the nominal one
    origins = [int(round(v)) for v in np.linspace(0, length - size, n)]
    if any(2 * (a + size - b) > size for a, b in zip(origins, origins[1:])):
        raise ParameterError("tiles overlap by more than half their size")
    return origins


@dataclass
class TileGrid:
    """Regular grid of square tiles covering an image.

    Parameters
    ----------
    shape : tuple of int
        Image shape ``(rows, cols)``.
    tile_size : int
    overlap : int
        Minimum overlap between neighbors in pixels.  Tiles are spread evenly
        between the image edges, so actual overlaps can be slightly larger.
    """

    shape: tuple
    tile_size: int = 128
    overlap: int = 16
    origins: list = field(init=False)

    def __post_init__(self):
        if self.overlap < 0:
            raise ParameterError("overlap must be non-negative")
        self.shape = tuple(int(s) for s in self.shape)
        self._rows = _axis_origins(self.shape[0], self.tile_size, self.overlap)
        self._cols = _axis_origins(self.shape[1], self.tile_size, self.overlap)
        self.origins = [(r, c) for r in self._rows for c in self._cols]

    @classmethod
    def regular(cls, shape, n_tiles, overlap=0):
        """Grid of ``n_tiles`` per axis on a square image, e.g. 3 tiles of 96 px on 256 px with 16 px overlap."""
        length = shape[0]
        size = (length + (n_tiles - 1) * overlap) / n_tiles
        if size != int(size) or shape[0] != shape[1]:
            raise ParameterError("image does not split evenly into the requested tiles")
        return cls(shape, int(size), overlap)

    def __len__(self):
        return len(self.origins)

    def _axis_weights(self, origins, length):
        size = self.tile_size
        out = []
        for i, o in enumerate(origins):
            w = np.ones(size)
            if i > 0:
                ov = origins[i - 1] + size - o
                if ov > 0:
                    w[:ov] = (np.arange(ov) + 0.5) / ov
            if i < len(origins) - 1:
                ov = o + size - origins[i + 1]
                if ov > 0:
                    w[size - ov:] = 1.0 - (np.arange(ov) + 0.5) / ov
            out.append(w)
        return out

    def weights(self):
        """Per-tile blend weights; they sum to one over the image."""
        wr = self._axis_weights(self._rows, self.shape[0])
        wc = self._axis_weights(self._cols, self.shape[1])
        return [np.outer(a, b) for a in wr for b in wc]


def split_tiles(image, grid: TileGrid):
    """Cut an image into the grid's (overlapping) tiles, in ``grid.origins`` order."""
    image = np.asarray(image)
    if image.shape[:2] != grid.shape:
        raise ParameterError("image shape does not match the tile grid")
    t = grid.tile_size
    return [image[r:r + t, c:c + t].copy() for r, c in grid.origins]


def merge_tiles(tiles, grid: TileGrid):
    """Blend tiles back into one image with linear-ramp feathering.

    The weighted average is accumulated incrementally as
    ``acc += (w / W) * (tile - acc)``, so identical overlapping values are
    reproduced bit-exactly.
    """
    if len(tiles) != len(grid):
        raise ParameterError(f"expected {len(grid)} tiles, got {len(tiles)}")
    t = grid.tile_size
    acc = np.zeros(grid.shape)
    wsum = np.zeros(grid.shape)
    for tile, w, (r, c) in zip(tiles, grid.weights(), grid.origins):
        tile = np.asarray(tile, dtype=float)
        if tile.shape != (t, t):
            raise ParameterError("tile has the wrong shape")
        a = acc[r:r + t, c:c + t]
        s = wsum[r:r + t, c:c + t]
        s += w
        nz = w > 0
        frac = np.zeros_like(w)
        frac[nz] = w[nz] / s[nz]
        a += frac * (tile - a)
    return acc
