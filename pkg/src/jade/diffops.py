"""Banded discrete-derivative operators for the trend penalty.

The penalty matrix of order k+1 factors as a plain first difference applied
to a scaled kth-order difference operator; both factors are banded with each
row starting on its own column index, and all construction and application
here stays in that band layout. Operators are immutable after construction
and safe to share across threads.
"""

import numpy as np

from .errors import DataError, DimensionError


class SiteGrid:
    """Strictly increasing measurement positions s_1 < ... < s_p."""

    def __init__(self, positions):
        positions = np.ascontiguousarray(positions, dtype=float)
        if positions.ndim != 1 or positions.size < 2:
            raise DimensionError("grid needs at least two 1-d positions")
        if not np.all(np.diff(positions) > 0):
            raise DataError("grid positions must be strictly increasing")
        positions.setflags(write=False)
        self.positions = positions

    @property
    def p(self):
        return self.positions.size

    def __repr__(self):
        return f"SiteGrid(p={self.p}, span=[{self.positions[0]}, {self.positions[-1]}])"


class BandedOperator:
    """Banded matrix whose ith row occupies columns i .. i+bw-1.

    Every operator produced in this module satisfies rows + bw - 1 == cols,
    which keeps application and Gram formation simple strided sums.
    """

    def __init__(self, band, cols):
        band = np.ascontiguousarray(band, dtype=float)
        rows, bw = band.shape
        if rows + bw - 1 != cols:
            raise DimensionError(
                f"band of shape {band.shape} inconsistent with {cols} columns"
            )
        band.setflags(write=False)
        self.band = band
        self.rows = rows
        self.cols = cols
        self.bw = bw

    @property
    def shape(self):
        return (self.rows, self.cols)

    def matvec(self, v):
        """Apply the operator: out[i] = sum_t band[i, t] * v[i + t]."""
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.cols:
            raise DimensionError(f"expected length {self.cols}, got {v.shape[-1]}")
        out = np.zeros(v.shape[:-1] + (self.rows,))
        for t in range(self.bw):
            out += self.band[:, t] * v[..., t : t + self.rows]
        return out

    def rmatvec(self, u):
        """Apply the transpose: scatter each band column back onto the grid."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.rows:
            raise DimensionError(f"expected length {self.rows}, got {u.shape[-1]}")
        out = np.zeros(u.shape[:-1] + (self.cols,))
        for t in range(self.bw):
            out[..., t : t + self.rows] += self.band[:, t] * u
        return out

    def gram_upper(self):
        """Upper-banded storage of the Gram matrix D^T D.

        Returns ab of shape (bw, cols) with ab[bw-1-d, j] holding the entry
        (j-d, j), the layout expected by scipy's *_banded solvers.
        """
        ab = np.zeros((self.bw, self.cols))
        for t1 in range(self.bw):
            for t2 in range(t1, self.bw):
                d = t2 - t1
                contrib = self.band[:, t1] * self.band[:, t2]
                ab[self.bw - 1 - d, t2 : t2 + self.rows] += contrib
        return ab

    def toarray(self):
        dense = np.zeros(self.shape)
        for i in range(self.rows):
            dense[i, i : i + self.bw] = self.band[i]
        return dense


def _difference_step(band, scale=None):
    """One first-difference composition in band coordinates.

    Given the band of an operator with r rows, returns the band of D^1 times
    it (r-1 rows, bandwidth one wider), optionally row-rescaled.
    """
    rows, bw = band.shape
    out = np.zeros((rows - 1, bw + 1))
    out[:, 0] = -band[:-1, 0]
    out[:, 1:bw] = band[1:, : bw - 1] - band[:-1, 1:]
    out[:, bw] = band[1:, bw - 1]
    if scale is not None:
        out *= scale[:, None]
    return out


def build_first_difference(rows):
    """The rows x (rows+1) first-difference operator with rows (-1, +1)."""
    if rows < 1:
        raise DimensionError("first-difference operator needs at least one row")
    band = np.tile([-1.0, 1.0], (rows, 1))
    return BandedOperator(band, rows + 1)


def build_scaled_kth_difference(grid, k):
    """The (p-k) x p scaled kth-order difference operator on the grid.

    Built by recursion from the identity: each level applies a first
    difference and rescales row j by i / (s_{j+i} - s_j). For k = 0 this is
    the identity.
    """
    if k < 0:
        raise DimensionError("difference order must be nonnegative")
    positions = grid.positions
    p = grid.p
    if p < k + 1:
        raise DimensionError(f"grid with p={p} too short for order k={k}")
    band = np.ones((p, 1))
    for i in range(1, k + 1):
        scale = i / (positions[i:] - positions[: p - i])
        band = _difference_step(band, scale)
    return BandedOperator(band, p)


def build_trend_operator(grid, k):
    """The (p-k-1) x p trend-penalty operator: first difference of the scaled
    kth-order differences. Annihilates polynomials of degree <= k on the grid.
    """
    if grid.p < k + 2:
        raise DimensionError(f"grid with p={grid.p} too short for trend order k={k}")
    scaled = build_scaled_kth_difference(grid, k)
    band = _difference_step(scaled.band)
    return BandedOperator(band, grid.p)
