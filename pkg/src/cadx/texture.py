"""Rotation-invariant uniform LBP and its three-orthogonal-planes variant.

A 2D plane is a numpy array indexed ``plane[row, col]``; points are given
as ``(col, row)`` = ``(x, y)``.  The i-th circular neighbour of a centre
pixel sits at ``(col + R cos(2 pi i / P), row - R sin(2 pi i / P))`` and is
read with bilinear interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .volume import Volume

_SNAP = 1e-9


@dataclass(frozen=True)
class LbpParams:
    radius: float = 7
    n_points: int = 40

    def __post_init__(self):
        if not self.radius >= 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if int(self.n_points) != self.n_points or self.n_points < 4:
            raise ValueError(f"n_points must be an integer >= 4, got {self.n_points}")

    @property
    def margin(self) -> int:
        return math.ceil(self.radius) + 1

    @property
    def n_bins(self) -> int:
        return self.n_points + 2


@dataclass(frozen=True)
class FeatureVector:
    """Concatenated, per-plane L1-normalised XY/XZ/YZ histograms."""

    values: np.ndarray
    params: LbpParams

    def blocks(self) -> np.ndarray:
        return self.values.reshape(3, self.params.n_bins)


def _neighbour_offsets(radius: float, n_points: int) -> list[tuple[float, float]]:
    offsets = []
    for i in range(n_points):
        theta = 2.0 * math.pi * i / n_points
        dx, dy = radius * math.cos(theta), -radius * math.sin(theta)
        # cos/sin round-off would otherwise turn axis-aligned neighbours into
        # interpolated ones
        if abs(dx - round(dx)) < _SNAP:
            dx = float(round(dx))
        if abs(dy - round(dy)) < _SNAP:
            dy = float(round(dy))
        offsets.append((dx, dy))
    return offsets


def bilinear_sample(plane: np.ndarray, px: float, py: float) -> float:
    """Bilinearly interpolate ``plane`` at column ``px``, row ``py``."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    if not (0 <= px <= w - 1 and 0 <= py <= h - 1):
        raise ValueError(f"sample point ({px}, {py}) outside plane of size {w}x{h}")
    x0, y0 = min(int(math.floor(px)), w - 1), min(int(math.floor(py)), h - 1)
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    top = plane[y0, x0] + fx * (plane[y0, x1] - plane[y0, x0])
    bottom = plane[y1, x0] + fx * (plane[y1, x1] - plane[y1, x0])
    return float(top + fy * (bottom - top))


def riu2_encode(bits) -> int:
    """Map a circular bit pattern to its rotation-invariant uniform code.

    Patterns with at most two 0/1 transitions (wrap-around included) map to
    their number of ones; all others map to ``P + 1``.
    """
    bits = [int(b) for b in bits]
    p = len(bits)
    transitions = sum(bits[i] != bits[i - 1] for i in range(p))
    return sum(bits) if transitions <= 2 else p + 1


def lbp_code(plane: np.ndarray, x, params: LbpParams) -> int:
    plane = np.asarray(plane, dtype=np.float64)
    col, row = x
    h, w = plane.shape
    m = params.margin
    if not (m <= col <= w - 1 - m and m <= row <= h - 1 - m):
        raise ValueError(f"pixel ({col}, {row}) closer than {m} pixels to the border of a {w}x{h} plane")
    centre = plane[row, col]
    bits = [
        bilinear_sample(plane, col + dx, row + dy) - centre >= 0
        for dx, dy in _neighbour_offsets(params.radius, params.n_points)
    ]
    return riu2_encode(bits)


def _plane_stack_codes(stack: np.ndarray, params: LbpParams) -> np.ndarray:
    """riu2 codes for every interior pixel of a stack of planes ``(k, H, W)``."""
    k, h, w = stack.shape
    m = params.margin
    rows, cols = h - 2 * m, w - 2 * m
    centre = stack[:, m : m + rows, m : m + cols]

    def view(dy: int, dx: int) -> np.ndarray:
        return stack[:, m + dy : m + dy + rows, m + dx : m + dx + cols]

    ones = np.zeros(centre.shape, dtype=np.int16)
    transitions = np.zeros(centre.shape, dtype=np.int16)
    first = prev = None
    for dx, dy in _neighbour_offsets(params.radius, params.n_points):
        x0, y0 = math.floor(dx), math.floor(dy)
        fx, fy = dx - x0, dy - y0
        a = view(y0, x0)
        if fx == 0.0 and fy == 0.0:
            sample = a
        else:
            b, c, d = view(y0, x0 + 1), view(y0 + 1, x0), view(y0 + 1, x0 + 1)
            top = a + fx * (b - a)
            bottom = c + fx * (d - c)
            sample = top + fy * (bottom - top)
        bit = sample - centre >= 0
        ones += bit
        if prev is None:
            first = bit
        else:
            transitions += bit != prev
        prev = bit
    transitions += prev != first
    return np.where(transitions <= 2, ones, params.n_points + 1)


def _plane_stacks(cube: np.ndarray):
    # cube axes are (z, y, x)
    yield cube  # XY planes: rows=y, cols=x
    yield cube.transpose(1, 0, 2)  # XZ planes: rows=z, cols=x
    yield cube.transpose(2, 0, 1)  # YZ planes: rows=z, cols=y


def _as_array(volume) -> np.ndarray:
    if isinstance(volume, Volume):
        return volume.data
    arr = np.asarray(volume, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {arr.shape}")
    return arr


def lbp_top_counts(volume, params: LbpParams) -> np.ndarray:
    """Integer riu2 histograms, shape ``(3, P + 2)``, for XY, XZ and YZ planes."""
    cube = _as_array(volume)
    if min(cube.shape) <= 2 * params.margin:
        raise ValueError(
            f"volume of shape {cube.shape} too small for radius {params.radius}: "
            f"every side must exceed {2 * params.margin}"
        )
    counts = np.empty((3, params.n_bins), dtype=np.int64)
    for k, stack in enumerate(_plane_stacks(cube)):
        codes = _plane_stack_codes(stack, params)
        counts[k] = np.bincount(codes.ravel(), minlength=params.n_bins)
    return counts


def lbp_top(volume, params: LbpParams) -> FeatureVector:
    counts = lbp_top_counts(volume, params).astype(np.float64)
    hist = counts / counts.sum(axis=1, keepdims=True)
    return FeatureVector(hist.ravel(), params)


class LBPTOPTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping cubes to LBP-TOP feature rows.

    Parameters
    ----------
    radius : float, default=7
        Sampling radius in voxels.
    n_points : int, default=40
        Number of circular samples per pixel.
    """

    def __init__(self, radius=7, n_points=40):
        self.radius = radius
        self.n_points = n_points

    def fit(self, X, y=None):
        params = LbpParams(self.radius, self.n_points)
        self.n_features_out_ = 3 * params.n_bins
        return self

    def transform(self, X):
        params = LbpParams(self.radius, self.n_points)
        return np.vstack([lbp_top(v, params).values for v in X])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
