"""Scalar density grids and the resampling helpers shared by generators and metrics.

Conventions: 2D grids are indexed [row, col]; 3D grids are indexed [z, y, x]
(x fastest in memory, matching the volume file layout). All resampling is
multilinear (bilinear / trilinear) about the canvas centre (N - 1) / 2, with
zero fill outside the source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class Grid:
    """An N-dimensional (2D or 3D) array of scalar densities."""

    values: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim not in (2, 3):
            raise ShapeError(f"grids must be 2D or 3D, got shape {self.values.shape}")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    def copy(self) -> "Grid":
        return Grid(self.values.copy(), self.voxel_size)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def sample_linear(src: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``src`` at fractional ``coords``.

    coords has shape (src.ndim, ...); positions outside the source read as 0.
    """
    nd = src.ndim
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    out = np.zeros(coords.shape[1:], dtype=np.float64)
    for corner in np.ndindex(*(2,) * nd):
        w = np.ones(coords.shape[1:], dtype=np.float64)
        valid = np.ones(coords.shape[1:], dtype=bool)
        idx = []
        for a in range(nd):
            ia = base[a] + corner[a]
            w = w * (frac[a] if corner[a] else 1.0 - frac[a])
            valid &= (ia >= 0) & (ia < src.shape[a])
            idx.append(np.clip(ia, 0, src.shape[a] - 1))
        out += w * np.where(valid, src[tuple(idx)], 0.0)
    return out


def _centre(shape) -> np.ndarray:
    return (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0


def rotate_plane(values: np.ndarray, axis_a: int, axis_b: int, angle_deg: float) -> np.ndarray:
    """Rotate by angle_deg in the (axis_a, axis_b) plane about the centre."""
    rad = math.radians(angle_deg)
    ca, sa = math.cos(rad), math.sin(rad)
    coords = np.indices(values.shape, dtype=np.float64)
    c = _centre(values.shape)
    pa = coords[axis_a] - c[axis_a]
    pb = coords[axis_b] - c[axis_b]
    # inverse rotation maps output positions back onto the source
    src = coords.copy()
    src[axis_a] = ca * pa + sa * pb + c[axis_a]
    src[axis_b] = -sa * pa + ca * pb + c[axis_b]
    return sample_linear(values, src)


def rotate_2d(values: np.ndarray, angle_deg: float) -> np.ndarray:
    if values.ndim != 2:
        raise ShapeError(f"rotate_2d expects a 2D grid, got shape {values.shape}")
    return rotate_plane(values, 0, 1, angle_deg)


def rotate_3d_planes(values: np.ndarray, angles_deg) -> np.ndarray:
    """Sequential plane rotations: xy, then xz, then yz (array axes [z, y, x]).

    A zero angle skips its resampling pass, so (0, 0, 0) is exact identity.
    """
    if values.ndim != 3:
        raise ShapeError(f"rotate_3d_planes expects a 3D grid, got shape {values.shape}")
    planes = ((2, 1), (2, 0), (1, 0))  # xy, xz, yz
    out = values
    for (a, b), angle in zip(planes, angles_deg):
        if angle != 0.0:
            out = rotate_plane(out, a, b, float(angle))
    return out


def shift_integer(values: np.ndarray, offsets) -> np.ndarray:
    """Integer shift with zero fill (no wraparound)."""
    out = np.zeros_like(values)
    src_sl, dst_sl = [], []
    for n, t in zip(values.shape, offsets):
        t = int(t)
        if abs(t) >= n:
            return out
        if t >= 0:
            dst_sl.append(slice(t, n))
            src_sl.append(slice(0, n - t))
        else:
            dst_sl.append(slice(0, n + t))
            src_sl.append(slice(-t, n))
    out[tuple(dst_sl)] = values[tuple(src_sl)]
    return out


def resample_to(values: np.ndarray, size: int) -> np.ndarray:
    """Multilinear resize to a cube/square with the given edge length."""
    shape = (size,) * values.ndim
    coords = np.indices(shape, dtype=np.float64)
    for a in range(values.ndim):
        ratio = values.shape[a] / size
        coords[a] = (coords[a] + 0.5) * ratio - 0.5
    return sample_linear(values, coords)


def _shift_axis(values: np.ndarray, t: int, axis: int) -> np.ndarray:
    offs = [0] * values.ndim
    offs[axis] = t
    return shift_integer(values, offs)


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with zero boundary, truncated at 3 sigma."""
    if sigma <= 0:
        raise ShapeError(f"blur sigma must be positive, got {sigma}")
    radius = max(1, int(math.ceil(3.0 * sigma)))
    taps = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (taps / sigma) ** 2)
    w /= w.sum()
    out = values.astype(np.float64)
    for axis in range(values.ndim):
        acc = np.zeros_like(out)
        for t, wt in zip(taps, w):
            acc += wt * _shift_axis(out, t, axis)
        out = acc
    return out


def normalise_01(values: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; constant inputs map to zeros."""
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)
