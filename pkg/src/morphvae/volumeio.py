"""Volume and image file I/O.

Volumes use a small MRC-2014 subset: a 1024-byte header whose words 1-3
hold NX, NY, NZ (little-endian int32), word 4 the mode (only mode 2,
float32, is accepted), words 8-10 MX, MY, MZ, words 11-13 the cell size in
physical units (float32), and the map magic "MAP " at byte offset 208. The
payload is NX*NY*NZ little-endian float32 values, x fastest, which matches
C-order storage of the [z, y, x] indexed Grid. Values are stored as
float32, so a read followed by a write reproduces the file bit-exactly.

2D grids are exported as binary PGM (P5, maxval 255) for quick inspection.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grids import Grid

HEADER_BYTES = 1024
MAP_OFFSET = 208
MODE_FLOAT32 = 2


def write_volume(grid: Grid, path) -> None:
    values = grid.values
    if values.ndim != 3:
        raise FormatError(f"volume files hold 3D grids, got shape {values.shape}")
    nz, ny, nx = values.shape
    header = bytearray(HEADER_BYTES)
    struct.pack_into("<3i", header, 0, nx, ny, nz)
    struct.pack_into("<i", header, 12, MODE_FLOAT32)
    struct.pack_into("<3i", header, 28, nx, ny, nz)
    struct.pack_into("<3f", header, 40, nx * grid.voxel_size, ny * grid.voxel_size,
                     nz * grid.voxel_size)
    header[MAP_OFFSET:MAP_OFFSET + 4] = b"MAP "
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(header) + payload)


def read_volume(path) -> Grid:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_BYTES:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes "
                          f"< {HEADER_BYTES}")
    if blob[MAP_OFFSET:MAP_OFFSET + 4] != b"MAP ":
        raise FormatError(f"{path}: bad map magic at byte offset {MAP_OFFSET}")
    nx, ny, nz = struct.unpack_from("<3i", blob, 0)
    (mode,) = struct.unpack_from("<i", blob, 12)
    if mode != MODE_FLOAT32:
        raise FormatError(f"{path}: unsupported mode {mode} at byte offset 12")
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: non-positive dims ({nx}, {ny}, {nz})")
    if not (nx == ny == nz):
        raise FormatError(f"{path}: non-cubic dims ({nx}, {ny}, {nz})")
    count = nx * ny * nz
    expected = HEADER_BYTES + 4 * count
    if len(blob) < expected:
        raise FormatError(f"{path}: truncated payload at byte offset {len(blob)}, "
                          f"expected {expected} bytes")
    cell_x = struct.unpack_from("<f", blob, 40)[0]
    voxel = float(cell_x) / nx if cell_x > 0 else 1.0
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=HEADER_BYTES)
    return Grid(values.astype(np.float64).reshape(nz, ny, nx), voxel_size=voxel)


def write_pgm(values: np.ndarray, path) -> None:
    """Write a 2D array with values in [0, 1] as binary PGM."""
    if values.ndim != 2:
        raise FormatError(f"PGM export expects a 2D array, got shape {values.shape}")
    h, w = values.shape
    pixels = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    data = parts[4][:w * h]
    if len(data) < w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w) / 255.0


def montage(tiles: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Tile equally sized 2D arrays into a rows x cols mosaic (row-major)."""
    if not tiles:
        raise FormatError("montage needs at least one tile")
    th, tw = tiles[0].shape
    out = np.zeros((rows * th, cols * tw))
    for i, tile in enumerate(tiles):
        if tile.shape != (th, tw):
            raise FormatError(f"montage tile {i} shape {tile.shape} != {(th, tw)}")
        r, c = divmod(i, cols)
        out[r * th:(r + 1) * th, c * tw:(c + 1) * tw] = tile
    return out


def central_slice(grid: Grid) -> np.ndarray:
    """The central z slice of a 3D grid (2D grids pass through)."""
    if grid.values.ndim == 2:
        return grid.values
    return grid.values[grid.values.shape[0] // 2]
