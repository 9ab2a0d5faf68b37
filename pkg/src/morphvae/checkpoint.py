"""Binary weight checkpoints.

Layout (little-endian throughout):

    magic   4 bytes  b"AVAE"
    version u32      format version, currently 1
    records until end of file, each:
        kind    u8          layer kind tag (see layers.KIND_TAGS)
        rank    u8          number of shape extents
        extents u32 * rank
        payload f64 * prod(extents)

Record order is the model's parameter order, which is deterministic, so a
write followed by a read restores every buffer bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"AVAE"
VERSION = 1


def save_records(path, records: list[tuple[int, np.ndarray]]) -> None:
    """Write (kind tag, array) records to ``path``."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for kind, arr in records:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<BB", kind, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_records(path) -> list[tuple[int, np.ndarray]]:
    """Read back (kind tag, array) records; raises FormatError on bad bytes."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(blob)}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    records = []
    offset = 8
    while offset < len(blob):
        if offset + 2 > len(blob):
            raise FormatError(f"{path}: truncated record header at offset {offset}")
        kind, rank = struct.unpack_from("<BB", blob, offset)
        offset += 2
        if offset + 4 * rank > len(blob):
            raise FormatError(f"{path}: truncated shape extents at offset {offset}")
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload at offset {offset}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += nbytes
        records.append((kind, arr.reshape(shape).astype(np.float64)))
    return records
