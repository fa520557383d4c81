"""Writer/reader for the MOLEARC1 tensor container.

Implemented here independently of the training library: the on-disk format
is the interface between the two tools. Layout (little-endian):

    magic "MOLEARC1" | u32 count | per entry:
    u32 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
    rank x u64 dims, raw row-major payload
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MOLEARC1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write(path: str, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name, array in entries.items():
            arr = np.asarray(array)
            if arr.dtype not in _CODES:
                raise ValueError(f"entry {name!r}: dtype {arr.dtype} is not f32/f64")
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(arr.astype(_DTYPES[_CODES[arr.dtype]], copy=False).tobytes())


def read(path: str) -> dict[str, np.ndarray]:
    """Entries in file order, in their stored dtype."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}")
    pos = 8
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}Q", data, pos) if rank else ()
        pos += 8 * rank
        dtype = _DTYPES[code]
        n = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(dims)
        pos += n * dtype.itemsize
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} entries")
    return out
