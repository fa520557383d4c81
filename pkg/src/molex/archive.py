"""Language-neutral binary weight container.

Layout (all little-endian):

    magic   8 bytes  "MOLEARC1"
    count   u32
    entry   u32 name length, UTF-8 name, u8 dtype (0=f32, 1=f64),
            u8 rank, rank x u64 dims, raw row-major payload

Entries keep their write order; readers return them in file order so a
read/rewrite round trip is byte-identical. Storage may be f32 (weight
bridges) while training math stays f64; loaders widen as needed.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MOLEARC1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_archive(path: str, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name, array in entries.items():
            arr = np.asarray(array)
            if not arr.flags.c_contiguous:
                arr = np.ascontiguousarray(arr)  # keeps 0-d shapes intact
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float64)
            code = _CODES[arr.dtype]
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<Q", dim))
            f.write(arr.astype(_DTYPES[code], copy=False).tobytes())


def read_archive(path: str) -> dict[str, np.ndarray]:
    """Entries in file order, in their stored dtype."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:8]!r}, expected {MAGIC!r}")
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
        if code not in _DTYPES:
            raise ValueError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = struct.unpack_from(f"<{rank}Q", data, pos) if rank else ()
        pos += 8 * rank
        dtype = _DTYPES[code]
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(dims)
        pos += n * dtype.itemsize
        out[name] = arr
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes after {count} entries")
    return out


def load_f64(path: str) -> dict[str, np.ndarray]:
    """Read and widen every entry to float64."""
    return {k: np.asarray(v, dtype=np.float64) for k, v in read_archive(path).items()}
