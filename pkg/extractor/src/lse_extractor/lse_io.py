"""Writer (and reader, for self-checks) of the LSE embedding file format.

Layout, little-endian: magic ``LSE1`` | version u32 = 1 | d u32 | n u64 |
n records of { task_id u32 | class_id u32 | d x f32 }.  This module is the
extractor's own implementation of the interchange format; the consuming
engine has its own loader.
"""

import struct

import numpy as np

MAGIC = b"LSE1"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


class LseFormatError(Exception):
    pass


def write_lse(path, task_ids, class_ids, vectors):
    """Write float32 vectors with their (task, class) labels, in order."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise LseFormatError("need a non-empty (n, d) vector matrix")
    n, d = vectors.shape
    rec = np.empty(n, dtype=np.dtype([("t", "<u4"), ("c", "<u4"), ("v", "<f4", (d,))]))
    rec["t"] = np.asarray(task_ids, dtype=np.uint32)
    rec["c"] = np.asarray(class_ids, dtype=np.uint32)
    rec["v"] = vectors
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, d, n))
        f.write(rec.tobytes())


def read_lse(path):
    """Self-check reader; returns (task_ids, class_ids, vectors)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise LseFormatError(f"{path}: bad magic")
    _, version, d, n = _HEADER.unpack_from(data)
    if version != VERSION:
        raise LseFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + n * (8 + 4 * d)
    if len(data) != expected:
        raise LseFormatError(f"{path}: size {len(data)} != expected {expected}")
    rec = np.frombuffer(data, dtype=np.dtype([("t", "<u4"), ("c", "<u4"), ("v", "<f4", (d,))]),
                        count=n, offset=_HEADER.size)
    return rec["t"].astype(np.int64), rec["c"].astype(np.int64), np.array(rec["v"])
