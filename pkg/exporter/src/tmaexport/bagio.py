"""Writer for the engine's bag container format.

Byte layout (all integers little-endian u32): magic "MILB", version 1,
d, N, K, label, core_id byte length, core_id UTF-8, then N*d float32
row-major payload.  This module implements the published layout directly
so the exporter has no code dependency on the training engine.
"""

import struct

import numpy as np

MAGIC = b"MILB"
VERSION = 1


def write_bag_file(path, core_id: str, label: int, k: int,
                   embeddings: np.ndarray) -> None:
    matrix = np.ascontiguousarray(embeddings, dtype="<f4")
    n, d = matrix.shape
    cid = core_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIII", VERSION, d, n, k, label, len(cid)))
        fh.write(cid)
        fh.write(matrix.tobytes())
