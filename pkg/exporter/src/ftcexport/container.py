"""FTC1 feature-container writer.

Byte layout (everything little-endian):

    magic   b"FTC1"
    u8      payload dtype tag (1 = float32 LE, the only tag defined)
    u8      feature rank
    u64[r]  feature dims, leading axis is the row count
    f32[..] feature payload, C order
    u64     label count (== row count)
    u16[n]  labels
    u16     class-name count
    per name: u16 utf-8 byte length, then the bytes

The trainer ships its own reader for this layout; keeping an
independent writer here is deliberate so either side catches a drift
in the format.
"""

import struct

import numpy as np

MAGIC = b"FTC1"
DTYPE_F32LE = 1


def container_write(path, features, labels, class_names):
    """Write features/labels/class names to ``path`` in FTC1 layout."""
    feats = np.asarray(features)
    labs = np.asarray(labels)
    if feats.ndim < 2:
        raise ValueError("features must have a leading row axis plus at least one feature axis")
    if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
        raise ValueError("labels must be one per feature row")
    if len(class_names) == 0 or len(class_names) >= 1 << 16:
        raise ValueError("class-name count must fit in u16 and be nonzero")
    if labs.size and (labs.min() < 0 or labs.max() >= len(class_names)):
        raise ValueError("labels must index the class-name table")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<BB", DTYPE_F32LE, feats.ndim)
    blob += struct.pack(f"<{feats.ndim}Q", *feats.shape)
    blob += np.ascontiguousarray(feats, dtype="<f4").tobytes()
    blob += struct.pack("<Q", labs.shape[0])
    blob += np.ascontiguousarray(labs, dtype="<u2").tobytes()
    blob += struct.pack("<H", len(class_names))
    for name in class_names:
        raw = name.encode("utf-8")
        if len(raw) >= 1 << 16:
            raise ValueError(f"class name too long: {name!r}")
        blob += struct.pack("<H", len(raw))
        blob += raw
    with open(path, "wb") as fh:
        fh.write(blob)
