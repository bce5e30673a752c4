"""
Flat binary container for fitted models.

Layout (all little-endian)::

    magic          4 bytes
    tag            uint8 length + ASCII
    meta           uint32 count + float64 values
    shape table    uint32 count, then per array: uint8 ndim + uint32 dims
    data block     float64 values of every array, row-major, in table order
"""

import struct
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DataError


def write_container(path: str, magic: bytes, tag: str, meta: Sequence[float],
                    arrays: Sequence[np.ndarray]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    tag_bytes = tag.encode('ascii')
    parts = [magic, struct.pack('<B', len(tag_bytes)), tag_bytes,
             struct.pack('<I', len(meta)), np.asarray(meta, dtype='<f8').tobytes(),
             struct.pack('<I', len(arrays))]
    for array in arrays:
        parts.append(struct.pack('<B', array.ndim))
        parts.append(struct.pack(f'<{array.ndim}I', *array.shape))
    for array in arrays:
        parts.append(np.ascontiguousarray(array, dtype='<f8').tobytes())
    with open(path, 'wb') as f:
        f.write(b''.join(parts))


def read_container(path: str, magic: bytes) -> Tuple[str, List[float], List[np.ndarray]]:
    """
    Read a container written by ``write_container``.

    Raises:
        DataError: If the magic bytes differ or the file is truncated.
    """
    with open(path, 'rb') as f:
        raw = f.read()
    if raw[:4] != magic:
        raise DataError(f"{path}: not a {magic.decode('ascii', 'replace')} container")
    try:
        offset = 4
        (tag_len,) = struct.unpack_from('<B', raw, offset)
        offset += 1
        tag = raw[offset:offset + tag_len].decode('ascii')
        offset += tag_len
        (n_meta,) = struct.unpack_from('<I', raw, offset)
        offset += 4
        meta = np.frombuffer(raw, dtype='<f8', count=n_meta, offset=offset).tolist()
        offset += 8 * n_meta
        (n_arrays,) = struct.unpack_from('<I', raw, offset)
        offset += 4
        shapes = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from('<B', raw, offset)
            offset += 1
            shapes.append(struct.unpack_from(f'<{ndim}I', raw, offset))
            offset += 4 * ndim
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape)) if shape else 1
            block = np.frombuffer(raw, dtype='<f8', count=count, offset=offset)
            arrays.append(block.astype(np.float64).reshape(shape))
            offset += 8 * count
    except (struct.error, ValueError) as e:
        raise DataError(f"{path}: truncated or corrupt container ({e})")
    return tag, meta, arrays
