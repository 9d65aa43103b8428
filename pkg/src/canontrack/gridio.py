"""Binary container for voxel grids.

Layout (little-endian), fixed 64-byte header followed by a row-major
(C-order) payload:

    offset  size  field
    0       4     magic, b"CGRD"
    4       2     format version (uint16), currently 1
    6       2     payload type (uint16): 0 = TSDF, 1 = occupancy,
                  2 = NOC, 3 = probability grid
    8       12    dims (3 x uint32), index order (i, j, k)
    20      8     voxel_size (float64), 0 when not applicable
    28      8     truncation (float64), 0 when not applicable
    36      24    origin (3 x float64), zeros when not applicable
    60      4     reserved, zeros

Payloads, all C-order over dims:
    TSDF:        values float64, then weights float64
    occupancy:   bits uint8 (0/1)
    NOC:         coords float64 (dims + (3,)), then valid uint8
    probability: values float64
"""

from __future__ import annotations

import struct

import numpy as np

from .voxel import DenseTsdfGrid, NocGrid, OccupancyGrid

MAGIC = b"CGRD"
VERSION = 1
_HEADER = struct.Struct("<4sHH3Idd3d4x")
assert _HEADER.size == 64

TYPE_TSDF = 0
TYPE_OCCUPANCY = 1
TYPE_NOC = 2
TYPE_PROB = 3


class GridFormatError(ValueError):
    pass


def _pack_header(ptype: int, dims, voxel_size=0.0, truncation=0.0,
                 origin=(0.0, 0.0, 0.0)) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, ptype, *[int(d) for d in dims],
                        float(voxel_size), float(truncation),
                        *[float(o) for o in origin])


def dump_grid(grid, path) -> None:
    """Write a DenseTsdfGrid, OccupancyGrid, NocGrid or probability array."""
    with open(path, "wb") as f:
        if isinstance(grid, DenseTsdfGrid):
            f.write(_pack_header(TYPE_TSDF, grid.dims, grid.voxel_size,
                                 grid.truncation, grid.origin))
            f.write(np.ascontiguousarray(grid.values, dtype=np.float64).tobytes())
            f.write(np.ascontiguousarray(grid.weights, dtype=np.float64).tobytes())
        elif isinstance(grid, OccupancyGrid):
            f.write(_pack_header(TYPE_OCCUPANCY, grid.dims))
            f.write(np.ascontiguousarray(grid.bits, dtype=np.uint8).tobytes())
        elif isinstance(grid, NocGrid):
            f.write(_pack_header(TYPE_NOC, grid.dims))
            f.write(np.ascontiguousarray(grid.coords, dtype=np.float64).tobytes())
            f.write(np.ascontiguousarray(grid.valid, dtype=np.uint8).tobytes())
        elif isinstance(grid, np.ndarray) and grid.ndim == 3:
            f.write(_pack_header(TYPE_PROB, grid.shape))
            f.write(np.ascontiguousarray(grid, dtype=np.float64).tobytes())
        else:
            raise TypeError(f"cannot dump {type(grid).__name__}")


def load_grid(path):
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise GridFormatError("truncated header")
        magic, version, ptype, dx, dy, dz, voxel_size, trunc, ox, oy, oz = \
            _HEADER.unpack(raw)
        if magic != MAGIC:
            raise GridFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise GridFormatError(f"unsupported version {version}")
        dims = (dx, dy, dz)
        n = dx * dy * dz
        payload = f.read()

    if ptype == TYPE_TSDF:
        if len(payload) != 2 * 8 * n:
            raise GridFormatError("bad TSDF payload size")
        values = np.frombuffer(payload[: 8 * n], dtype="<f8").reshape(dims)
        weights = np.frombuffer(payload[8 * n:], dtype="<f8").reshape(dims)
        return DenseTsdfGrid(np.array([ox, oy, oz]), voxel_size,
                             values.copy(), weights.copy(), trunc)
    if ptype == TYPE_OCCUPANCY:
        if len(payload) != n:
            raise GridFormatError("bad occupancy payload size")
        return OccupancyGrid(np.frombuffer(payload, dtype=np.uint8)
                             .reshape(dims).astype(bool))
    if ptype == TYPE_NOC:
        if len(payload) != 3 * 8 * n + n:
            raise GridFormatError("bad NOC payload size")
        coords = np.frombuffer(payload[: 24 * n], dtype="<f8").reshape(dims + (3,))
        valid = np.frombuffer(payload[24 * n:], dtype=np.uint8).reshape(dims)
        return NocGrid(coords.copy(), valid.astype(bool))
    if ptype == TYPE_PROB:
        if len(payload) != 8 * n:
            raise GridFormatError("bad probability payload size")
        return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    raise GridFormatError(f"unknown payload type {ptype}")
