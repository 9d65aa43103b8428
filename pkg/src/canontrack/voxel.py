"""Voxel grids and per-frame TSDF fusion from depth images.

Grid index (i, j, k) has its center at origin + (index + 0.5) * voxel_size.
TSDF sign convention: positive in free space (in front of the observed
surface), negative behind it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import Box3, SimilarityTransform

DEFAULT_VOXEL_SIZE = 0.05
OBJECT_RESOLUTION = 64


@dataclass
class CameraIntrinsics:
    """Pinhole camera model, no distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass
class DenseTsdfGrid:
    origin: np.ndarray
    voxel_size: float
    values: np.ndarray  # truncated signed distances, meters
    weights: np.ndarray  # per-voxel observation weight, 0 = never observed
    truncation: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.values.shape != self.weights.shape or self.values.ndim != 3:
            raise ValueError("values and weights must be matching 3D arrays")
        if self.voxel_size <= 0 or self.truncation <= 0:
            raise ValueError("voxel_size and truncation must be positive")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @classmethod
    def empty(
        cls,
        origin,
        voxel_size: float = DEFAULT_VOXEL_SIZE,
        dims=(64, 64, 64),
        truncation: float | None = None,
    ) -> "DenseTsdfGrid":
        if truncation is None:
            truncation = 3.0 * voxel_size
        dims = tuple(int(d) for d in dims)
        return cls(
            origin=np.asarray(origin, dtype=np.float64),
            voxel_size=voxel_size,
            values=np.zeros(dims),
            weights=np.zeros(dims),
            truncation=truncation,
        )

    @classmethod
    def for_bounds(cls, bounds: Box3, voxel_size: float = DEFAULT_VOXEL_SIZE,
                   truncation: float | None = None) -> "DenseTsdfGrid":
        dims = np.ceil(bounds.extents / voxel_size).astype(int)
        return cls.empty(bounds.min_corner, voxel_size, dims, truncation)

    def voxel_centers(self) -> np.ndarray:
        """World-space voxel centers, shape dims + (3,)."""
        idx = np.stack(
            np.meshgrid(*[np.arange(d) for d in self.dims], indexing="ij"), axis=-1
        )
        return self.origin + (idx + 0.5) * self.voxel_size

    def bounds(self) -> Box3:
        extents = np.array(self.dims) * self.voxel_size
        return Box3(self.origin + 0.5 * extents, extents)


@dataclass
class SparseSurfaceGrid:
    """Integer coordinates of near-surface voxels, sharing the TSDF's frame."""

    coords: np.ndarray  # (N, 3) int
    origin: np.ndarray
    voxel_size: float

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def centers(self) -> np.ndarray:
        return self.origin + (self.coords + 0.5) * self.voxel_size


@dataclass
class OccupancyGrid:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 3:
            raise ValueError("occupancy grid must be 3D")

    @property
    def dims(self) -> tuple:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass
class NocGrid:
    """Per-voxel canonical coordinates in [0,1]^3 with a validity mask."""

    coords: np.ndarray  # (..., 3) float
    valid: np.ndarray  # (...) bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.coords.shape[:-1] != self.valid.shape or self.coords.shape[-1] != 3:
            raise ValueError("coords/valid shape mismatch")
        if self.valid.any():
            v = self.coords[self.valid]
            if v.min() < -1e-9 or v.max() > 1 + 1e-9:
                raise ValueError("valid canonical coordinates must lie in [0,1]^3")

    @property
    def dims(self) -> tuple:
        return self.valid.shape


def fuse_depth_frame(
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    camera_pose: SimilarityTransform,
    grid: DenseTsdfGrid,
) -> DenseTsdfGrid:
    """Integrate one depth frame into the grid (running weighted average).

    `depth` is (height, width) in meters, 0 marking invalid pixels.
    `camera_pose` is camera-to-world and must have unit scale.
    Returns a new grid; the input is not modified.
    """
    if abs(camera_pose.scale - 1.0) > 1e-12:
        raise ValueError("camera pose must have unit scale")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise ValueError("depth image shape does not match intrinsics")

    centers = grid.voxel_centers().reshape(-1, 3)
    world_to_cam = camera_pose.inverse()
    cam = world_to_cam.apply(centers)
    z = cam[:, 2]
    in_front = z > 1e-6

    u = np.full(len(cam), -1, dtype=np.int64)
    v = np.full(len(cam), -1, dtype=np.int64)
    u[in_front] = np.floor(
        intrinsics.fx * cam[in_front, 0] / z[in_front] + intrinsics.cx
    ).astype(np.int64)
    v[in_front] = np.floor(
        intrinsics.fy * cam[in_front, 1] / z[in_front] + intrinsics.cy
    ).astype(np.int64)
    in_image = (
        in_front
        & (u >= 0)
        & (u < intrinsics.width)
        & (v >= 0)
        & (v < intrinsics.height)
    )

    d = np.zeros(len(cam))
    d[in_image] = depth[v[in_image], u[in_image]]
    valid = in_image & (d > 0)

    sdf = d - z
    tau = grid.truncation
    # Voxels more than tau behind the surface stay unobserved.
    update = valid & (sdf > -tau)
    sdf = np.clip(sdf, -tau, tau)

    values = grid.values.reshape(-1).copy()
    weights = grid.weights.reshape(-1).copy()
    w_old = weights[update]
    values[update] = (w_old * values[update] + sdf[update]) / (w_old + 1.0)
    weights[update] = w_old + 1.0

    return DenseTsdfGrid(
        origin=grid.origin,
        voxel_size=grid.voxel_size,
        values=values.reshape(grid.dims),
        weights=weights.reshape(grid.dims),
        truncation=grid.truncation,
    )


def extract_surface(grid: DenseTsdfGrid, band: float | None = None) -> SparseSurfaceGrid:
    """Observed voxels with |tsdf| < band.

    Default band is half a voxel, which keeps the extracted set a thin shell
    around the zero crossing rather than the full +-truncation slab.
    """
    if band is None:
        band = 0.5 * grid.voxel_size
    band = min(band, grid.truncation)
    mask = (grid.weights > 0) & (np.abs(grid.values) < band)
    coords = np.argwhere(mask)
    return SparseSurfaceGrid(coords, grid.origin, grid.voxel_size)


def _sample_positions(box: Box3, resolution: int) -> np.ndarray:
    """World centers of the resolution^3 crop lattice covering `box`."""
    idx = np.stack(
        np.meshgrid(*[np.arange(resolution)] * 3, indexing="ij"), axis=-1
    )
    return box.min_corner + (idx + 0.5) / resolution * box.extents


def _trilinear(values: np.ndarray, origin, voxel_size: float, points: np.ndarray,
               fill: float = 0.0) -> np.ndarray:
    """Trilinear interpolation aligned at voxel centers."""
    g = (points - origin) / voxel_size - 0.5
    dims = np.array(values.shape)
    i0 = np.floor(g).astype(np.int64)
    frac = g - i0
    out = np.zeros(points.shape[:-1])
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = i0 + off
        ok = np.all((idx >= 0) & (idx < dims), axis=-1)
        w = np.prod(np.where(off.astype(bool), frac, 1.0 - frac), axis=-1)
        contrib = np.full(points.shape[:-1], fill)
        ii = idx[ok]
        contrib[ok] = values[ii[:, 0], ii[:, 1], ii[:, 2]]
        out = out + w * contrib
    return out


def _nearest(values: np.ndarray, origin, voxel_size: float, points: np.ndarray,
             fill=0):
    g = (points - origin) / voxel_size
    idx = np.floor(g).astype(np.int64)
    dims = np.array(values.shape)
    ok = np.all((idx >= 0) & (idx < dims), axis=-1)
    out = np.full(points.shape[:-1], fill, dtype=values.dtype)
    ii = idx[ok]
    out[ok] = values[ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


def crop_grid(grid, box: Box3, *, bounds: Box3 | None = None,
              resolution: int = OBJECT_RESOLUTION):
    """Resample the region of `grid` covered by the cubified `box`.

    TSDF values are interpolated trilinearly; occupancy masks and NOC grids
    use nearest-neighbor lookup.  Grids without intrinsic geometry
    (OccupancyGrid, NocGrid) need `bounds` giving their world extent.
    """
    cube = box.cubified()
    if isinstance(grid, DenseTsdfGrid):
        if not _boxes_overlap(cube, grid.bounds()):
            raise ValueError("crop box does not overlap the grid")
        pos = _sample_positions(cube, resolution)
        vals = _trilinear(grid.values, grid.origin, grid.voxel_size, pos,
                          fill=grid.truncation)
        w = _nearest(grid.weights, grid.origin, grid.voxel_size, pos, fill=0.0)
        return DenseTsdfGrid(
            origin=cube.min_corner,
            voxel_size=float(cube.extents[0]) / resolution,
            values=np.clip(vals, -grid.truncation, grid.truncation),
            weights=w,
            truncation=grid.truncation,
        )
    if bounds is None:
        raise ValueError("bounds required for grids without intrinsic geometry")
    if not _boxes_overlap(cube, bounds):
        raise ValueError("crop box does not overlap the grid")
    if isinstance(grid, OccupancyGrid):
        vs = bounds.extents / np.array(grid.dims)
        pos = _sample_positions(cube, resolution)
        g = (pos - bounds.min_corner) / vs
        idx = np.floor(g).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=-1)
        bits = np.zeros((resolution,) * 3, dtype=bool)
        ii = idx[ok]
        bits[ok] = grid.bits[ii[:, 0], ii[:, 1], ii[:, 2]]
        return OccupancyGrid(bits)
    if isinstance(grid, NocGrid):
        vs = bounds.extents / np.array(grid.dims)
        pos = _sample_positions(cube, resolution)
        g = (pos - bounds.min_corner) / vs
        idx = np.floor(g).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=-1)
        coords = np.zeros((resolution,) * 3 + (3,))
        valid = np.zeros((resolution,) * 3, dtype=bool)
        ii = idx[ok]
        valid[ok] = grid.valid[ii[:, 0], ii[:, 1], ii[:, 2]]
        coords[ok] = grid.coords[ii[:, 0], ii[:, 1], ii[:, 2]]
        coords[~valid] = 0.0
        return NocGrid(coords, valid)
    raise TypeError(f"unsupported grid type {type(grid).__name__}")


def _boxes_overlap(a: Box3, b: Box3) -> bool:
    return bool(np.all(a.min_corner < b.max_corner) and
                np.all(b.min_corner < a.max_corner))


def binarize(values: np.ndarray, threshold: float = 0.5) -> OccupancyGrid:
    """Occupied where value >= threshold (inclusive at the boundary)."""
    v = np.asarray(values, dtype=np.float64)
    return OccupancyGrid(v >= threshold)
