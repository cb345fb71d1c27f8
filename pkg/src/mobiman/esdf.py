"""Euclidean signed distance fields on voxel grids.

Distances are measured between voxel centers (center of voxel ``(i, j, k)``
is ``origin + (ijk + 0.5) * resolution``), capped at ``max_dist`` and set to
``-resolution/2`` inside occupied voxels.  Queries interpolate trilinearly;
out-of-bounds queries clamp to the boundary and report it, which consumers
treat as "unknown space is unsafe".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

DEFAULT_MAX_DIST = 5.0


class EsdfError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Boolean occupancy over a regular 3-D lattice."""

    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).ravel()
        occ = np.asarray(self.occupancy, dtype=bool)
        if self.resolution <= 0.0:
            raise EsdfError("resolution must be positive")
        if origin.shape != (3,) or occ.ndim != 3 or min(occ.shape) < 1:
            raise EsdfError("need a 3-vector origin and a non-empty 3-d occupancy array")
        object.__setattr__(self, "origin", _readonly(origin))
        object.__setattr__(self, "occupancy", _readonly(occ))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape

    @classmethod
    def empty(cls, origin, resolution: float, dims) -> "VoxelGrid":
        return cls(np.asarray(origin, dtype=float), float(resolution),
                   np.zeros(tuple(int(d) for d in dims), dtype=bool))

    def with_occupancy(self, occ: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.resolution, occ)

    def voxel_centers_axis(self, axis: int) -> np.ndarray:
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.resolution


@dataclass(frozen=True, eq=False)
class EsdfGrid:
    """Distance-to-nearest-obstacle per voxel; negative inside obstacles."""

    origin: np.ndarray
    resolution: float
    distance: np.ndarray
    max_dist: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _readonly(np.asarray(self.origin, dtype=float)))
        object.__setattr__(self, "distance", _readonly(np.asarray(self.distance, dtype=float)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.distance.shape

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.origin + np.array(self.dims) * self.resolution
        return np.array(self.origin), hi


def build_esdf(grid: VoxelGrid, max_dist: float = DEFAULT_MAX_DIST) -> EsdfGrid:
    """Exact Euclidean distance transform of the occupancy, with sign.

    Free voxels store the exact center-to-center distance to the closest
    occupied voxel (capped at ``max_dist``); occupied voxels store
    ``-resolution/2``.  A grid without obstacles stores ``max_dist``
    everywhere; an all-occupied grid is rejected.
    """
    occ = grid.occupancy
    if occ.all():
        raise EsdfError("occupancy grid has no free voxel")
    if not occ.any():
        dist = np.full(occ.shape, float(max_dist))
    else:
        # Exact transform in voxel units so that distances are sqrt of an
        # integer; scaling by the resolution afterwards keeps the result
        # bit-comparable with a brute-force voxel scan.
        dist = ndimage.distance_transform_edt(~occ) * grid.resolution
        np.minimum(dist, float(max_dist), out=dist)
    dist[occ] = -0.5 * grid.resolution
    return EsdfGrid(grid.origin, grid.resolution, dist, float(max_dist))


class SdfQuery(NamedTuple):
    value: float
    in_bounds: bool


def _trilinear(esdf: EsdfGrid, p: np.ndarray) -> float:
    # Continuous index into the lattice of voxel centers, clamped so the
    # 8-cell stencil stays valid.
    u = (p - esdf.origin) / esdf.resolution - 0.5
    dims = np.array(esdf.dims)
    u = np.clip(u, 0.0, dims - 1.0)
    i0 = np.minimum(u.astype(int), dims - 2).astype(int)
    i0 = np.maximum(i0, 0)
    f = u - i0
    d = esdf.distance
    ix, iy, iz = i0
    fx, fy, fz = f
    if np.all(dims >= 2):
        c = d[ix:ix + 2, iy:iy + 2, iz:iz + 2]
        wx = np.array([1 - fx, fx])
        wy = np.array([1 - fy, fy])
        wz = np.array([1 - fz, fz])
        return float(np.einsum("i,j,k,ijk->", wx, wy, wz, c))
    # Degenerate axes: interpolate only along valid ones.
    val = 0.0
    for dx in range(2 if dims[0] > 1 else 1):
        for dy in range(2 if dims[1] > 1 else 1):
            for dz in range(2 if dims[2] > 1 else 1):
                w = ((fx if dx else 1 - fx) if dims[0] > 1 else 1.0) \
                    * ((fy if dy else 1 - fy) if dims[1] > 1 else 1.0) \
                    * ((fz if dz else 1 - fz) if dims[2] > 1 else 1.0)
                val += w * d[ix + dx, iy + dy, iz + dz]
    return float(val)


def sdf_query(esdf: EsdfGrid, p) -> SdfQuery:
    """Interpolated distance plus an in-bounds flag (clamped when outside)."""
    p = np.asarray(p, dtype=float).ravel()
    lo, hi = esdf.bounds()
    in_bounds = bool(np.all(p >= lo) and np.all(p <= hi))
    return SdfQuery(_trilinear(esdf, p), in_bounds)


def sdf_dist(esdf: EsdfGrid, p) -> float:
    """Trilinearly interpolated distance at a metric point."""
    return sdf_query(esdf, p).value


def sdf_grad(esdf: EsdfGrid, p, zero_tol: float = 1e-9) -> np.ndarray:
    """Unit gradient of the interpolated field (zero vector when flat).

    Central differences of ``sdf_dist`` with step ``resolution / 2``,
    normalized; points away from the nearest obstacle.
    """
    p = np.asarray(p, dtype=float).ravel()
    h = 0.5 * esdf.resolution
    g = np.empty(3)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        g[axis] = (_trilinear(esdf, p + e) - _trilinear(esdf, p - e)) / (2.0 * h)
    n = float(np.linalg.norm(g))
    if n < zero_tol:
        return np.zeros(3)
    return g / n


# --- occupancy ingestion ------------------------------------------------------

VOXEL_HEADER = "esdf-voxels v1"


def save_voxels(grid: VoxelGrid, path) -> None:
    nx, ny, nz = grid.dims
    ox, oy, oz = (float(v) for v in grid.origin)
    lines = [f"{VOXEL_HEADER} {nx} {ny} {nz} {float(grid.resolution)!r} {ox!r} {oy!r} {oz!r}"]
    for i, j, k in np.argwhere(grid.occupancy):
        lines.append(f"{i} {j} {k}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_voxels(path) -> VoxelGrid:
    """Read the plain-text occupied-voxel list format."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith(VOXEL_HEADER):
        raise EsdfError(f"{path}: missing '{VOXEL_HEADER}' header")
    fields = lines[0][len(VOXEL_HEADER):].split()
    if len(fields) != 7:
        raise EsdfError(f"{path}: header needs nx ny nz resolution ox oy oz")
    nx, ny, nz = (int(v) for v in fields[:3])
    res = float(fields[3])
    origin = np.array([float(v) for v in fields[4:]])
    occ = np.zeros((nx, ny, nz), dtype=bool)
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise EsdfError(f"{path}:{lineno}: expected 'i j k'")
        i, j, k = (int(v) for v in parts)
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            raise EsdfError(f"{path}:{lineno}: voxel index out of range")
        occ[i, j, k] = True
    return VoxelGrid(origin, res, occ)


def save_esdf(esdf: EsdfGrid, path) -> None:
    np.savez_compressed(path, origin=esdf.origin, resolution=esdf.resolution,
                        distance=esdf.distance, max_dist=esdf.max_dist)


def load_esdf(path) -> EsdfGrid:
    data = np.load(path)
    return EsdfGrid(data["origin"], float(data["resolution"]),
                    data["distance"], float(data["max_dist"]))


# --- procedural scenes --------------------------------------------------------


def add_box(grid: VoxelGrid, lo, hi) -> VoxelGrid:
    """Mark every voxel whose center lies inside the axis-aligned box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    cx = grid.voxel_centers_axis(0)
    cy = grid.voxel_centers_axis(1)
    cz = grid.voxel_centers_axis(2)
    inside = ((cx >= lo[0]) & (cx <= hi[0]))[:, None, None] \
        & ((cy >= lo[1]) & (cy <= hi[1]))[None, :, None] \
        & ((cz >= lo[2]) & (cz <= hi[2]))[None, None, :]
    return grid.with_occupancy(grid.occupancy | inside)


def add_cylinder(grid: VoxelGrid, center_xy, radius: float, z_lo: float, z_hi: float) -> VoxelGrid:
    """Mark voxels inside a vertical cylinder."""
    cx = grid.voxel_centers_axis(0)
    cy = grid.voxel_centers_axis(1)
    cz = grid.voxel_centers_axis(2)
    r2 = (cx - center_xy[0])[:, None] ** 2 + (cy - center_xy[1])[None, :] ** 2
    inside = (r2 <= radius * radius)[:, :, None] & ((cz >= z_lo) & (cz <= z_hi))[None, None, :]
    return grid.with_occupancy(grid.occupancy | inside)
