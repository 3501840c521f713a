"""
vega-align - Pinhole camera and voxel rasterizer

One projection routine shared by RGB rendering, feature-map rendering and
the cross-view correspondence used by the consistency score, so all three
agree on which voxel lands in which pixel.

Conventions: world y is up; a camera basis is (right, up, forward) with
forward pointing at the look-at point. Pixel (row, col) has its centre at
(col + 0.5, row + 0.5); rows grow downward. Each occupied voxel is drawn
as a square splat of half-width 0.5 * f / depth around its projected
centre, never smaller than the pixel containing that centre. The z-buffer
keeps the strictly nearest voxel, visiting voxels in index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CameraError

WORLD_UP = np.array([0.0, 1.0, 0.0])
NEAR_PLANE = 1e-6


@dataclass(frozen=True)
class CameraSpec:
    name: str
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    focal_length: float
    resolution: int

    def __post_init__(self) -> None:
        if not self.focal_length > 0:
            raise CameraError(
                f"camera {self.name!r}: focal length must be positive, got {self.focal_length}"
            )
        if self.resolution <= 0:
            raise CameraError(
                f"camera {self.name!r}: resolution must be positive, got {self.resolution}"
            )
        self.basis()

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors."""
        eye = np.asarray(self.position, dtype=np.float64)
        forward = np.asarray(self.look_at, dtype=np.float64) - eye
        length = float(np.linalg.norm(forward))
        if length == 0.0:
            raise CameraError(f"camera {self.name!r}: position equals look-at point")
        forward = forward / length
        right = np.cross(WORLD_UP, forward)
        rlen = float(np.linalg.norm(right))
        if rlen < 1e-12:
            raise CameraError(f"camera {self.name!r}: viewing direction is parallel to world up")
        right = right / rlen
        up = np.cross(forward, right)
        return right, up, forward

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """World points [M, 3] -> continuous pixel coordinates (u, v) and depth."""
        right, up, forward = self.basis()
        rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.position)
        x, y, z = rel @ right, rel @ up, rel @ forward
        safe = np.where(z > NEAR_PLANE, z, 1.0)
        centre = self.resolution / 2.0
        u = centre + self.focal_length * x / safe
        v = centre - self.focal_length * y / safe
        return u, v, z


@dataclass(frozen=True)
class Raster:
    """Per-pixel nearest depth (inf on misses) and voxel index (-1 on misses)."""

    depth: np.ndarray
    index: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.index >= 0


def rasterize(camera: CameraSpec, centers: np.ndarray) -> Raster:
    """Z-buffer the voxels whose centres are given, in the given order."""
    res = camera.resolution
    depth = np.full((res, res), np.inf)
    index = np.full((res, res), -1, dtype=np.int64)
    if len(centers) == 0:
        return Raster(depth, index)
    u, v, z = camera.project(centers)
    for i in range(len(u)):
        if z[i] <= NEAR_PLANE:
            continue
        r = 0.5 * camera.focal_length / z[i]
        # the pixel under the projected centre is always covered
        col, row = math.floor(u[i]), math.floor(v[i])
        c0 = max(min(math.ceil(u[i] - r - 0.5), col), 0)
        c1 = min(max(math.ceil(u[i] + r - 0.5), col + 1), res)
        r0 = max(min(math.ceil(v[i] - r - 0.5), row), 0)
        r1 = min(max(math.ceil(v[i] + r - 0.5), row + 1), res)
        if c0 >= c1 or r0 >= r1:
            continue
        window = depth[r0:r1, c0:c1]
        nearer = z[i] < window
        window[nearer] = z[i]
        index[r0:r1, c0:c1][nearer] = i
    return Raster(depth, index)


def patch_of_pixels(resolution: int, patch_size: int) -> np.ndarray:
    """[H, W] map from pixel to row-major patch id."""
    if resolution % patch_size:
        raise CameraError(f"resolution {resolution} is not divisible by patch size {patch_size}")
    grid = resolution // patch_size
    rows = np.arange(resolution) // patch_size
    return rows[:, None] * grid + rows[None, :]


def dominant_patches(raster: Raster, patch_size: int) -> dict[int, int]:
    """Visible voxel index -> the patch holding most of its pixels (lowest id on ties)."""
    patches = patch_of_pixels(raster.index.shape[0], patch_size)
    hit = raster.hit
    if not hit.any():
        return {}
    voxels = raster.index[hit]
    cells = patches[hit]
    num_patches = int(patches.max()) + 1
    counts = np.zeros((int(voxels.max()) + 1, num_patches), dtype=np.int64)
    np.add.at(counts, (voxels, cells), 1)
    return {int(vox): int(np.argmax(counts[vox])) for vox in np.unique(voxels)}
