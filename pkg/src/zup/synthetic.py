"""Analytic test volumes with known geometry.

These generators exist so reconstruction quality can be checked against
closed-form ground truth: a solid sphere (smoothly shrinking disks
slice to slice), a disk jumping between the end slices of a short
stack, and intensity ramps.  Edges are anti-aliased by a linear
coverage ramp: a pixel at distance d from the center of a radius-r
shape gets ``clip(r + 0.5 - d, 0, 1)``, placing the half-maximum
contour exactly at d = r.
"""

from __future__ import annotations

import numpy as np

from .volume import Volume

RAMP_AXES = ("z", "y", "x")


def disk_slice(height: int, width: int, cx: float, cy: float, radius: float) -> np.ndarray:
    """Anti-aliased filled disk centered at (cx, cy), x along width."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    yy, xx = np.mgrid[0:height, 0:width]
    dist = np.hypot(xx - cx, yy - cy)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def sphere_volume(
    depth: int,
    height: int,
    width: int,
    radius: float,
    center: tuple[float, float, float] | None = None,
) -> Volume:
    """Solid anti-aliased sphere; center defaults to the volume middle.

    Slice z at axial offset d from the center shows a disk whose
    half-maximum radius is exactly ``sqrt(radius**2 - d**2)``.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if center is None:
        center = ((depth - 1) / 2.0, (height - 1) / 2.0, (width - 1) / 2.0)
    cz, cy, cx = center
    zz, yy, xx = np.mgrid[0:depth, 0:height, 0:width]
    dist = np.sqrt((zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2)
    return Volume(data=np.clip(radius + 0.5 - dist, 0.0, 1.0))


def translating_disk_volume(
    depth: int,
    height: int,
    width: int,
    radius: float,
    start_center: tuple[float, float],
    displacement: tuple[float, float],
) -> Volume:
    """Disk at ``start_center`` (x, y) in slice 0, shifted by
    ``displacement`` (dx, dy) in the last slice; interior slices are
    black.

    The empty interior is the point: reconstructions must move the disk
    along the displacement, not fade it in and out.
    """
    if depth < 2:
        raise ValueError(f"translating disk needs depth >= 2, got {depth}")
    x0, y0 = start_center
    dx, dy = displacement
    data = np.zeros((depth, height, width), dtype=np.float64)
    data[0] = disk_slice(height, width, x0, y0, radius)
    data[-1] = disk_slice(height, width, x0 + dx, y0 + dy, radius)
    return Volume(data=data)


def ramp_volume(depth: int, height: int, width: int, axis: str = "z") -> Volume:
    """Linear intensity ramp from 0 to 1 along one axis.

    Along z, slice k is the constant ``k / (depth - 1)``; along y or x
    the ramp runs within each slice.
    """
    if axis not in RAMP_AXES:
        raise ValueError(f"axis must be one of {RAMP_AXES}, got {axis!r}")
    sizes = {"z": depth, "y": height, "x": width}
    n = sizes[axis]
    if n < 2:
        raise ValueError(f"ramp axis {axis!r} needs extent >= 2, got {n}")
    ramp = np.arange(n, dtype=np.float64) / (n - 1)
    shape = {"z": (depth, 1, 1), "y": (1, height, 1), "x": (1, 1, width)}[axis]
    data = np.broadcast_to(ramp.reshape(shape), (depth, height, width)).copy()
    return Volume(data=data)
