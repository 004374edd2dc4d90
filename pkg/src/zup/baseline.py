"""Kernel-based z-axis resampling used as the comparison baseline.

Interpolation runs independently along each (y, x) column of the
stack, so only the z spacing changes.  The default kernel is the
cubic-convolution family with a = -0.5, the same piecewise cubic most
image libraries call bicubic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .volume import Volume

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("cubic-convolution", "linear", "nearest")


@dataclass(frozen=True)
class KernelSpec:
    """Resampling kernel selection.

    ``a`` is the cubic-convolution free parameter, meaningful only for
    kind 'cubic-convolution'; -0.5 reproduces the common bicubic
    weights.
    """

    kind: str = "cubic-convolution"
    a: float = -0.5

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if not (-1.0 <= self.a < 0.0):
            raise ValueError(f"cubic parameter a must lie in [-1, 0), got {self.a}")


def cubic_weight(s, a: float = -0.5):
    """Cubic-convolution kernel value at offset ``s``.

    W(s) = (a+2)|s|^3 - (a+3)|s|^2 + 1          for |s| <= 1
         = a|s|^3 - 5a|s|^2 + 8a|s| - 4a        for 1 < |s| < 2
         = 0                                     otherwise

    Weights at the four taps surrounding any sample position sum to 1.
    """
    s = np.abs(np.asarray(s, dtype=np.float64))
    near = (a + 2.0) * s**3 - (a + 3.0) * s**2 + 1.0
    far = a * s**3 - 5.0 * a * s**2 + 8.0 * a * s - 4.0 * a
    out = np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))
    return out if out.ndim else float(out)


def interp_z(volume: Volume, factor: int, kernel: KernelSpec | None = None) -> Volume:
    """Resample a stack along z to ``(depth-1)*factor + 1`` slices.

    Original slices are copied through unchanged at indices
    ``k * factor``.  Between them, output slice m interpolates at
    z = m / factor using the chosen kernel; the cubic kernel reads the
    four bracketing slices with end slices replicated, and its result
    is clamped to [0, 1] since the weights can overshoot.  Stacks with
    fewer than 4 slices cannot support the cubic stencil and fall back
    to linear with a logged warning.

    Raises
    ------
    ValueError
        If factor is not 2, 4 or 8, or depth < 2.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"interpolation factor must be 2, 4 or 8, got {factor}")
    if volume.depth < 2:
        raise ValueError(f"z interpolation needs depth >= 2, got {volume.depth}")
    spec = kernel or KernelSpec()
    kind = spec.kind
    if kind == "cubic-convolution" and volume.depth < 4:
        logger.warning("interp_z: depth %d < 4, degrading cubic kernel to linear", volume.depth)
        kind = "linear"

    src = volume.data
    depth = volume.depth
    out_depth = (depth - 1) * factor + 1
    out = np.empty((out_depth,) + src.shape[1:], dtype=np.float64)
    out[::factor] = src

    for m in range(out_depth):
        if m % factor == 0:
            continue
        z = m / factor
        k = int(np.floor(z))
        s = z - k
        if kind == "nearest":
            out[m] = src[min(int(np.floor(z + 0.5)), depth - 1)]
        elif kind == "linear":
            out[m] = (1.0 - s) * src[k] + s * src[k + 1]
        else:
            taps = [min(max(k + j, 0), depth - 1) for j in (-1, 0, 1, 2)]
            weights = [cubic_weight(s - j, spec.a) for j in (-1, 0, 1, 2)]
            acc = np.zeros(src.shape[1:], dtype=np.float64)
            for t, wgt in zip(taps, weights):
                acc += wgt * src[t]
            out[m] = np.clip(acc, 0.0, 1.0)

    vs = volume.voxel_size
    if vs is not None:
        vs = (vs[0] / factor, vs[1], vs[2])
    return Volume(data=out, voxel_size=vs, source_bit_depth=volume.source_bit_depth)
