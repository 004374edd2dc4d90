"""Dense optical flow between adjacent slices.

Coarse-to-fine variational estimation in the Horn-Schunck family: a
binomial image pyramid, and at each level a few warp iterations that
linearize brightness constancy around the current flow and solve the
resulting smoothness-regularized system by Jacobi relaxation.  A flow
field F maps reference pixel p to position p + F(p) in the target,
u along x (width), v along y (height).

The solver operates on gradients expressed in 8-bit intensity units
(unit-interval inputs scaled by 255) so that the regularization weight
alpha has its conventional magnitude; see GRADIENT_SCALE.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

MIN_SLICE_DIM = 8
MIN_LEVEL_DIM = 4

# Derivatives are taken on intensities * GRADIENT_SCALE so that the
# default alpha matches classic 8-bit Horn-Schunck settings.
GRADIENT_SCALE = 255.0

# Neighborhood average of the smoothness term: 4-neighbors weighted 1/6,
# diagonals 1/12.
HS_KERNEL = np.array(
    [
        [1.0 / 12, 1.0 / 6, 1.0 / 12],
        [1.0 / 6, 0.0, 1.0 / 6],
        [1.0 / 12, 1.0 / 6, 1.0 / 12],
    ]
)

# Damping applied to each warp iteration's flow increment.  Thin
# anti-aliased edges make the linearized data term overshoot (central
# differences halve the apparent slope of a one-pixel ramp), which
# turns undamped updates into a sustained oscillation.
WARP_RELAXATION = 0.7

# 1-D binomial weights for pyramid smoothing.
_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class FlowConfig:
    """Solver settings for :func:`estimate_flow`.

    max_levels caps the pyramid height (the build also stops once a
    level would shrink below 4 pixels on a side).  Displacements up to
    roughly ``2**(levels-1)`` pixels are recoverable.
    """

    max_levels: int = 7
    alpha: float = 15.0
    iterations_per_level: int = 100
    warps_per_level: int = 3
    convergence_epsilon: float = 1e-4

    def __post_init__(self):
        if self.max_levels < 1:
            raise ValueError(f"max_levels must be >= 1, got {self.max_levels}")
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iterations_per_level < 1:
            raise ValueError(f"iterations_per_level must be >= 1, got {self.iterations_per_level}")
        if self.warps_per_level < 1:
            raise ValueError(f"warps_per_level must be >= 1, got {self.warps_per_level}")
        if not (self.convergence_epsilon >= 0):
            raise ValueError(f"convergence_epsilon must be >= 0, got {self.convergence_epsilon}")


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u along x, v along y)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"flow components must be equal-shape 2-D arrays, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow components must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class ImagePyramid:
    """Level 0 is the full-resolution image; each level halves both dims
    (rounding up) until a dimension would fall below 4 pixels."""

    levels: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValueError("pyramid needs at least one level")
        object.__setattr__(self, "levels", tuple(self.levels))

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class ConsistencyMask:
    """Per-pixel weights in [0, 1], high where forward and backward flow
    agree."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D, got ndim={w.ndim}")
        if w.size and (w.min() < 0.0 or w.max() > 1.0):
            raise ValueError("consistency weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)


def _smooth(img: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, _BINOMIAL, axis=0, mode="nearest")
    return ndimage.correlate1d(out, _BINOMIAL, axis=1, mode="nearest")


def build_pyramid(image: np.ndarray, max_levels: int = 7) -> ImagePyramid:
    """Binomial-smoothed 2x image pyramid.

    Each coarser level is the 5-tap binomial (1,4,6,4,1)/16 smoothing of
    its parent, borders replicated, subsampled at even indices; level
    dimensions are thus ``ceil(parent / 2)``.

    Raises
    ------
    ValueError
        If the image is smaller than 8x8 or max_levels < 1.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"pyramid input must be 2-D, got ndim={image.ndim}")
    if image.shape[0] < MIN_SLICE_DIM or image.shape[1] < MIN_SLICE_DIM:
        raise ValueError(f"pyramid input must be at least {MIN_SLICE_DIM}x{MIN_SLICE_DIM}, got {image.shape}")
    if max_levels < 1:
        raise ValueError(f"max_levels must be >= 1, got {max_levels}")
    levels = [image]
    while len(levels) < max_levels:
        h, w = levels[-1].shape
        if (h + 1) // 2 < MIN_LEVEL_DIM or (w + 1) // 2 < MIN_LEVEL_DIM:
            break
        levels.append(_smooth(levels[-1])[::2, ::2])
    return ImagePyramid(levels=tuple(levels))


def _upsample_component(comp: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # Bilinear resize to the finer grid; fine pixel (y, x) samples the
    # coarse field at (y/2, x/2), then displacements double.
    gy, gx = np.mgrid[0:shape[0], 0:shape[1]]
    return ndimage.map_coordinates(comp, [gy / 2.0, gx / 2.0], order=1, mode="nearest") * 2.0


def _warp_by(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    gy, gx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    return ndimage.map_coordinates(img, [gy + v, gx + u], order=1, mode="nearest")


def _central_diff(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(img, 1, mode="edge")
    ix = 0.5 * (padded[1:-1, 2:] - padded[1:-1, :-2])
    iy = 0.5 * (padded[2:, 1:-1] - padded[:-2, 1:-1])
    return ix, iy


def estimate_flow(reference: np.ndarray, target: np.ndarray, config: FlowConfig | None = None) -> FlowField:
    """Estimate dense flow carrying ``reference`` onto ``target``.

    Runs coarse-to-fine over a shared pyramid.  At each level the
    current flow warps the target toward the reference, spatial
    gradients are averaged between the pair, and Jacobi sweeps relax

        u <- ubar - Ix * (Ix*(ubar-u0) + Iy*(vbar-v0) + It) / (alpha^2 + Ix^2 + Iy^2)

    (ubar is the neighborhood average, u0 the flow at linearization)
    until the mean update magnitude drops below convergence_epsilon or
    the iteration budget runs out.  Each warp's increment is damped by
    WARP_RELAXATION and the flow is clamped to the level's capture
    range, which keeps the solver stable on unmatchable content.

    Parameters
    ----------
    reference, target : ndarray
        Equal-shape 2-D slices, at least 8x8, values in [0, 1].
    config : FlowConfig, optional

    Returns
    -------
    FlowField
        Finite flow at the reference resolution.  Identical inputs give
        exactly zero flow.
    """
    cfg = config or FlowConfig()
    reference = np.asarray(reference, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if reference.shape != target.shape:
        raise ValueError(f"slice shapes differ: {reference.shape} vs {target.shape}")
    pyr_ref = build_pyramid(reference, cfg.max_levels)
    pyr_tgt = build_pyramid(target, cfg.max_levels)
    n_levels = len(pyr_ref)
    # Upper bound on recoverable displacement at full resolution.
    capture_range = float(2**n_levels)
    alpha_sq = cfg.alpha**2

    u = np.zeros_like(pyr_ref.levels[-1])
    v = np.zeros_like(u)
    for lvl in range(n_levels - 1, -1, -1):
        ref_l = pyr_ref.levels[lvl] * GRADIENT_SCALE
        tgt_l = pyr_tgt.levels[lvl] * GRADIENT_SCALE
        if u.shape != ref_l.shape:
            u = _upsample_component(u, ref_l.shape)
            v = _upsample_component(v, ref_l.shape)
        level_cap = capture_range / float(2**lvl)
        for _ in range(cfg.warps_per_level):
            warped = _warp_by(tgt_l, u, v)
            ix_r, iy_r = _central_diff(ref_l)
            ix_w, iy_w = _central_diff(warped)
            ix = 0.5 * (ix_r + ix_w)
            iy = 0.5 * (iy_r + iy_w)
            it = warped - ref_l
            denom = alpha_sq + ix * ix + iy * iy
            u0 = u.copy()
            v0 = v.copy()
            for _ in range(cfg.iterations_per_level):
                ubar = ndimage.correlate(u, HS_KERNEL, mode="nearest")
                vbar = ndimage.correlate(v, HS_KERNEL, mode="nearest")
                shared = (ix * (ubar - u0) + iy * (vbar - v0) + it) / denom
                u_next = ubar - ix * shared
                v_next = vbar - iy * shared
                update = float(np.mean(np.hypot(u_next - u, v_next - v)))
                u, v = u_next, v_next
                if update < cfg.convergence_epsilon:
                    break
            u = u0 + WARP_RELAXATION * (u - u0)
            v = v0 + WARP_RELAXATION * (v - v0)
            np.clip(u, -level_cap, level_cap, out=u)
            np.clip(v, -level_cap, level_cap, out=v)
    return FlowField(u=u, v=v)


def consistency_mask(forward: FlowField, backward: FlowField, tolerance_px: float = 1.0) -> ConsistencyMask:
    """Score forward/backward flow agreement per pixel.

    For each pixel p the backward flow is sampled bilinearly at
    p + forward(p) and the round-trip residual |forward(p) + backward(q)|
    mapped through ``clip(1 - r / tolerance_px, 0, 1)``.  Pixels whose
    forward flow lands outside the image get weight 0.

    Raises
    ------
    ValueError
        On shape mismatch or non-positive tolerance.
    """
    if forward.shape != backward.shape:
        raise ValueError(f"flow shapes differ: {forward.shape} vs {backward.shape}")
    if not (tolerance_px > 0):
        raise ValueError(f"tolerance_px must be positive, got {tolerance_px}")
    h, w = forward.shape
    gy, gx = np.mgrid[0:h, 0:w]
    ty = gy + forward.v
    tx = gx + forward.u
    inside = (ty >= 0) & (ty <= h - 1) & (tx >= 0) & (tx <= w - 1)
    bu = ndimage.map_coordinates(backward.u, [ty, tx], order=1, mode="nearest")
    bv = ndimage.map_coordinates(backward.v, [ty, tx], order=1, mode="nearest")
    residual = np.hypot(forward.u + bu, forward.v + bv)
    weights = np.clip(1.0 - residual / tolerance_px, 0.0, 1.0)
    weights[~inside] = 0.0
    return ConsistencyMask(weights=weights)


FLO_MAGIC = 202021.25


def write_flo(flow: FlowField, path) -> None:
    """Serialize a flow field in the Middlebury .flo layout.

    Little-endian: float32 202021.25, int32 width, int32 height, then
    row-major interleaved (u, v) float32 pairs.  Components are
    converted to float32.
    """
    h, w = flow.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[..., 0] = flow.u
    interleaved[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(interleaved.tobytes())


def read_flo(path) -> FlowField:
    """Read a Middlebury .flo file.

    Raises
    ------
    ValueError
        On a wrong magic number, nonsensical dimensions, or a payload
        shorter than the header promises.
    """
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise ValueError(f"{path}: truncated header ({len(header)} bytes)")
        magic, w, h = struct.unpack("<fii", header)
        if magic != FLO_MAGIC:
            raise ValueError(f"{path}: bad magic number {magic!r}, expected {FLO_MAGIC}")
        if w < 1 or h < 1 or w > 10**6 or h > 10**6:
            raise ValueError(f"{path}: implausible dimensions {w}x{h}")
        payload = fh.read(8 * w * h + 1)
    if len(payload) != 8 * w * h:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {8 * w * h} for {w}x{h}")
    interleaved = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return FlowField(u=interleaved[..., 0], v=interleaved[..., 1])
