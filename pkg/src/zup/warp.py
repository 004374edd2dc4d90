"""Slice synthesis by flow splitting, backward warping and fusion.

Given a bracketing pair (Z1, Z3) the mid-slice Z2 is estimated by
halving the pair's optical flow, warping both endpoints toward the
midpoint, and blending them with weights from forward/backward flow
consistency.  Powers-of-two upscaling applies this recursively: each
round doubles the slice count minus one, and later rounds interpolate
between slices synthesized earlier.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .flow import FlowConfig, FlowField, MIN_SLICE_DIM, consistency_mask, estimate_flow
from .volume import Volume

logger = logging.getLogger(__name__)

SPLIT_MODES = ("simple", "symmetric")


@dataclass(frozen=True)
class SynthesisConfig:
    """Settings for mid-slice synthesis.

    split_mode 'simple' halves each directed flow independently;
    'symmetric' (default) averages the two directions into an
    antisymmetric pair, which behaves better when the estimates
    disagree.  fallback_blend is the convex combination used where both
    consistency weights vanish.
    """

    flow_config: FlowConfig = field(default_factory=FlowConfig)
    split_mode: str = "symmetric"
    consistency_tolerance_px: float = 1.0
    fallback_blend: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}, got {self.split_mode!r}")
        if not (self.consistency_tolerance_px > 0):
            raise ValueError(f"consistency_tolerance_px must be positive, got {self.consistency_tolerance_px}")
        a, b = self.fallback_blend
        if a < 0 or b < 0 or abs(a + b - 1.0) > 1e-9:
            raise ValueError(f"fallback_blend must be non-negative and sum to 1, got {self.fallback_blend}")


@dataclass(frozen=True)
class MidframeResult:
    """Synthesized mid-slice plus the intermediates used to build it."""

    slice: np.ndarray
    flow_to_first: FlowField
    flow_to_last: FlowField
    fusion_weights: np.ndarray  # weight of the first-endpoint warp, in [0, 1]


def midframe_flows(flow_13: FlowField, flow_31: FlowField, split_mode: str = "symmetric") -> tuple[FlowField, FlowField]:
    """Split pair flows into flows from the midpoint to each endpoint.

    Under linear motion the unknown mid-slice sits halfway along each
    trajectory, so (with F13 the first-to-last flow and F31 its
    reverse):

    - 'simple':    to_first = -0.5 * F13,        to_last = -0.5 * F31
    - 'symmetric': to_first = 0.25 * (F31 - F13), to_last = 0.25 * (F13 - F31)

    Raises
    ------
    ValueError
        On shape mismatch or unknown split_mode.
    """
    if flow_13.shape != flow_31.shape:
        raise ValueError(f"flow shapes differ: {flow_13.shape} vs {flow_31.shape}")
    if split_mode == "simple":
        to_first = FlowField(u=-0.5 * flow_13.u, v=-0.5 * flow_13.v)
        to_last = FlowField(u=-0.5 * flow_31.u, v=-0.5 * flow_31.v)
    elif split_mode == "symmetric":
        du = 0.25 * (flow_31.u - flow_13.u)
        dv = 0.25 * (flow_31.v - flow_13.v)
        to_first = FlowField(u=du, v=dv)
        to_last = FlowField(u=-du, v=-dv)
    else:
        raise ValueError(f"split_mode must be one of {SPLIT_MODES}, got {split_mode!r}")
    return to_first, to_last


def backward_warp(image: np.ndarray, flow: FlowField) -> np.ndarray:
    """Sample ``image`` at p + flow(p) for every output pixel p.

    Bilinear interpolation; out-of-bounds samples clamp to the nearest
    edge pixel.  Zero flow reproduces the input bit-exactly.

    Raises
    ------
    ValueError
        If image and flow shapes differ or the flow is non-finite.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != flow.shape:
        raise ValueError(f"image shape {image.shape} does not match flow shape {flow.shape}")
    gy, gx = np.mgrid[0:image.shape[0], 0:image.shape[1]]
    return ndimage.map_coordinates(image, [gy + flow.v, gx + flow.u], order=1, mode="nearest")


def synthesize_midframe(first: np.ndarray, last: np.ndarray, config: SynthesisConfig | None = None) -> MidframeResult:
    """Estimate the slice halfway between two bracketing slices.

    Estimates flow in both directions, splits it to the midpoint, warps
    each endpoint there, and fuses the warps weighted by their warped
    forward/backward consistency.  Where both weights vanish the
    configured fallback blend applies.  Output intensities are clamped
    to [0, 1]; each pixel lies within the range spanned by the two
    warped endpoint values.

    Raises
    ------
    ValueError
        On shape mismatch or slices smaller than 8x8.
    """
    cfg = config or SynthesisConfig()
    first = np.asarray(first, dtype=np.float64)
    last = np.asarray(last, dtype=np.float64)
    if first.shape != last.shape:
        raise ValueError(f"slice shapes differ: {first.shape} vs {last.shape}")
    if first.ndim != 2 or min(first.shape) < MIN_SLICE_DIM:
        raise ValueError(f"slices must be 2-D and at least {MIN_SLICE_DIM}x{MIN_SLICE_DIM}, got {first.shape}")

    flow_13 = estimate_flow(first, last, cfg.flow_config)
    flow_31 = estimate_flow(last, first, cfg.flow_config)
    to_first, to_last = midframe_flows(flow_13, flow_31, cfg.split_mode)

    warp_first = backward_warp(first, to_first)
    warp_last = backward_warp(last, to_last)

    mask_13 = consistency_mask(flow_13, flow_31, cfg.consistency_tolerance_px)
    mask_31 = consistency_mask(flow_31, flow_13, cfg.consistency_tolerance_px)
    cred_first = backward_warp(mask_13.weights, to_first)
    cred_last = backward_warp(mask_31.weights, to_last)

    total = cred_first + cred_last
    safe_total = np.where(total > 0.0, total, 1.0)
    weight_first = np.where(total > 0.0, cred_first / safe_total, cfg.fallback_blend[0])
    fused = weight_first * warp_first + (1.0 - weight_first) * warp_last
    fused = np.clip(fused, 0.0, 1.0)
    return MidframeResult(slice=fused, flow_to_first=to_first, flow_to_last=to_last, fusion_weights=weight_first)


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        return max(1, os.cpu_count() or 1)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def _double_depth(data: np.ndarray, cfg: SynthesisConfig, threads: int, report) -> np.ndarray:
    depth = data.shape[0]
    out = np.empty((2 * depth - 1,) + data.shape[1:], dtype=np.float64)
    out[::2] = data
    pairs = list(range(depth - 1))

    def job(i: int) -> np.ndarray:
        return synthesize_midframe(data[i], data[i + 1], cfg).slice

    if threads == 1 or len(pairs) == 1:
        for i in pairs:
            out[2 * i + 1] = job(i)
            report()
    else:
        # Results land by pair index, so scheduling order cannot change
        # the assembled volume.
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {i: pool.submit(job, i) for i in pairs}
            for i in pairs:
                out[2 * i + 1] = futures[i].result()
                report()
    return out


def upscale_volume(
    volume: Volume,
    factor: int,
    config: SynthesisConfig | None = None,
    threads: int | None = None,
    progress_sink=None,
) -> Volume:
    """Raise z-resolution by a power of two via recursive mid-slice synthesis.

    Each doubling round inserts one synthesized slice between every
    adjacent pair, so a depth-D volume becomes depth ``(D-1)*factor + 1``
    after ``log2(factor)`` rounds.  Original slices are carried through
    bit-exactly at indices ``k * factor``; later rounds interpolate
    between slices produced earlier.  Pairs within a round may run on a
    thread pool, but results are assembled by index, so the output is
    byte-identical for any thread count.

    Parameters
    ----------
    volume : Volume
        depth >= 2.
    factor : int
        Power of two >= 2.
    config : SynthesisConfig, optional
    threads : int, optional
        Worker threads per round; defaults to the CPU count.
    progress_sink : callable, optional
        Called as ``progress_sink(done_pairs, total_pairs)`` after each
        synthesized slice, from the caller's thread.

    Returns
    -------
    Volume
        Same lateral shape; voxel z size divided by ``factor`` when
        known.
    """
    if factor < 2 or (factor & (factor - 1)) != 0:
        raise ValueError(f"upscale factor must be a power of two >= 2, got {factor}")
    if volume.depth < 2:
        raise ValueError(f"upscaling needs depth >= 2, got {volume.depth}")
    cfg = config or SynthesisConfig()
    n_threads = _resolve_threads(threads)
    rounds = int(math.log2(factor))
    total_pairs = sum((volume.depth - 1) * 2**r for r in range(rounds))
    done = 0

    def report():
        nonlocal done
        done += 1
        if progress_sink is not None:
            progress_sink(done, total_pairs)

    data = volume.data
    for r in range(rounds):
        logger.info("upscale round %d/%d: %d -> %d slices", r + 1, rounds, data.shape[0], 2 * data.shape[0] - 1)
        data = _double_depth(data, cfg, n_threads, report)
    vs = volume.voxel_size
    if vs is not None:
        vs = (vs[0] / factor, vs[1], vs[2])
    return Volume(data=data, voxel_size=vs, source_bit_depth=volume.source_bit_depth)
