"""Optical-flow guided z-upsampling for anisotropic image stacks.

Serial-section volumes are usually far coarser along z than in-plane.
This package raises the z-resolution by synthesizing the missing
slices: dense optical flow between adjacent slices stands in for the
out-of-plane motion of structures, bracketing slices are warped toward
the midpoint and fused, and the process repeats for power-of-two
factors.  A kernel-based z-interpolation baseline and a skip-slice
evaluation protocol are included for comparison.
"""

from ._version import __version__
from .baseline import KernelSpec, cubic_weight, interp_z
from .flow import (
    ConsistencyMask,
    FlowConfig,
    FlowField,
    ImagePyramid,
    build_pyramid,
    consistency_mask,
    estimate_flow,
    read_flo,
    write_flo,
)
from .metrics import EvalReport, MetricRow, emit_report, psnr, run_skip_eval, ssim
from .synthetic import disk_slice, ramp_volume, sphere_volume, translating_disk_volume
from .viz import flow_to_color, save_flow_image
from .volume import (
    SliceTriplet,
    Volume,
    VolumeFormatError,
    VolumeMeta,
    crop_subvolumes,
    decimate_z,
    generate_triplets,
    read_volume,
    write_volume,
)
from .warp import (
    MidframeResult,
    SynthesisConfig,
    backward_warp,
    midframe_flows,
    synthesize_midframe,
    upscale_volume,
)

__all__ = [
    "__version__",
    "ConsistencyMask",
    "EvalReport",
    "FlowConfig",
    "FlowField",
    "ImagePyramid",
    "KernelSpec",
    "MetricRow",
    "MidframeResult",
    "SliceTriplet",
    "SynthesisConfig",
    "Volume",
    "VolumeFormatError",
    "VolumeMeta",
    "backward_warp",
    "build_pyramid",
    "consistency_mask",
    "crop_subvolumes",
    "cubic_weight",
    "decimate_z",
    "disk_slice",
    "emit_report",
    "estimate_flow",
    "flow_to_color",
    "generate_triplets",
    "interp_z",
    "midframe_flows",
    "psnr",
    "ramp_volume",
    "read_flo",
    "read_volume",
    "run_skip_eval",
    "save_flow_image",
    "sphere_volume",
    "ssim",
    "synthesize_midframe",
    "translating_disk_volume",
    "upscale_volume",
    "write_flo",
    "write_volume",
]
