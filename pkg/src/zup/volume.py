"""Reading, writing and slicing of grayscale image stacks.

A stack on disk is either a multi-page TIFF or a raw little/big-endian
binary with a JSON sidecar describing its dimensions.  In memory every
stack becomes a :class:`Volume`: a ``(depth, height, width)`` float64
array normalized to [0, 1] by the source bit depth, z varying along
axis 0.  All operations in this module treat volumes as immutable and
return new objects.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

logger = logging.getLogger(__name__)

SUPPORTED_BIT_DEPTHS = (8, 16)
SUPPORTED_FORMATS = ("tiff-stack", "raw")


class VolumeFormatError(Exception):
    """A volume file is malformed or uses an unsupported layout."""


@dataclass(frozen=True)
class Volume:
    """Normalized image stack.

    Parameters
    ----------
    data : ndarray
        Shape ``(depth, height, width)``, values in [0, 1].  Coerced to
        float64 on construction.
    voxel_size : tuple of float, optional
        Physical voxel edge lengths ``(z, y, x)`` in nanometers.
    source_bit_depth : int
        Bit depth of the originating file, 8 or 16.  Controls
        quantization on write.
    """

    data: np.ndarray
    voxel_size: tuple[float, float, float] | None = None
    source_bit_depth: int = 8

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3-D (depth, height, width), got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"volume dimensions must all be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume data contains non-finite values")
        lo, hi = float(arr.min()), float(arr.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"volume intensities must lie in [0, 1], got range [{lo}, {hi}]")
        if self.source_bit_depth not in SUPPORTED_BIT_DEPTHS:
            raise ValueError(f"source_bit_depth must be one of {SUPPORTED_BIT_DEPTHS}, got {self.source_bit_depth}")
        if self.voxel_size is not None:
            vs = tuple(float(s) for s in self.voxel_size)
            if len(vs) != 3 or any(s <= 0 for s in vs):
                raise ValueError(f"voxel_size must be three positive lengths, got {self.voxel_size}")
            object.__setattr__(self, "voxel_size", vs)
        object.__setattr__(self, "data", arr)

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class VolumeMeta:
    """File-level description of a stack, known before pixel decode."""

    path: Path
    format: str
    bit_depth: int
    dimensions: tuple[int, int, int]  # (depth, height, width)
    voxel_size: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.format not in SUPPORTED_FORMATS:
            raise ValueError(f"format must be one of {SUPPORTED_FORMATS}, got {self.format!r}")
        if self.bit_depth not in SUPPORTED_BIT_DEPTHS:
            raise ValueError(f"bit_depth must be one of {SUPPORTED_BIT_DEPTHS}, got {self.bit_depth}")
        if len(self.dimensions) != 3 or any(d < 1 for d in self.dimensions):
            raise ValueError(f"dimensions must be three positive extents, got {self.dimensions}")


@dataclass(frozen=True)
class SliceTriplet:
    """Three consecutive slices of a stack.

    The middle slice is the interpolation target; ``z_indices`` records
    where the slices sat in the source volume.
    """

    first: np.ndarray
    middle: np.ndarray
    last: np.ndarray
    z_indices: tuple[int, int, int]

    def __post_init__(self):
        shapes = {self.first.shape, self.middle.shape, self.last.shape}
        if len(shapes) != 1:
            raise ValueError(f"triplet slices must share a shape, got {shapes}")
        a, b, c = self.z_indices
        if not (b == a + 1 and c == b + 1):
            raise ValueError(f"triplet z indices must be consecutive, got {self.z_indices}")


def _detect_format(path: Path, format_hint: str | None) -> str:
    if format_hint is not None:
        if format_hint not in SUPPORTED_FORMATS:
            raise ValueError(f"format_hint must be one of {SUPPORTED_FORMATS}, got {format_hint!r}")
        return format_hint
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        return "tiff-stack"
    if suffix in (".raw", ".bin"):
        return "raw"
    # Last resort: TIFF magic bytes, else assume raw.
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:2] in (b"II", b"MM"):
        return "tiff-stack"
    return "raw"


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def probe_raw(path: Path) -> VolumeMeta:
    """Parse and validate the JSON sidecar of a raw volume.

    The sidecar lives at ``<path>.json`` and must provide ``depth``,
    ``height``, ``width`` and ``bit_depth``; ``endianness`` defaults to
    little.  The data file length must equal
    ``depth * height * width * (bit_depth // 8)``.
    """
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise VolumeFormatError(f"raw volume {path} has no sidecar at {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"sidecar {sidecar} is not valid JSON: {exc}") from exc
    missing = [k for k in ("depth", "height", "width", "bit_depth") if k not in meta]
    if missing:
        raise VolumeFormatError(f"sidecar {sidecar} is missing keys: {missing}")
    dims = (int(meta["depth"]), int(meta["height"]), int(meta["width"]))
    bit_depth = int(meta["bit_depth"])
    if bit_depth not in SUPPORTED_BIT_DEPTHS:
        raise VolumeFormatError(f"sidecar {sidecar}: bit_depth {bit_depth} unsupported, expected one of {SUPPORTED_BIT_DEPTHS}")
    if any(d < 1 for d in dims):
        raise VolumeFormatError(f"sidecar {sidecar}: dimensions must be positive, got {dims}")
    expected = dims[0] * dims[1] * dims[2] * (bit_depth // 8)
    actual = path.stat().st_size
    if actual != expected:
        raise VolumeFormatError(
            f"raw volume {path}: payload is {actual} bytes but sidecar dimensions "
            f"{dims} at {bit_depth}-bit require {expected}"
        )
    endianness = meta.get("endianness", "little")
    if endianness not in ("little", "big"):
        raise VolumeFormatError(f"sidecar {sidecar}: endianness must be 'little' or 'big', got {endianness!r}")
    voxel_size = tuple(meta["voxel_size"]) if "voxel_size" in meta else None
    return VolumeMeta(path=path, format="raw", bit_depth=bit_depth, dimensions=dims, voxel_size=voxel_size)


def _read_tiff(path: Path) -> tuple[np.ndarray, int]:
    try:
        tif = tifffile.TiffFile(path)
    except (tifffile.TiffFileError, ValueError) as exc:
        raise VolumeFormatError(f"{path} is not a readable TIFF: {exc}") from exc
    with tif:
        pages = tif.pages
        if len(pages) == 0:
            raise VolumeFormatError(f"{path}: TIFF contains no pages")
        slices = []
        ref_shape = None
        ref_dtype = None
        for i, page in enumerate(pages):
            arr = page.asarray()
            if arr.ndim != 2:
                raise VolumeFormatError(
                    f"{path} page {i}: expected single-channel grayscale, got shape {arr.shape}"
                )
            if arr.dtype == np.uint8:
                depth_bits = 8
            elif arr.dtype == np.uint16:
                depth_bits = 16
            else:
                raise VolumeFormatError(
                    f"{path} page {i}: unsupported sample dtype {arr.dtype}, expected uint8 or uint16"
                )
            if ref_shape is None:
                ref_shape, ref_dtype = arr.shape, depth_bits
            elif arr.shape != ref_shape:
                raise VolumeFormatError(
                    f"{path} page {i}: dimensions {arr.shape} differ from page 0 dimensions {ref_shape}"
                )
            elif depth_bits != ref_dtype:
                raise VolumeFormatError(
                    f"{path} page {i}: bit depth {depth_bits} differs from page 0 bit depth {ref_dtype}"
                )
            slices.append(arr)
    return np.stack(slices, axis=0), ref_dtype


def read_volume(path, format_hint: str | None = None) -> Volume:
    """Load a stack from disk and normalize it to [0, 1].

    Parameters
    ----------
    path : str or Path
        Multi-page TIFF or raw binary file.
    format_hint : {'tiff-stack', 'raw'}, optional
        Overrides extension-based format detection.

    Returns
    -------
    Volume
        Intensities divided by ``2**bit_depth - 1``.

    Raises
    ------
    VolumeFormatError
        On unreadable files, mixed page shapes or bit depths (the
        message names the offending page), unsupported sample formats,
        or a raw payload that disagrees with its sidecar.
    """
    path = Path(path)
    if not path.exists():
        raise VolumeFormatError(f"volume file not found: {path}")
    fmt = _detect_format(path, format_hint)
    voxel_size = None
    if fmt == "tiff-stack":
        stack, bit_depth = _read_tiff(path)
    else:
        meta = probe_raw(path)
        bit_depth = meta.bit_depth
        voxel_size = meta.voxel_size
        dtype = np.dtype(np.uint8 if bit_depth == 8 else np.uint16)
        if bit_depth == 16:
            sidecar = json.loads(_sidecar_path(path).read_text())
            order = "<" if sidecar.get("endianness", "little") == "little" else ">"
            dtype = dtype.newbyteorder(order)
        stack = np.fromfile(path, dtype=dtype).reshape(meta.dimensions)
    scale = float(2**bit_depth - 1)
    return Volume(data=stack.astype(np.float64) / scale, voxel_size=voxel_size, source_bit_depth=bit_depth)


def quantize(data: np.ndarray, bit_depth: int) -> np.ndarray:
    """Map [0, 1] float intensities to integer codes, ties rounding up.

    ``round(v * (2**bit_depth - 1))`` with half-way cases away from
    zero, so 0.5 at 8 bits stores as 128.
    """
    if bit_depth not in SUPPORTED_BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {SUPPORTED_BIT_DEPTHS}, got {bit_depth}")
    scale = float(2**bit_depth - 1)
    codes = np.floor(np.clip(data, 0.0, 1.0) * scale + 0.5)
    return codes.astype(np.uint8 if bit_depth == 8 else np.uint16)


def write_volume(volume: Volume, path, format: str | None = None, compression: str | None = None) -> None:
    """Write a stack to disk, quantizing by the volume's bit depth.

    Parameters
    ----------
    volume : Volume
    path : str or Path
    format : {'tiff-stack', 'raw'}, optional
        Defaults by extension (.tif/.tiff vs anything else).
    compression : {'deflate', None}
        TIFF only; raw output is always uncompressed.
    """
    path = Path(path)
    fmt = _detect_format_for_write(path, format)
    codes = quantize(volume.data, volume.source_bit_depth)
    if fmt == "tiff-stack":
        kwargs = {}
        if compression is not None:
            if compression != "deflate":
                raise ValueError(f"compression must be 'deflate' or None, got {compression!r}")
            kwargs["compression"] = "deflate"
        tifffile.imwrite(path, codes, photometric="minisblack", **kwargs)
    else:
        if volume.source_bit_depth == 16:
            codes = codes.astype("<u2")
        codes.tofile(path)
        meta = {
            "depth": volume.depth,
            "height": volume.height,
            "width": volume.width,
            "bit_depth": volume.source_bit_depth,
            "endianness": "little",
        }
        if volume.voxel_size is not None:
            meta["voxel_size"] = list(volume.voxel_size)
        _sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def _detect_format_for_write(path: Path, format: str | None) -> str:
    if format is not None:
        if format not in SUPPORTED_FORMATS:
            raise ValueError(f"format must be one of {SUPPORTED_FORMATS}, got {format!r}")
        return format
    return "tiff-stack" if path.suffix.lower() in (".tif", ".tiff") else "raw"


def generate_triplets(volume: Volume, stride: int = 2) -> list[SliceTriplet]:
    """Enumerate overlapping consecutive slice triplets.

    Triplet ``i`` covers z indices ``(i*stride, i*stride+1, i*stride+2)``;
    with the default stride of 2 adjacent triplets share an endpoint
    slice, so a depth-D stack yields ``(D - 1) // 2`` triplets and every
    interior odd slice appears as exactly one middle.

    Raises
    ------
    ValueError
        If the volume has fewer than 3 slices or stride < 1.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if volume.depth < 3:
        raise ValueError(f"triplet generation needs depth >= 3, got {volume.depth}")
    triplets = []
    for z in range(0, volume.depth - 2, stride):
        triplets.append(
            SliceTriplet(
                first=volume.data[z],
                middle=volume.data[z + 1],
                last=volume.data[z + 2],
                z_indices=(z, z + 1, z + 2),
            )
        )
    return triplets


def crop_subvolumes(volume: Volume, sub_shape: tuple[int, int, int], max_count: int | None = None) -> list[Volume]:
    """Cut non-overlapping blocks on a regular grid.

    The grid is anchored at the origin and scans z-major, then y, then
    x; remainders at the high ends are discarded.  ``max_count`` stops
    the scan early.

    Raises
    ------
    ValueError
        If ``sub_shape`` exceeds the volume in any dimension or has a
        non-positive extent.
    """
    sd, sh, sw = (int(s) for s in sub_shape)
    if min(sd, sh, sw) < 1:
        raise ValueError(f"sub_shape extents must be positive, got {sub_shape}")
    if sd > volume.depth or sh > volume.height or sw > volume.width:
        raise ValueError(f"sub_shape {sub_shape} exceeds volume shape {volume.shape}")
    if max_count is not None and max_count < 1:
        raise ValueError(f"max_count must be positive, got {max_count}")
    out = []
    for zi in range(volume.depth // sd):
        for yi in range(volume.height // sh):
            for xi in range(volume.width // sw):
                if max_count is not None and len(out) >= max_count:
                    return out
                block = volume.data[zi * sd:(zi + 1) * sd, yi * sh:(yi + 1) * sh, xi * sw:(xi + 1) * sw]
                out.append(Volume(data=block.copy(), voxel_size=volume.voxel_size,
                                  source_bit_depth=volume.source_bit_depth))
    return out


def decimate_z(volume: Volume, factor: int) -> tuple[Volume, list[int]]:
    """Drop slices so only every ``factor``-th remains.

    Keeps z = 0, factor, 2*factor, ...  If the depth is not one more
    than a multiple of ``factor`` the trailing slices that cannot be
    bracketed by kept ones are trimmed first (logged as a warning).
    Returns the thinned volume and the z indices, in the original
    volume, of the slices that were dropped inside the trimmed range.

    Raises
    ------
    ValueError
        If ``factor`` is not 2, 4 or 8, or the volume is too shallow to
        keep at least two slices.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"decimation factor must be 2, 4 or 8, got {factor}")
    if volume.depth < factor + 1:
        raise ValueError(
            f"decimation by {factor} needs depth >= {factor + 1} to keep two slices, got {volume.depth}"
        )
    usable = ((volume.depth - 1) // factor) * factor + 1
    if usable != volume.depth:
        logger.warning(
            "decimate_z: trimming %d trailing slice(s), depth %d -> %d so endpoints are kept",
            volume.depth - usable, volume.depth, usable,
        )
    kept = volume.data[:usable:factor].copy()
    skipped = [z for z in range(usable) if z % factor != 0]
    vs = volume.voxel_size
    if vs is not None:
        vs = (vs[0] * factor, vs[1], vs[2])
    return Volume(data=kept, voxel_size=vs, source_bit_depth=volume.source_bit_depth), skipped
