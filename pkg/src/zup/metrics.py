"""Reconstruction quality metrics and the skip-slice evaluation protocol.

The protocol decimates an isotropic stack along z, reconstructs the
dropped slices with one or more methods, and scores each reconstructed
slice against the withheld original with PSNR and SSIM.  Methods never
see the withheld slices.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy import ndimage

from ._version import __version__
from .baseline import KernelSpec, interp_z
from .volume import Volume, decimate_z
from .warp import SynthesisConfig, upscale_volume

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
EVAL_METHODS = ("average", "bicubic", "flow", "linear", "nearest")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(reference: np.ndarray, test: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in decibels.

    ``10 * log10(data_range**2 / mse)``; identical inputs return the
    sentinel 99.0 dB instead of infinity.

    Raises
    ------
    ValueError
        On shape mismatch or non-positive data_range.
    """
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shapes differ: {reference.shape} vs {test.shape}")
    if not (data_range > 0):
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(data_range**2 / mse), PSNR_CAP_DB)


def _ssim_window(window: int, sigma: float) -> np.ndarray:
    radius = window // 2
    offsets = np.arange(window) - radius
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return g / g.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable filter, then crop to positions whose window lies fully
    # inside the image.
    out = ndimage.correlate1d(img, kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    margin = len(kernel) // 2
    return out[margin:-margin, margin:-margin]


def ssim(
    reference: np.ndarray,
    test: np.ndarray,
    window: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
    data_range: float = 1.0,
) -> float:
    """Mean structural similarity over a Gaussian window.

    Defaults to the usual 11x11 window with sigma 1.5 and stabilizers
    C1 = (0.01 * L)^2 and C2 = (0.03 * L)^2, averaging only window
    positions fully inside the image.  Identical inputs score 1.0.

    Raises
    ------
    ValueError
        On shape mismatch, images smaller than the window, a window
        that is not odd and >= 3, or non-positive sigma/k1/k2/data_range.
    """
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shapes differ: {reference.shape} vs {test.shape}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if reference.ndim != 2 or min(reference.shape) < window:
        raise ValueError(f"images must be 2-D and at least {window}x{window}, got {reference.shape}")
    if not (sigma > 0):
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (k1 > 0 and k2 > 0):
        raise ValueError(f"k1 and k2 must be positive, got {k1}, {k2}")
    if not (data_range > 0):
        raise ValueError(f"data_range must be positive, got {data_range}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    kernel = _ssim_window(window, sigma)
    mu_a = _windowed(reference, kernel)
    mu_b = _windowed(test, kernel)
    var_a = _windowed(reference * reference, kernel) - mu_a**2
    var_b = _windowed(test * test, kernel) - mu_b**2
    cov = _windowed(reference * test, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricRow:
    """Per-method scores for one evaluated volume and factor."""

    method: str
    factor: int
    dataset: str
    psnr_mean: float
    ssim_mean: float
    per_slice: tuple  # of (z, psnr, ssim)

    def __post_init__(self):
        if len(self.per_slice) < 1:
            raise ValueError("per_slice must not be empty")
        zs = [entry[0] for entry in self.per_slice]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError(f"per_slice z indices must strictly increase, got {zs}")
        if abs(self.psnr_mean - float(np.mean([e[1] for e in self.per_slice]))) > 1e-9:
            raise ValueError("psnr_mean inconsistent with per_slice entries")
        if abs(self.ssim_mean - float(np.mean([e[2] for e in self.per_slice]))) > 1e-9:
            raise ValueError("ssim_mean inconsistent with per_slice entries")
        object.__setattr__(self, "per_slice", tuple(tuple(e) for e in self.per_slice))

    @classmethod
    def from_slices(cls, method: str, factor: int, dataset: str, per_slice) -> "MetricRow":
        per_slice = sorted(per_slice)
        return cls(
            method=method,
            factor=factor,
            dataset=dataset,
            psnr_mean=float(np.mean([e[1] for e in per_slice])),
            ssim_mean=float(np.mean([e[2] for e in per_slice])),
            per_slice=tuple(per_slice),
        )


@dataclass(frozen=True)
class EvalReport:
    """Evaluation outcome: one row per method, plus run context."""

    rows: tuple
    config: dict
    version: str = __version__
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def __post_init__(self):
        if len(self.rows) < 1:
            raise ValueError("a report needs at least one row")
        object.__setattr__(self, "rows", tuple(self.rows))


def _average_reconstruction(kept: Volume, factor: int) -> Volume:
    """Mean of the two bracketing kept slices at every inserted index."""
    src = kept.data
    out_depth = (kept.depth - 1) * factor + 1
    out = np.empty((out_depth,) + src.shape[1:], dtype=np.float64)
    out[::factor] = src
    for m in range(out_depth):
        if m % factor:
            k = m // factor
            out[m] = 0.5 * (src[k] + src[k + 1])
    return Volume(data=out, source_bit_depth=kept.source_bit_depth)


def _reconstruct(kept: Volume, factor: int, method: str, synthesis_config: SynthesisConfig, threads) -> Volume:
    if method == "flow":
        return upscale_volume(kept, factor, synthesis_config, threads=threads)
    if method == "average":
        return _average_reconstruction(kept, factor)
    kind = {"bicubic": "cubic-convolution", "linear": "linear", "nearest": "nearest"}[method]
    return interp_z(kept, factor, KernelSpec(kind=kind))


def run_skip_eval(
    volume: Volume,
    factor: int,
    methods,
    synthesis_config: SynthesisConfig | None = None,
    threads: int | None = None,
    dataset: str = "volume",
) -> EvalReport:
    """Score reconstruction methods on withheld slices.

    Decimates ``volume`` by ``factor`` (trimming trailing slices if
    needed), reconstructs with each requested method from the kept
    slices only, and computes PSNR/SSIM at exactly the skipped indices
    against the original.  Rows are ordered by method name; per-slice
    entries by z.

    Parameters
    ----------
    volume : Volume
        Ground-truth stack, deep enough to survive decimation.
    factor : int
        2, 4 or 8.
    methods : iterable of str
        Subset of {'flow', 'bicubic', 'linear', 'nearest', 'average'}.

    Returns
    -------
    EvalReport
    """
    methods = list(methods)
    if not methods:
        raise ValueError("methods must not be empty")
    unknown = sorted(set(methods) - set(EVAL_METHODS))
    if unknown:
        raise ValueError(f"unknown methods {unknown}, valid: {sorted(EVAL_METHODS)}")
    if len(set(methods)) != len(methods):
        raise ValueError(f"duplicate methods in {methods}")
    cfg = synthesis_config or SynthesisConfig()

    kept, skipped = decimate_z(volume, factor)
    rows = []
    for method in sorted(methods):
        recon = _reconstruct(kept, factor, method, cfg, threads)
        per_slice = []
        for z in skipped:
            truth = volume.data[z]
            estimate = recon.data[z]
            per_slice.append((z, psnr(truth, estimate), ssim(truth, estimate)))
        rows.append(MetricRow.from_slices(method, factor, dataset, per_slice))
        logger.info("eval %s factor %d: psnr %.3f dB, ssim %.4f", method, factor, rows[-1].psnr_mean, rows[-1].ssim_mean)

    config_snapshot = {
        "factor": factor,
        "methods": sorted(methods),
        "aggregation": "per-slice-mean",
        "flow": {
            "max_levels": cfg.flow_config.max_levels,
            "alpha": cfg.flow_config.alpha,
            "iterations_per_level": cfg.flow_config.iterations_per_level,
            "warps_per_level": cfg.flow_config.warps_per_level,
            "convergence_epsilon": cfg.flow_config.convergence_epsilon,
        },
        "synthesis": {
            "split_mode": cfg.split_mode,
            "consistency_tolerance_px": cfg.consistency_tolerance_px,
            "fallback_blend": list(cfg.fallback_blend),
        },
    }
    return EvalReport(rows=tuple(rows), config=config_snapshot)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "version": report.version,
        "timestamp": report.timestamp,
        "config": report.config,
        "rows": [
            {
                "method": row.method,
                "factor": row.factor,
                "dataset": row.dataset,
                "psnr_mean": row.psnr_mean,
                "ssim_mean": row.ssim_mean,
                "per_slice": [{"z": int(z), "psnr": p, "ssim": s} for z, p, s in row.per_slice],
            }
            for row in report.rows
        ],
    }


def render_table(report: EvalReport) -> str:
    """Fixed-width text table of the summary scores."""
    header = f"{'factor':>6}  {'method':<8}  {'psnr_db':>8}  {'ssim':>7}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        lines.append(f"{row.factor:>6}  {row.method:<8}  {row.psnr_mean:>8.3f}  {row.ssim_mean:>7.4f}")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, path=None, format: str = "json") -> str:
    """Serialize a report as JSON, CSV or a text table.

    Returns the serialized text; also writes it to ``path`` when given.
    JSON carries the full per-slice detail, CSV and the table only the
    summary rows.

    Raises
    ------
    ValueError
        On an unknown format name.
    """
    if format == "json":
        text = json.dumps(report_to_dict(report), indent=2) + "\n"
    elif format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["method", "factor", "dataset", "psnr_mean", "ssim_mean"])
        for row in report.rows:
            writer.writerow([row.method, row.factor, row.dataset, f"{row.psnr_mean:.6f}", f"{row.ssim_mean:.6f}"])
        text = buf.getvalue()
    elif format in ("table", "text-table"):
        text = render_table(report)
    else:
        raise ValueError(f"format must be 'json', 'csv' or 'table', got {format!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
