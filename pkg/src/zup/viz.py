"""Flow field rendering for quick visual inspection."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .flow import FlowField


def flow_to_color(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Map a flow field to an RGB image, direction as hue.

    Saturation encodes magnitude relative to ``max_magnitude`` (the
    99th-percentile magnitude when not given), value is constant, so
    zero flow renders white.

    Returns
    -------
    ndarray
        uint8, shape (height, width, 3).
    """
    mag = flow.magnitude()
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99))
    if max_magnitude <= 0:
        max_magnitude = 1.0
    hue = (np.arctan2(flow.v, flow.u) / (2.0 * np.pi)) % 1.0
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)

    # Vectorized HSV -> RGB with V = 1.
    sector = hue * 6.0
    i = np.floor(sector).astype(int) % 6
    f = sector - np.floor(sector)
    p = 1.0 - sat
    q = 1.0 - sat * f
    t = 1.0 - sat * (1.0 - f)
    ones = np.ones_like(sat)
    channels = [
        (ones, t, p),
        (q, ones, p),
        (p, ones, t),
        (p, q, ones),
        (t, p, ones),
        (ones, p, q),
    ]
    rgb = np.zeros(sat.shape + (3,), dtype=np.float64)
    for idx, (r, g, b) in enumerate(channels):
        mask = i == idx
        rgb[mask, 0] = r[mask]
        rgb[mask, 1] = g[mask]
        rgb[mask, 2] = b[mask]
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def save_flow_image(flow: FlowField, path, max_magnitude: float | None = None) -> None:
    """Render a flow field and write it as PNG."""
    Image.fromarray(flow_to_color(flow, max_magnitude), mode="RGB").save(path, format="PNG")
