"""Layer-ordered visualization: encode per-scale saliency as color.

Each pixel owns a vector of normalized per-scale scores.  The hue says
*where* in the network the activity sits (magenta for the shallowest
scale sweeping down to red for the deepest), saturation says how
concentrated that activity is in a single scale, and value carries the
strongest score.  A pixel no scale cares about stays black.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .saliency import ScaleStack
from .tensor_io import ImageBuffer, grayscale

#: Hue (degrees) assigned to the shallowest scale; deeper scales sweep
#: linearly down to 0.
HUE_SPAN = 300.0

#: Total per-pixel score below which the pixel is rendered black.
ZERO_MASS = 1e-12


def layer_position(k: int, r: int) -> float:
    """Position of scale ``k`` of ``r`` on the hue axis, 1 down to 0."""
    if r < 2:
        raise UsageError("layer positions need at least two scales")
    if not 1 <= k <= r:
        raise UsageError(f"scale index {k} outside 1..{r}")
    return 1.0 - (k - 1) / (r - 1)


def _as_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise UsageError("per-pixel score vector must be 1-D with at least two entries")
    if np.any(s < 0.0):
        raise UsageError("per-pixel scores must be non-negative")
    return s


def hue(scores) -> float:
    """Score-weighted average layer position, scaled to degrees.

    All mass in the shallowest scale gives :data:`HUE_SPAN`; all mass in
    the deepest gives 0.  A vector with (near) zero total mass maps to
    hue 0, matching the black pixel it will render as.
    """
    s = _as_scores(scores)
    total = s.sum()
    if total < ZERO_MASS:
        return 0.0
    r = s.size
    positions = np.array([layer_position(k, r) for k in range(1, r + 1)])
    return HUE_SPAN * float((s * positions).sum() / total)


def saturation(scores) -> float:
    """How far the vector is from spreading its mass evenly.

    With ``nu = 1/r``, computes ``1 - (sum(s) - nu) / (r * max(s) * (1 - nu))``
    clamped to ``[0, 1]``: a one-hot vector is fully saturated, an even
    spread is fully washed out.
    """
    s = _as_scores(scores)
    total = s.sum()
    if total < ZERO_MASS:
        return 0.0
    r = s.size
    nu = 1.0 / r
    raw = 1.0 - (total - nu) / (r * s.max() * (1.0 - nu))
    return float(np.clip(raw, 0.0, 1.0))


def value(scores) -> float:
    """Brightness of the pixel: the strongest per-scale score."""
    s = _as_scores(scores)
    if s.sum() < ZERO_MASS:
        return 0.0
    return float(s.max())


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    """Standard hue-sector HSV to RGB conversion, all channels in [0, 1]."""
    h = float(h) % 360.0
    c = v * s
    x = c * (1.0 - abs((h / 60.0) % 2.0 - 1.0))
    m = v - c
    sector = int(h // 60.0) % 6
    rgb = [(c, x, 0.0), (x, c, 0.0), (0.0, c, x), (0.0, x, c), (x, 0.0, c), (c, 0.0, x)][sector]
    return (rgb[0] + m, rgb[1] + m, rgb[2] + m)


def lovi_render(stack: ScaleStack) -> ImageBuffer:
    """Render a scale stack into an RGB image.

    Needs at least two scales (the hue axis is undefined for one).
    Stack weights play no role here; the maps speak for themselves.
    """
    r = len(stack.maps)
    if r < 2:
        raise UsageError("layer-ordered rendering needs at least two scales")
    s = np.stack([m.values for m in stack.maps])
    total = s.sum(axis=0)
    peak = s.max(axis=0)
    lit = total >= ZERO_MASS

    positions = np.array([layer_position(k, r) for k in range(1, r + 1)])
    safe_total = np.where(lit, total, 1.0)
    safe_peak = np.where(lit & (peak > 0.0), peak, 1.0)
    hue_deg = HUE_SPAN * np.tensordot(positions, s, axes=1) / safe_total
    nu = 1.0 / r
    sat = np.clip(1.0 - (total - nu) / (r * safe_peak * (1.0 - nu)), 0.0, 1.0)
    val = peak

    hue_deg = np.where(lit, hue_deg, 0.0)
    sat = np.where(lit, sat, 0.0)
    val = np.where(lit, val, 0.0)

    # Vectorized hue-sector conversion.
    h = np.mod(hue_deg, 360.0)
    c = val * sat
    x = c * (1.0 - np.abs(np.mod(h / 60.0, 2.0) - 1.0))
    m = val - c
    sector = (h // 60.0).astype(np.intp) % 6
    zero = np.zeros_like(c)
    r_by_sector = np.choose(sector, [c, x, zero, zero, x, c])
    g_by_sector = np.choose(sector, [x, c, c, x, zero, zero])
    b_by_sector = np.choose(sector, [zero, zero, x, c, c, x])
    rgb = np.stack([r_by_sector + m, g_by_sector + m, b_by_sector + m], axis=-1)
    return ImageBuffer(values=np.clip(rgb, 0.0, 1.0))


def lovi_overlay(rendering: ImageBuffer, image: ImageBuffer, alpha: float = 0.25) -> ImageBuffer:
    """Blend a rendering over the grayscale input, image weight ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if (rendering.height, rendering.width) != (image.height, image.width):
        raise UsageError(
            f"rendering {rendering.height}x{rendering.width} does not match "
            f"image {image.height}x{image.width}"
        )
    gray = grayscale(image).values
    out = gray * alpha + rendering.values * (1.0 - alpha)
    return ImageBuffer(values=np.clip(out, 0.0, 1.0))