"""Saliency map construction: per-scale statistics, normalization,
upsampling, and weighted combination.

The map route is vectorized over all spatial locations at once but must
agree, pixel for pixel within 1e-9, with the scalar column statistics
in :mod:`smoe.stats`.  Normalization happens at each scale's native
resolution; upsampling to the common grid comes after.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import UsageError, ValidationError
from .stats import DEEP_TAIL_ALPHA, DEGENERATE_ENTROPY, SIGMA_FLOOR, StatisticKind
from .tensor_io import DEFAULT_EPSILON, ActivationTensor, ImageBuffer, grayscale

#: Per-scale combination weights learned for five-scale backbones,
#: shallowest first.
PRIOR_WEIGHTS = (0.18, 0.15, 0.37, 0.4, 0.72)

_INV_SQRT_2PI = 1.0 / float(np.sqrt(2.0 * np.pi))
_LN2 = float(np.log(2.0))


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """A 2-D field of per-location scores.

    ``normalized`` distinguishes raw statistic values from maps already
    mapped through the CDF (or built from such maps), whose values are
    guaranteed to lie in ``[0, 1]``.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size < 1:
            raise ValidationError(f"saliency map must be non-empty 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("saliency map contains non-finite values")
        if self.normalized and not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValidationError("normalized map values must lie in [0, 1]")
        view = arr.view()
        view.setflags(write=False)
        object.__setattr__(self, "values", view)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class ScaleStack:
    """Normalized per-scale maps on a common grid plus their weights."""

    maps: tuple[SaliencyMap, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        maps = tuple(self.maps)
        if not maps:
            raise UsageError("scale stack needs at least one map")
        first = maps[0]
        for k, m in enumerate(maps, start=1):
            if not m.normalized:
                raise UsageError(f"stack map {k} is not normalized")
            if (m.height, m.width) != (first.height, first.width):
                raise UsageError(
                    f"stack map {k} is {m.height}x{m.width}, "
                    f"expected {first.height}x{first.width}"
                )
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(maps),):
            raise UsageError(f"need {len(maps)} weights, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise UsageError("weights must be finite and non-negative")
        if w.sum() <= 0.0:
            raise UsageError("weights must not all be zero")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "weights", w)


def resolve_weights(scheme: str | Sequence[float] | None, count: int) -> np.ndarray:
    """Turn a weight scheme name or explicit vector into ``count`` weights.

    ``None`` selects the default: the learned prior when exactly five
    scales are present, uniform weights otherwise.
    """
    if count < 1:
        raise UsageError("weight resolution needs at least one scale")
    if scheme is None:
        scheme = "prior" if count == len(PRIOR_WEIGHTS) else "uniform"
    if isinstance(scheme, str):
        if scheme == "uniform":
            return np.ones(count)
        if scheme == "ramp":
            return np.arange(1, count + 1, dtype=np.float64)
        if scheme == "prior":
            if count != len(PRIOR_WEIGHTS):
                raise UsageError(
                    f"prior weights are defined for {len(PRIOR_WEIGHTS)} scales, got {count}"
                )
            return np.array(PRIOR_WEIGHTS)
        raise UsageError(f"unknown weight scheme {scheme!r}")
    w = np.asarray(scheme, dtype=np.float64)
    if w.shape != (count,):
        raise UsageError(f"custom weights must have length {count}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0) or w.sum() <= 0.0:
        raise UsageError("custom weights must be non-negative, finite, with positive sum")
    return w


def _map_smoe(values: np.ndarray, eps: float) -> np.ndarray:
    xs = values.astype(np.float64) + eps
    mu = xs.mean(axis=0)
    return mu * (np.log2(mu) - np.log2(xs).mean(axis=0))


def _map_shannon(values: np.ndarray, eps: float) -> np.ndarray:
    xs = values.astype(np.float64) + eps
    p = xs / xs.sum(axis=0)
    return -(p * np.log2(p)).sum(axis=0)


def _map_lognormal(values: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    logs = np.log2(values.astype(np.float64) + eps)
    m = logs.mean(axis=0)
    s = logs.std(axis=0)
    mean = 2.0 ** (m + s * s * _LN2 / 2.0)
    with np.errstate(divide="ignore"):
        raw = m + 0.5 * np.log2(2.0 * np.pi * np.e * s * s * _LN2 * _LN2)
    entropy = np.where(s > 0.0, raw, DEGENERATE_ENTROPY)
    return mean, entropy


def _map_truncnormal(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Mirrors stats.truncnormal_stats, including its degenerate and
    # deep-tail branches, just over all columns at once.
    xs = values.astype(np.float64)
    mu = xs.mean(axis=0)
    sigma = xs.std(axis=0)
    degenerate = sigma < SIGMA_FLOOR
    safe_sigma = np.where(degenerate, 1.0, sigma)
    alpha = -mu / safe_sigma
    deep = (alpha >= DEEP_TAIL_ALPHA) & ~degenerate
    safe_alpha = np.where(alpha >= DEEP_TAIL_ALPHA, DEEP_TAIL_ALPHA, alpha)
    z = ndtr(-safe_alpha)
    lam = _INV_SQRT_2PI * np.exp(-0.5 * safe_alpha * safe_alpha) / z
    mean = mu + safe_sigma * lam
    var = safe_sigma * safe_sigma * (1.0 + safe_alpha * lam - lam * lam)
    std = np.sqrt(np.maximum(var, 0.0))
    raw_ent = np.log(np.sqrt(2.0 * np.pi * np.e) * safe_sigma * z) + safe_alpha * lam / 2.0
    tail = safe_sigma / np.where(deep, alpha, 1.0)
    with np.errstate(divide="ignore"):
        tail_ent = 1.0 + np.log(tail)
    mean = np.where(deep, tail, np.where(degenerate, np.maximum(mu, 0.0), mean))
    std = np.where(deep, tail, np.where(degenerate, 0.0, std))
    entropy = np.where(deep, tail_ent, np.where(degenerate, DEGENERATE_ENTROPY, raw_ent))
    return mean, std, entropy


def compute_scale_map(
    tensor: ActivationTensor,
    kind: StatisticKind | str,
    epsilon: float = DEFAULT_EPSILON,
) -> SaliencyMap:
    """Condense an activation tensor into one unnormalized map.

    The tensor's capture stage must match what the statistic needs
    (signed pre-rectifier values for the truncated-normal family,
    rectified output for the rest).
    """
    kind = StatisticKind(kind)
    if tensor.stage is not kind.required_stage:
        raise UsageError(
            f"{kind.value} needs a {kind.required_stage.value} tensor, "
            f"got {tensor.stage.value}"
        )
    v = tensor.values
    if kind is StatisticKind.SMOE_SCALE:
        out = _map_smoe(v, epsilon)
    elif kind is StatisticKind.NORMAL_MEAN:
        out = v.astype(np.float64).mean(axis=0)
    elif kind is StatisticKind.NORMAL_STD:
        out = v.astype(np.float64).std(axis=0)
    elif kind is StatisticKind.SHANNON_ENTROPY:
        out = _map_shannon(v, epsilon)
    elif kind is StatisticKind.LOGNORMAL_MEAN:
        out = _map_lognormal(v, epsilon)[0]
    elif kind is StatisticKind.LOGNORMAL_ENTROPY:
        out = _map_lognormal(v, epsilon)[1]
    else:
        mean, std, entropy = _map_truncnormal(v)
        out = {
            StatisticKind.TRUNCNORMAL_MEAN: mean,
            StatisticKind.TRUNCNORMAL_STD: std,
            StatisticKind.TRUNCNORMAL_ENTROPY: entropy,
        }[kind]
    return SaliencyMap(values=out, normalized=False)


def normalize_cdf(saliency: SaliencyMap) -> SaliencyMap:
    """Map values through the CDF of their own fitted normal.

    Each pixel becomes ``Phi((v - mean) / std)`` using the map's mean
    and population standard deviation, which squashes the field into
    ``(0, 1)`` while preserving rank order.  A map with no spread comes
    back as constant 0.5.
    """
    if saliency.normalized:
        raise UsageError("map is already normalized")
    v = saliency.values
    sigma = float(v.std())
    if sigma < SIGMA_FLOOR:
        out = np.full(v.shape, 0.5)
    else:
        out = ndtr((v - v.mean()) / sigma)
    return SaliencyMap(values=out, normalized=True)


def upsample_bilinear(saliency: SaliencyMap, out_height: int, out_width: int) -> SaliencyMap:
    """Resize a map up to ``(out_height, out_width)`` bilinearly.

    Sample positions use half-pixel centers with edge clamping, and the
    target must be at least as large as the source on both axes.  An
    identity resize returns the values bit for bit.
    """
    h, w = saliency.values.shape
    if out_height < h or out_width < w:
        raise UsageError(
            f"target {out_height}x{out_width} is smaller than source {h}x{w}; "
            "only upsampling is supported"
        )
    if (out_height, out_width) == (h, w):
        return SaliencyMap(values=saliency.values.copy(), normalized=saliency.normalized)
    v = saliency.values
    sy = np.clip((np.arange(out_height) + 0.5) * (h / out_height) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_width) + 0.5) * (w / out_width) - 0.5, 0.0, w - 1.0)
    i0 = np.floor(sy).astype(np.intp)
    j0 = np.floor(sx).astype(np.intp)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fy = (sy - i0)[:, np.newaxis]
    fx = (sx - j0)[np.newaxis, :]
    top = v[np.ix_(i0, j0)] * (1.0 - fx) + v[np.ix_(i0, j1)] * fx
    bottom = v[np.ix_(i1, j0)] * (1.0 - fx) + v[np.ix_(i1, j1)] * fx
    out = top * (1.0 - fy) + bottom * fy
    if saliency.normalized:
        out = np.clip(out, 0.0, 1.0)
    return SaliencyMap(values=out, normalized=saliency.normalized)


def combine(stack: ScaleStack) -> SaliencyMap:
    """Weighted average of the stacked maps.

    Scaling all weights by a positive constant does not change the
    result; only their proportions matter.
    """
    arr = np.stack([m.values for m in stack.maps])
    w = stack.weights
    out = np.tensordot(w, arr, axes=1) / w.sum()
    return SaliencyMap(values=np.clip(out, 0.0, 1.0), normalized=True)


def fuse_cam(combined: SaliencyMap, cam: SaliencyMap) -> SaliencyMap:
    """Sharpen a combined map with a class activation map.

    The two normalized maps are multiplied pixelwise and the product is
    rescaled to span ``[0, 1]``; a constant product is left as is.
    """
    if not (combined.normalized and cam.normalized):
        raise UsageError("fusion needs two normalized maps")
    if combined.values.shape != cam.values.shape:
        raise UsageError(
            f"map {combined.values.shape} and cam {cam.values.shape} differ in shape"
        )
    prod = combined.values * cam.values
    lo = float(prod.min())
    hi = float(prod.max())
    if hi > lo:
        prod = (prod - lo) / (hi - lo)
    return SaliencyMap(values=prod, normalized=True)


def render_overlay(saliency: SaliencyMap, image: ImageBuffer, alpha: float = 0.25) -> ImageBuffer:
    """Blend a normalized map over the grayscale input image.

    ``alpha`` is the image weight: the output is
    ``gray * alpha + map * (1 - alpha)``.
    """
    if not saliency.normalized:
        raise UsageError("overlay needs a normalized map")
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if (saliency.height, saliency.width) != (image.height, image.width):
        raise UsageError(
            f"map {saliency.height}x{saliency.width} does not match "
            f"image {image.height}x{image.width}"
        )
    gray = grayscale(image).values[:, :, 0]
    out = gray * alpha + saliency.values * (1.0 - alpha)
    return ImageBuffer(values=np.clip(out, 0.0, 1.0)[:, :, np.newaxis])


def map_to_image(saliency: SaliencyMap) -> ImageBuffer:
    """View a normalized map as a single-channel image."""
    if not saliency.normalized:
        raise UsageError("only normalized maps can be rendered directly")
    return ImageBuffer(values=saliency.values[:, :, np.newaxis])


def build_scale_stack(
    tensors: Sequence[ActivationTensor],
    kind: StatisticKind | str,
    target_hw: tuple[int, int] | None = None,
    weights: str | Sequence[float] | None = None,
) -> ScaleStack:
    """Run statistic, normalization, and upsampling for every scale.

    Each tensor is condensed and normalized at its native resolution,
    then upsampled to ``target_hw`` (the first scale's grid when not
    given).  Weights follow :func:`resolve_weights`.
    """
    if not tensors:
        raise UsageError("need at least one activation tensor")
    if target_hw is None:
        target_hw = (tensors[0].height, tensors[0].width)
    maps = [
        upsample_bilinear(normalize_cdf(compute_scale_map(t, kind)), *target_hw)
        for t in tensors
    ]
    return ScaleStack(maps=tuple(maps), weights=resolve_weights(weights, len(maps)))
