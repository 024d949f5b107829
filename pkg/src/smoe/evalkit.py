"""Fidelity evaluation: keep/remove masks, accuracy-curve scores, and
the operation-count report.

The two mask protocols are exact complements of one another: keeping
the top fraction selects precisely the pixels that removing the top
fraction drops.  Because selection only looks at rank order, any
strictly increasing transform of a map yields the same masks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError, ValidationError
from .saliency import SaliencyMap
from .tensor_io import ActivationTensor, ImageBuffer


class MaskMode(str, Enum):
    """Which side of the saliency ranking a mask selects."""

    KAR_KEEP = "kar_keep"
    ROAR_REMOVE = "roar_remove"


class FillMode(str, Enum):
    """What dropped image pixels are replaced with."""

    ZERO = "zero"
    CHANNEL_MEAN = "per_channel_mean"


@dataclass(frozen=True)
class MaskSpec:
    mode: MaskMode
    fraction: float
    fill: FillMode = FillMode.ZERO

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", MaskMode(self.mode))
        object.__setattr__(self, "fill", FillMode(self.fill))
        if not (np.isfinite(self.fraction) and 0.0 <= self.fraction <= 1.0):
            raise UsageError(f"fraction must lie in [0, 1], got {self.fraction}")


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean keep-grid over an image: True pixels survive."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or arr.dtype != np.bool_:
            raise ValidationError(f"mask must be 2-D boolean, got {arr.dtype} {arr.shape}")
        view = arr.view()
        view.setflags(write=False)
        object.__setattr__(self, "bits", view)

    @property
    def kept(self) -> int:
        return int(self.bits.sum())


def make_mask(saliency: SaliencyMap, spec: MaskSpec) -> BinaryMask:
    """Select the top ``round(fraction * pixels)`` locations of a map.

    Ties are broken by ascending row-major index, so the result is
    fully deterministic.  ``kar_keep`` marks the selected pixels True;
    ``roar_remove`` marks them False and keeps the rest.
    """
    flat = saliency.values.ravel()
    count = int(round(spec.fraction * flat.size))
    order = np.argsort(-flat, kind="stable")
    top = order[:count]
    if spec.mode is MaskMode.KAR_KEEP:
        bits = np.zeros(flat.size, dtype=bool)
        bits[top] = True
    else:
        bits = np.ones(flat.size, dtype=bool)
        bits[top] = False
    return BinaryMask(bits=bits.reshape(saliency.values.shape))


def apply_image_mask(
    image: ImageBuffer, mask: BinaryMask, fill: FillMode = FillMode.ZERO
) -> ImageBuffer:
    """Blank out the dropped pixels of an image.

    ``per_channel_mean`` fills with each channel's mean over the whole
    original image; ``zero`` fills with black.
    """
    if mask.bits.shape != (image.height, image.width):
        raise UsageError(
            f"mask {mask.bits.shape} does not match image "
            f"{image.height}x{image.width}"
        )
    fill = FillMode(fill)
    out = image.values.copy()
    if fill is FillMode.ZERO:
        out[~mask.bits] = 0.0
    else:
        out[~mask.bits] = image.values.mean(axis=(0, 1))
    return ImageBuffer(values=out)


def apply_tensor_mask(tensor: ActivationTensor, mask: BinaryMask) -> ActivationTensor:
    """Zero every channel of the dropped spatial locations."""
    if mask.bits.shape != (tensor.height, tensor.width):
        raise UsageError(
            f"mask {mask.bits.shape} does not match tensor grid "
            f"{tensor.height}x{tensor.width}"
        )
    out = tensor.values.copy()
    out[:, ~mask.bits] = 0.0
    return ActivationTensor(values=out, stage=tensor.stage)


@dataclass(frozen=True, eq=False)
class ScoreVectors:
    """Per-layer accuracies for the two mask protocols.

    ``kappa``/``rho`` are the method's accuracies under keep and remove;
    ``z_keep``/``z_remove`` are the random-mask baselines under the same
    two protocols.  All entries are fractions in ``[0, 1]``.
    """

    kappa: np.ndarray
    rho: np.ndarray
    z_keep: np.ndarray
    z_remove: np.ndarray

    def __post_init__(self) -> None:
        arrays = {}
        length = None
        for name in ("kappa", "rho", "z_keep", "z_remove"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if length is None:
                length = arr.size
            elif arr.size != length:
                raise UsageError(
                    f"score vectors must share one length; {name} has {arr.size}, "
                    f"expected {length}"
                )
            if not np.all(np.isfinite(arr)) or np.any((arr < 0.0) | (arr > 1.0)):
                raise ValidationError(f"{name} entries must be fractions in [0, 1]")
            arrays[name] = arr
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.kappa.size)


def difference_score(vectors: ScoreVectors) -> float:
    """Accuracy gaps versus the random baseline, summed over layers.

    Adds how far removal drags accuracy below its baseline and how far
    keeping stays above its baseline; identical curves score 0.
    """
    return float(
        np.sum(vectors.z_remove - vectors.rho) + np.sum(vectors.kappa - vectors.z_keep)
    )


def information_score(vectors: ScoreVectors) -> float:
    """Relative-entropy form of the same comparison (natural log).

    Every entry must be strictly positive for the log ratios to exist.
    """
    arrays = (vectors.kappa, vectors.rho, vectors.z_keep, vectors.z_remove)
    if any(np.any(a <= 0.0) for a in arrays):
        raise UsageError("information score needs strictly positive accuracies")
    roar_part = -np.sum(vectors.rho * np.log(vectors.rho / vectors.z_remove))
    kar_part = -np.sum(vectors.z_keep * np.log(vectors.z_keep / vectors.kappa))
    return float(roar_part + kar_part)


def load_scores_csv(path) -> ScoreVectors:
    """Read per-layer accuracies from CSV.

    Requires columns ``kappa`` and ``rho`` plus either a single ``z``
    baseline (used for both protocols) or the pair ``z_kar``/``z_roar``.
    Values may be fractions or percents; percents are detected by any
    value exceeding 1.5 and divided by 100.
    """
    path = Path(path)
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        fields = set(reader.fieldnames or ())
        if not {"kappa", "rho"} <= fields:
            raise FormatError(f"{path}: need columns kappa and rho, found {sorted(fields)}")
        if {"z_kar", "z_roar"} <= fields:
            keep_col, remove_col = "z_kar", "z_roar"
        elif "z" in fields:
            keep_col = remove_col = "z"
        else:
            raise FormatError(f"{path}: need column z or columns z_kar,z_roar")
        rows = {"kappa": [], "rho": [], "z_keep": [], "z_remove": []}
        for rownum, record in enumerate(reader, start=2):
            for name, col in (
                ("kappa", "kappa"),
                ("rho", "rho"),
                ("z_keep", keep_col),
                ("z_remove", remove_col),
            ):
                raw = record.get(col)
                try:
                    rows[name].append(float(raw))
                except (TypeError, ValueError):
                    raise FormatError(
                        f"{path}: row {rownum}: bad value {raw!r} in column {col}"
                    ) from None
    if not rows["kappa"]:
        raise FormatError(f"{path}: no data rows")
    arrays = {name: np.array(vals) for name, vals in rows.items()}
    if any(np.any(arr > 1.5) for arr in arrays.values()):
        arrays = {name: arr / 100.0 for name, arr in arrays.items()}
    return ScoreVectors(**arrays)


#: Spatial shapes of the five tapped scales of a 224x224 ResNet-50 pass.
RESNET50_SCALE_DIMS = (
    (64, 112, 112),
    (256, 56, 56),
    (512, 28, 28),
    (1024, 14, 14),
    (2048, 7, 7),
)

# Calibrated combination costs (normalize + upsample + weighted sum)
# for the reference configuration above.  They depend on the target
# grid and interpolation details, so they are only reported when the
# dims match exactly.
_RESNET50_COMBINE_OPS = (225792, 338688, 338688, 338688, 338688)

#: Operations in one full ResNet-50 forward pass, for overhead ratios.
RESNET50_FORWARD_FLOPS = 3.8e9


@dataclass(frozen=True)
class LayerCost:
    channels: int
    height: int
    width: int
    statistic_ops: int
    normalize_ops: int
    combine_ops: int | None


@dataclass(frozen=True)
class FlopsReport:
    layers: tuple[LayerCost, ...]

    @property
    def statistic_total(self) -> int:
        return sum(layer.statistic_ops for layer in self.layers)

    @property
    def normalize_total(self) -> int:
        return sum(layer.normalize_ops for layer in self.layers)

    @property
    def combine_total(self) -> int | None:
        if any(layer.combine_ops is None for layer in self.layers):
            return None
        return sum(layer.combine_ops for layer in self.layers)

    @property
    def grand_total(self) -> int | None:
        combine = self.combine_total
        if combine is None:
            return None
        return self.statistic_total + self.normalize_total + combine

    def overhead_percent(self, baseline: float = RESNET50_FORWARD_FLOPS) -> float | None:
        total = self.grand_total
        if total is None:
            return None
        return 100.0 * total / baseline


def flops_report(dims) -> FlopsReport:
    """Per-scale operation counts for the saliency pipeline.

    The statistic costs ``H*W*(4r + 1)`` operations per scale and the
    CDF normalization ``12*H*W``.  Combination costs are calibrated
    constants, available only for :data:`RESNET50_SCALE_DIMS`.
    """
    dims = tuple(tuple(int(d) for d in row) for row in dims)
    if not dims:
        raise UsageError("operation counts need at least one scale")
    for row in dims:
        if len(row) != 3 or min(row) < 1:
            raise UsageError(f"each scale needs positive (channels, height, width), got {row}")
    reference = dims == RESNET50_SCALE_DIMS
    layers = []
    for pos, (channels, height, width) in enumerate(dims):
        layers.append(
            LayerCost(
                channels=channels,
                height=height,
                width=width,
                statistic_ops=height * width * (4 * channels + 1),
                normalize_ops=12 * height * width,
                combine_ops=_RESNET50_COMBINE_OPS[pos] if reference else None,
            )
        )
    return FlopsReport(layers=tuple(layers))


def format_flops(report: FlopsReport) -> str:
    """Human-readable table with totals and the overhead ratio."""
    lines = [f"{'scale':>5}  {'dims':>14}  {'statistic':>12}  {'normalize':>10}  {'combine':>10}"]
    for pos, layer in enumerate(report.layers, start=1):
        dims = f"{layer.channels}x{layer.height}x{layer.width}"
        combine = f"{layer.combine_ops}" if layer.combine_ops is not None else "n/a"
        lines.append(
            f"{pos:>5}  {dims:>14}  {layer.statistic_ops:>12}  "
            f"{layer.normalize_ops:>10}  {combine:>10}"
        )
    lines.append(
        f"totals  statistic {report.statistic_total}  normalize {report.normalize_total}"
    )
    if report.grand_total is not None:
        lines.append(f"combine {report.combine_total}  grand total {report.grand_total}")
        lines.append(
            f"overhead vs {RESNET50_FORWARD_FLOPS:.1e}-op forward pass: "
            f"{report.overhead_percent():.5f}%"
        )
    else:
        lines.append("combine n/a (calibrated for the reference five-scale configuration)")
    return "\n".join(lines)


def flops_json(report: FlopsReport) -> str:
    """The same report as a JSON document."""
    doc = {
        "layers": [
            {
                "channels": layer.channels,
                "height": layer.height,
                "width": layer.width,
                "statistic_ops": layer.statistic_ops,
                "normalize_ops": layer.normalize_ops,
                "combine_ops": layer.combine_ops,
            }
            for layer in report.layers
        ],
        "statistic_total": report.statistic_total,
        "normalize_total": report.normalize_total,
        "combine_total": report.combine_total,
        "grand_total": report.grand_total,
        "overhead_percent": report.overhead_percent(),
    }
    return json.dumps(doc, indent=2)
