"""Saliency maps from captured CNN activations.

The pipeline condenses each activation tensor into a per-scale map
with a column statistic, normalizes it through a CDF, upsamples all
scales to a common grid, and blends them with per-scale weights.  On
top of that sit a layer-ordered color rendering, keep/remove mask
protocols with fidelity scores, and an operation-count report.
"""

from .errors import FormatError, SmoeError, UsageError, ValidationError
from .evalkit import (
    BinaryMask,
    FillMode,
    FlopsReport,
    MaskMode,
    MaskSpec,
    ScoreVectors,
    apply_image_mask,
    apply_tensor_mask,
    difference_score,
    flops_report,
    information_score,
    load_scores_csv,
    make_mask,
)
from .lovi import hsv_to_rgb, hue, layer_position, lovi_overlay, lovi_render, saturation, value
from .saliency import (
    PRIOR_WEIGHTS,
    SaliencyMap,
    ScaleStack,
    build_scale_stack,
    combine,
    compute_scale_map,
    fuse_cam,
    map_to_image,
    normalize_cdf,
    render_overlay,
    resolve_weights,
    upsample_bilinear,
)
from .stats import (
    DEGENERATE_ENTROPY,
    StatisticKind,
    TruncatedNormalParams,
    column_statistic,
    gamma_scale_oracle,
    lognormal_stats,
    normal_stats,
    shannon_entropy,
    smoe_scale,
    truncnormal_stats,
)
from .tensor_io import (
    DEFAULT_EPSILON,
    ActivationColumn,
    ActivationTensor,
    ImageBuffer,
    ScaleEntry,
    ScaleManifest,
    Stage,
    column_view,
    grayscale,
    load_image,
    load_manifest,
    load_tensor,
    save_image,
    save_manifest,
    save_tensor,
)

__version__ = "0.1.0"
