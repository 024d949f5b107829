"""Capture per-scale activation snapshots from torchvision CNNs.

One forward pass over one image, tapping the final tensor of each
spatial scale both before and after its rectifier.  Snapshots land on
disk as NPY v1.0 float32 files next to a manifest JSON in exactly the
layout the ``smoe`` command-line tools consume.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import UsageError, ValidationError

log = logging.getLogger("smoe_exporter")

#: Standard pretrained-zoo preprocessing, recorded in the manifest.
RESIZE_SHORTER = 256
CROP_SIZE = 224
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class TapPoint:
    """One capture site inside a model.

    ``capture`` is ``"relu"`` when the named module is the rectifier
    itself (pre = its input, post = its output) or ``"output"`` when the
    module emits the pre-activation tensor and the rectifier is applied
    functionally afterwards (post is then computed here).
    """

    module: str
    capture: str = "relu"

    def __post_init__(self) -> None:
        if self.capture not in ("relu", "output"):
            raise UsageError(f"unknown capture kind {self.capture!r}")


# Default taps: the last rectified tensor of each spatial scale.  For
# residual blocks the rectifier module is shared within a block, so the
# recorder keeps the final invocation, which is the one after the
# residual sum.  DenseNet's last rectifier is functional, hence the
# "output" tap on its final batch norm.
_MODEL_TABLE = {
    "resnet50": {
        "factory": "resnet50",
        "taps": (
            TapPoint("relu"),
            TapPoint("layer1.2.relu"),
            TapPoint("layer2.3.relu"),
            TapPoint("layer3.5.relu"),
            TapPoint("layer4.2.relu"),
        ),
        "shapes": ((64, 112, 112), (256, 56, 56), (512, 28, 28),
                   (1024, 14, 14), (2048, 7, 7)),
    },
    "vgg": {
        "factory": "vgg16",
        "taps": (
            TapPoint("features.3"),
            TapPoint("features.8"),
            TapPoint("features.15"),
            TapPoint("features.22"),
            TapPoint("features.29"),
        ),
        "shapes": ((64, 224, 224), (128, 112, 112), (256, 56, 56),
                   (512, 28, 28), (512, 14, 14)),
    },
    "densenet": {
        "factory": "densenet121",
        "taps": (
            TapPoint("features.relu0"),
            TapPoint("features.transition1.relu"),
            TapPoint("features.transition2.relu"),
            TapPoint("features.transition3.relu"),
            TapPoint("features.norm5", capture="output"),
        ),
        "shapes": ((64, 112, 112), (256, 56, 56), (512, 28, 28),
                   (1024, 14, 14), (1024, 7, 7)),
    },
}


@dataclass(frozen=True)
class CaptureSpec:
    """What to capture: model, image, destination, and tap points.

    ``taps=None`` selects the model's default scale-boundary taps, for
    which captured shapes are checked against the documented
    architecture.  Custom taps skip the exact-shape check but must still
    sit at scale boundaries: each successive tap halves spatial dims.
    """

    model: str
    image_path: Path
    out_dir: Path
    taps: tuple[TapPoint, ...] | None = None
    weights: str = "pretrained"

    def __post_init__(self) -> None:
        if self.model not in _MODEL_TABLE:
            known = ", ".join(sorted(_MODEL_TABLE))
            raise UsageError(f"unknown model {self.model!r}; expected one of: {known}")
        if self.weights not in ("pretrained", "random"):
            raise UsageError(f"weights must be 'pretrained' or 'random', got {self.weights!r}")
        if self.taps is not None and len(self.taps) < 1:
            raise UsageError("at least one tap point is required")
        object.__setattr__(self, "image_path", Path(self.image_path))
        object.__setattr__(self, "out_dir", Path(self.out_dir))


@dataclass(frozen=True)
class ExportResult:
    """Paths written by one export run, shallowest scale first."""

    manifest_path: Path
    input_path: Path
    snapshot_paths: tuple[tuple[Path, Path], ...]
    shapes: tuple[tuple[int, int, int], ...]


def build_model(name: str, weights: str) -> torch.nn.Module:
    """Instantiate a torchvision model in eval mode.

    Falls back to random initialization when pretrained weights cannot
    be fetched, with a warning: the capture plumbing stays exercisable
    on machines without zoo access, though the saliency content is then
    meaningless.
    """
    import torchvision.models as zoo

    factory = getattr(zoo, _MODEL_TABLE[name]["factory"])
    if weights == "pretrained":
        try:
            model = factory(weights="DEFAULT")
        except Exception as exc:
            log.warning("pretrained weights unavailable (%s); falling back to random init", exc)
            model = factory(weights=None)
    else:
        model = factory(weights=None)
    return model.eval()


def preprocess_image(path: Path) -> tuple[torch.Tensor, Image.Image]:
    """Resize, center-crop, and normalize one image.

    Returns the normalized (1, 3, H, W) input batch and the un-normalized
    cropped PIL image, which is saved beside the snapshots so downstream
    overlays line up with what the network actually saw.
    """
    from torchvision.transforms import functional as tf

    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
    except FileNotFoundError:
        raise
    except UnidentifiedImageError:
        raise UsageError(f"{path}: not a decodable image") from None
    resized = tf.resize(rgb, RESIZE_SHORTER)
    crop = tf.center_crop(resized, CROP_SIZE)
    batch = tf.normalize(tf.to_tensor(crop), NORMALIZE_MEAN, NORMALIZE_STD).unsqueeze(0)
    return batch, crop


def _capture_taps(
    model: torch.nn.Module, taps: tuple[TapPoint, ...], batch: torch.Tensor
) -> list[tuple[np.ndarray, np.ndarray]]:
    pre: dict[int, torch.Tensor] = {}
    post: dict[int, torch.Tensor] = {}
    handles = []

    def attach(slot: int, tap: TapPoint) -> None:
        try:
            module = model.get_submodule(tap.module)
        except AttributeError:
            raise UsageError(f"model has no submodule {tap.module!r}") from None
        if tap.capture == "relu":
            # Zoo rectifiers run in place, so the input must be cloned
            # before the module mutates it.
            def grab_pre(_mod, args, slot=slot):
                pre[slot] = args[0].detach().clone()

            def grab_post(_mod, _args, output, slot=slot):
                post[slot] = output.detach().clone()

            handles.append(module.register_forward_pre_hook(grab_pre))
            handles.append(module.register_forward_hook(grab_post))
        else:
            def grab_output(_mod, _args, output, slot=slot):
                raw = output.detach().clone()
                pre[slot] = raw
                post[slot] = torch.relu(raw)

            handles.append(module.register_forward_hook(grab_output))

    for slot, tap in enumerate(taps):
        attach(slot, tap)
    try:
        with torch.no_grad():
            model(batch)
    finally:
        for handle in handles:
            handle.remove()

    pairs = []
    for slot, tap in enumerate(taps):
        if slot not in post:
            raise ValidationError(f"tap {tap.module!r} never fired during the forward pass")
        pairs.append((
            pre[slot][0].numpy().astype(np.float32, copy=False),
            post[slot][0].numpy().astype(np.float32, copy=False),
        ))
    return pairs


def check_architecture(
    shapes: tuple[tuple[int, ...], ...],
    expected: tuple[tuple[int, int, int], ...] | None,
) -> None:
    """Reject captures that drift from the documented geometry.

    ``expected`` is the per-model shape table for default taps, or None
    for custom taps.  Either way every snapshot must be 3-D and each
    successive tap must halve the spatial dims (scale boundaries).
    """
    for i, shape in enumerate(shapes):
        if len(shape) != 3:
            raise ValidationError(f"tap {i + 1} produced a {len(shape)}-D tensor, expected 3-D")
    if expected is not None:
        if tuple(shapes) != tuple(expected):
            raise ValidationError(
                f"captured shapes {tuple(shapes)} drifted from the documented {tuple(expected)}"
            )
        return
    for i in range(1, len(shapes)):
        _, ph, pw = shapes[i - 1]
        _, h, w = shapes[i]
        if (ph, pw) != (2 * h, 2 * w):
            raise ValidationError(
                f"taps {i} -> {i + 1} do not sit at a scale boundary: "
                f"{ph}x{pw} is not double {h}x{w}"
            )


def _write_npy(path: Path, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    with open(path, "wb") as fp:
        np.lib.format.write_array(fp, arr, version=(1, 0))


def export_activations(spec: CaptureSpec) -> ExportResult:
    """Run one forward pass and write snapshots plus manifest.

    Output layout under ``spec.out_dir``: ``input.png`` (the preprocessed
    crop), ``scale_<k>_pre.npy`` / ``scale_<k>_post.npy`` per tap, and
    ``manifest.json`` tying them together.
    """
    table = _MODEL_TABLE[spec.model]
    taps = spec.taps if spec.taps is not None else table["taps"]
    expected = table["shapes"] if spec.taps is None else None

    model = build_model(spec.model, spec.weights)
    batch, crop = preprocess_image(spec.image_path)
    pairs = _capture_taps(model, taps, batch)
    shapes = tuple(pair[1].shape for pair in pairs)
    check_architecture(shapes, expected)

    out = spec.out_dir
    out.mkdir(parents=True, exist_ok=True)
    input_path = out / "input.png"
    crop.save(input_path)

    snapshot_paths = []
    entries = []
    for k, ((pre_arr, post_arr), tap) in enumerate(zip(pairs, taps), start=1):
        pre_path = out / f"scale_{k}_pre.npy"
        post_path = out / f"scale_{k}_post.npy"
        _write_npy(pre_path, pre_arr)
        _write_npy(post_path, post_arr)
        snapshot_paths.append((pre_path, post_path))
        channels, height, width = post_arr.shape
        entries.append({
            "index": k,
            "post": post_path.name,
            "pre": pre_path.name,
            "height": height,
            "width": width,
            "channels": channels,
            "tap": tap.module,
        })
        log.info("scale %d: %s -> %dx%dx%d", k, tap.module, channels, height, width)

    manifest = {
        "model": spec.model,
        "input": {"path": input_path.name, "height": CROP_SIZE, "width": CROP_SIZE},
        "preprocess": {
            "source": str(spec.image_path),
            "resize_shorter": RESIZE_SHORTER,
            "center_crop": CROP_SIZE,
            "normalize_mean": list(NORMALIZE_MEAN),
            "normalize_std": list(NORMALIZE_STD),
        },
        "taps": "default scale boundaries" if spec.taps is None else "custom",
        "scales": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("wrote %s", manifest_path)

    return ExportResult(
        manifest_path=manifest_path,
        input_path=input_path,
        snapshot_paths=tuple(snapshot_paths),
        shapes=shapes,
    )
