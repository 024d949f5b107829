"""Loading, validation, and serialization of activation snapshots.

Activation tensors travel between processes as NPY version 1.0 files
(little-endian float32, C order, shape ``(channels, height, width)``).
A JSON manifest ties the per-scale files of one forward pass together
with the input image they were captured from.  Everything loaded here
is validated up front so the math modules can assume clean data.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, UsageError, ValidationError

#: Shift added to activation values before any logarithm is taken.
DEFAULT_EPSILON = 1e-6

_NPY_DTYPE = np.dtype("<f4")


class Stage(str, Enum):
    """Where in the layer a snapshot was taken relative to the rectifier."""

    PRE = "pre_activation"
    POST = "post_activation"


def _as_stage(stage: Stage | str) -> Stage:
    try:
        return Stage(stage)
    except ValueError:
        raise UsageError(f"unknown stage {stage!r}") from None


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """One captured activation volume of shape ``(channels, height, width)``.

    The value array is exposed read-only; treat instances as immutable
    after construction.
    """

    values: np.ndarray
    stage: Stage

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage", _as_stage(self.stage))
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 3:
            raise ValidationError(f"activation tensor must be 3-D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"activation tensor has empty axis: shape {arr.shape}")
        if self.stage is Stage.POST and np.any(arr < 0.0):
            raise ValidationError("post-activation tensor contains negative values")
        view = arr.view()
        view.setflags(write=False)
        object.__setattr__(self, "values", view)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class ActivationColumn:
    """All channel values observed at one spatial location.

    ``epsilon`` is the shift the log-based statistics apply to every
    entry; it rides along with the data so all of them use the same one.
    """

    values: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 1 or arr.size < 1:
            raise ValidationError(f"column must be a non-empty 1-D vector, got shape {arr.shape}")
        if not (self.epsilon > 0.0 and np.isfinite(self.epsilon)):
            raise ValidationError(f"epsilon must be positive and finite, got {self.epsilon}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


def column_view(tensor: ActivationTensor, i: int, j: int) -> ActivationColumn:
    """Return the channel column at spatial location ``(i, j)``.

    The column shares memory with the tensor, so extracting every
    location stays cheap even for wide layers.
    """
    if not (0 <= i < tensor.height and 0 <= j < tensor.width):
        raise IndexError(
            f"location ({i}, {j}) outside {tensor.height}x{tensor.width} spatial grid"
        )
    return ActivationColumn(values=tensor.values[:, i, j])


def load_tensor(path: str | os.PathLike, stage: Stage | str) -> ActivationTensor:
    """Read one activation snapshot from an NPY file.

    Only NPY version 1.0 payloads holding little-endian float32, C-order,
    3-D data are accepted; anything else raises :class:`FormatError`.
    """
    stage = _as_stage(stage)
    with open(path, "rb") as fp:
        try:
            version = np.lib.format.read_magic(fp)
        except ValueError as exc:
            raise FormatError(f"{path}: not an NPY file ({exc})") from None
        if version != (1, 0):
            raise FormatError(f"{path}: NPY version {version[0]}.{version[1]}, need 1.0")
        try:
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fp)
        except ValueError as exc:
            raise FormatError(f"{path}: bad NPY header ({exc})") from None
        if dtype != _NPY_DTYPE:
            raise FormatError(f"{path}: dtype {dtype} not little-endian float32")
        if fortran_order:
            raise FormatError(f"{path}: Fortran-ordered data not supported")
        if len(shape) != 3:
            raise FormatError(f"{path}: expected 3-D data, got shape {shape}")
        count = int(np.prod(shape))
        data = fp.read()
    if len(data) != count * _NPY_DTYPE.itemsize:
        raise FormatError(
            f"{path}: payload holds {len(data)} bytes, expected {count * _NPY_DTYPE.itemsize}"
        )
    values = np.frombuffer(data, dtype=_NPY_DTYPE, count=count).reshape(shape)
    return ActivationTensor(values=values, stage=stage)


def save_tensor(tensor: ActivationTensor, path: str | os.PathLike) -> None:
    """Write a snapshot as NPY 1.0; the result round-trips bit for bit."""
    buf = io.BytesIO()
    np.lib.format.write_array(buf, tensor.values, version=(1, 0))
    write_bytes_atomic(path, buf.getvalue())


@dataclass(frozen=True)
class ScaleEntry:
    """Manifest record for one captured scale."""

    index: int
    post_path: Path
    height: int
    width: int
    pre_path: Path | None = None


@dataclass(frozen=True)
class ScaleManifest:
    """Index of the per-scale snapshot files for one forward pass."""

    model: str
    input_path: Path
    input_height: int
    input_width: int
    scales: tuple[ScaleEntry, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        # Entries are kept sorted by scale index no matter how the file
        # ordered them.
        ordered = tuple(sorted(self.scales, key=lambda e: e.index))
        object.__setattr__(self, "scales", ordered)
        for pos, entry in enumerate(ordered, start=1):
            if entry.index != pos:
                raise ValidationError(
                    f"scale indices must run 1..{len(ordered)} without gaps, "
                    f"found index {entry.index} at position {pos}"
                )
            if entry.height < 1 or entry.width < 1:
                raise ValidationError(f"scale {entry.index}: non-positive dimensions")
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.height > prev.height or cur.width > prev.width:
                raise ValidationError(
                    f"scale {cur.index} is {cur.height}x{cur.width}, larger than "
                    f"scale {prev.index} ({prev.height}x{prev.width}); deeper scales "
                    "must not grow"
                )


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise FormatError(f"manifest {context}: missing key {key!r}")
    return mapping[key]


def load_manifest(path: str | os.PathLike) -> ScaleManifest:
    """Parse and validate a manifest JSON file.

    Relative snapshot paths are resolved against the manifest's own
    directory.  Every referenced file must exist.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: manifest root must be an object")
    base = path.parent

    def resolve(rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else base / p

    model = _require(raw, "model", "root")
    image = _require(raw, "input", "root")
    input_path = resolve(_require(image, "path", "input"))
    entries = []
    for rec in _require(raw, "scales", "root"):
        entry = ScaleEntry(
            index=int(_require(rec, "index", "scale entry")),
            post_path=resolve(_require(rec, "post", "scale entry")),
            pre_path=resolve(rec["pre"]) if rec.get("pre") else None,
            height=int(_require(rec, "height", "scale entry")),
            width=int(_require(rec, "width", "scale entry")),
        )
        entries.append(entry)
    manifest = ScaleManifest(
        model=str(model),
        input_path=input_path,
        input_height=int(_require(image, "height", "input")),
        input_width=int(_require(image, "width", "input")),
        scales=tuple(entries),
    )
    if not manifest.input_path.exists():
        raise FileNotFoundError(f"input image missing: {manifest.input_path}")
    for entry in manifest.scales:
        if not entry.post_path.exists():
            raise FileNotFoundError(f"scale {entry.index}: post snapshot missing: {entry.post_path}")
        if entry.pre_path is not None and not entry.pre_path.exists():
            raise FileNotFoundError(f"scale {entry.index}: pre snapshot missing: {entry.pre_path}")
    return manifest


def save_manifest(manifest: ScaleManifest, path: str | os.PathLike) -> None:
    """Write a manifest with paths stored relative to its directory."""
    path = Path(path)
    base = path.parent

    def relativize(p: Path) -> str:
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    doc = {
        "model": manifest.model,
        "input": {
            "path": relativize(manifest.input_path),
            "height": manifest.input_height,
            "width": manifest.input_width,
        },
        "scales": [
            {
                "index": e.index,
                "post": relativize(e.post_path),
                **({"pre": relativize(e.pre_path)} if e.pre_path is not None else {}),
                "height": e.height,
                "width": e.width,
            }
            for e in manifest.scales
        ],
    }
    write_bytes_atomic(path, (json.dumps(doc, indent=2) + "\n").encode())


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded raster image, float values in ``[0, 1]``, shape ``(h, w, c)``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValidationError(f"image must be (h, w, 1|3), got shape {arr.shape}")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValidationError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def load_image(path: str | os.PathLike) -> ImageBuffer:
    """Decode an image file into an :class:`ImageBuffer`."""
    try:
        with Image.open(path) as img:
            mode = "L" if img.mode in ("1", "L", "I", "I;16", "F") else "RGB"
            arr = np.asarray(img.convert(mode), dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image ({exc})") from None
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    return ImageBuffer(values=arr)


def encode_png(image: ImageBuffer) -> bytes:
    """Quantize to 8 bits (round half to even) and encode as PNG."""
    arr8 = np.round(image.values * 255.0).astype(np.uint8)
    if image.channels == 1:
        pil = Image.fromarray(arr8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr8, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def save_image(image: ImageBuffer, path: str | os.PathLike) -> None:
    write_bytes_atomic(path, encode_png(image))


def grayscale(image: ImageBuffer) -> ImageBuffer:
    """Collapse to a single luma channel (BT.601 weights)."""
    if image.channels == 1:
        return image
    weights = np.array([0.299, 0.587, 0.114])
    luma = np.clip(image.values @ weights, 0.0, 1.0)
    return ImageBuffer(values=luma[:, :, np.newaxis])


def write_bytes_atomic(path: str | os.PathLike, data: bytes) -> None:
    """Write a file via a temp sibling and rename, so readers never see
    a half-written artifact."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        # mkstemp creates 0600 files; give the artifact normal permissions.
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
