"""Command-line front end.

One manifest in, image artifacts out.  Every subcommand validates its
inputs up front, writes files atomically, and reports failures with the
stage that broke; the exit code is 0 only when every requested artifact
landed on disk.  Set ``SMOE_LOG`` to a level name (``DEBUG``, ``INFO``,
...) to see progress.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import evalkit, lovi, saliency, tensor_io
from .errors import SmoeError, UsageError, ValidationError
from .stats import StatisticKind
from .tensor_io import Stage

log = logging.getLogger("smoe")

_STAT_CHOICES = [k.value for k in StatisticKind]


class _Failure(Exception):
    """Internal: carries a stage-prefixed message to the exit handler."""


@contextmanager
def _stage(name: str):
    try:
        yield
    except (SmoeError, FileNotFoundError, IndexError) as exc:
        raise _Failure(f"{name}: {exc}") from exc


def _parse_weights(text: str | None):
    if text is None or text in ("uniform", "ramp", "prior"):
        return text
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise UsageError(
            f"weights must be 'uniform', 'ramp', 'prior', or a comma-separated "
            f"vector, got {text!r}"
        ) from None


def _load_config(path: str) -> dict[str, str]:
    """Read ``key = value`` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


_CONFIG_KEYS = {"manifest", "stat", "weights", "alpha", "mode", "fraction", "fill", "cam", "out"}


def _merge_config(args: argparse.Namespace) -> None:
    """Fill options the command line left unset from the config file."""
    if not getattr(args, "config", None):
        return
    with _stage("config"):
        cfg = _load_config(args.config)
        for key, val in cfg.items():
            if key not in _CONFIG_KEYS:
                raise UsageError(f"{args.config}: unknown config key {key!r}")
            if getattr(args, key, None) is None:
                setattr(args, key, val)


def _require_option(args: argparse.Namespace, name: str):
    val = getattr(args, name, None)
    if val is None:
        raise UsageError(f"--{name} is required (on the command line or in the config file)")
    return val


def _as_float(val, name: str) -> float:
    try:
        return float(val)
    except (TypeError, ValueError):
        raise UsageError(f"--{name} expects a number, got {val!r}") from None


def _load_pipeline_inputs(args: argparse.Namespace):
    """Load manifest, image, and the snapshots the statistic needs."""
    manifest_path = _require_option(args, "manifest")
    kind = StatisticKind(args.stat or "smoe_scale")
    with _stage("manifest"):
        manifest = tensor_io.load_manifest(manifest_path)
    with _stage("input image"):
        image = tensor_io.load_image(manifest.input_path)
        if (image.height, image.width) != (manifest.input_height, manifest.input_width):
            raise ValidationError(
                f"input image is {image.height}x{image.width}, manifest says "
                f"{manifest.input_height}x{manifest.input_width}"
            )
    tensors = []
    for entry in manifest.scales:
        with _stage(f"scale {entry.index}"):
            if kind.required_stage is Stage.PRE:
                if entry.pre_path is None:
                    raise UsageError(
                        f"statistic {kind.value} needs pre-activation snapshots, "
                        f"manifest has none for scale {entry.index}"
                    )
                tensor = tensor_io.load_tensor(entry.pre_path, Stage.PRE)
            else:
                tensor = tensor_io.load_tensor(entry.post_path, Stage.POST)
            if (tensor.height, tensor.width) != (entry.height, entry.width):
                raise ValidationError(
                    f"snapshot is {tensor.height}x{tensor.width}, manifest says "
                    f"{entry.height}x{entry.width}"
                )
            tensors.append(tensor)
    return manifest, image, kind, tensors


def _build_maps(args: argparse.Namespace):
    """Shared pipeline: native normalized maps, upsampled stack, combined map."""
    manifest, image, kind, tensors = _load_pipeline_inputs(args)
    target = (manifest.input_height, manifest.input_width)
    with _stage("saliency"):
        native = [saliency.normalize_cdf(saliency.compute_scale_map(t, kind)) for t in tensors]
        upsampled = [saliency.upsample_bilinear(m, *target) for m in native]
        weights = saliency.resolve_weights(_parse_weights(args.weights), len(upsampled))
        stack = saliency.ScaleStack(maps=tuple(upsampled), weights=weights)
        combined = saliency.combine(stack)
    return manifest, image, native, stack, combined


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_image(image: tensor_io.ImageBuffer, path: Path) -> None:
    with _stage("write"):
        tensor_io.save_image(image, path)
    log.info("wrote %s", path)


def _cmd_saliency(args: argparse.Namespace) -> None:
    alpha = _as_float(args.alpha if args.alpha is not None else 0.25, "alpha")
    _, image, native, _, combined = _build_maps(args)
    out = _out_dir(args)
    for k, scale_map in enumerate(native, start=1):
        _write_image(saliency.map_to_image(scale_map), out / f"scale_{k}.png")
    _write_image(saliency.map_to_image(combined), out / "combined.png")
    with _stage("overlay"):
        overlay = saliency.render_overlay(combined, image, alpha)
    _write_image(overlay, out / "overlay.png")


def _cmd_lovi(args: argparse.Namespace) -> None:
    alpha = _as_float(args.alpha if args.alpha is not None else 0.25, "alpha")
    _, image, _, stack, _ = _build_maps(args)
    with _stage("render"):
        rendering = lovi.lovi_render(stack)
        blended = lovi.lovi_overlay(rendering, image, alpha)
    out = _out_dir(args)
    _write_image(rendering, out / "lovi.png")
    _write_image(blended, out / "lovi_overlay.png")


def _cmd_mask(args: argparse.Namespace) -> None:
    mode = evalkit.MaskMode(_require_option(args, "mode"))
    fraction = _as_float(_require_option(args, "fraction"), "fraction")
    fill = evalkit.FillMode(args.fill or "zero")
    _, image, _, _, combined = _build_maps(args)
    with _stage("mask"):
        spec = evalkit.MaskSpec(mode=mode, fraction=fraction, fill=fill)
        mask = evalkit.make_mask(combined, spec)
        masked = evalkit.apply_image_mask(image, mask, fill)
    out = _out_dir(args)
    _write_image(masked, out / "masked.png")
    mask_img = tensor_io.ImageBuffer(values=mask.bits.astype(np.float64)[:, :, np.newaxis])
    _write_image(mask_img, out / "mask.png")


def _cmd_score(args: argparse.Namespace) -> None:
    with _stage("scores"):
        vectors = evalkit.load_scores_csv(args.csv)
        diff = evalkit.difference_score(vectors)
        info = evalkit.information_score(vectors)
    print(f"difference {diff:.4f}")
    print(f"information {info:.4f}")


def _cmd_flops(args: argparse.Namespace) -> None:
    with _stage("flops"):
        if args.dims:
            try:
                dims = tuple(
                    tuple(int(part) for part in chunk.split("x"))
                    for chunk in args.dims.split(",")
                )
            except ValueError:
                raise UsageError(
                    f"--dims expects 'CxHxW,CxHxW,...', got {args.dims!r}"
                ) from None
            report = evalkit.flops_report(dims)
        else:
            report = evalkit.flops_report(evalkit.RESNET50_SCALE_DIMS)
        text = evalkit.flops_json(report) if args.json else evalkit.format_flops(report)
    print(text)


def _cmd_fuse_cam(args: argparse.Namespace) -> None:
    alpha = _as_float(args.alpha if args.alpha is not None else 0.25, "alpha")
    cam_path = _require_option(args, "cam")
    _, image, _, _, combined = _build_maps(args)
    with _stage("cam"):
        cam_image = tensor_io.load_image(cam_path)
        cam_gray = tensor_io.grayscale(cam_image).values[:, :, 0]
        cam_map = saliency.SaliencyMap(values=cam_gray, normalized=True)
        fused = saliency.fuse_cam(combined, cam_map)
    out = _out_dir(args)
    _write_image(saliency.map_to_image(fused), out / "fused.png")
    with _stage("overlay"):
        overlay = saliency.render_overlay(fused, image, alpha)
    _write_image(overlay, out / "fused_overlay.png")


def _add_pipeline_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--manifest", help="path to the scale manifest JSON")
    sub.add_argument("--stat", choices=_STAT_CHOICES, help="per-column statistic")
    sub.add_argument(
        "--weights",
        help="combination weights: uniform, ramp, prior, or w1,w2,... "
        "(default: prior for five scales, else uniform)",
    )
    sub.add_argument("--alpha", help="image weight for overlays (default 0.25)")
    sub.add_argument("--out", help="output directory (default: current)")
    sub.add_argument("--config", help="key=value file supplying unset options")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoe",
        description="Saliency maps, visualizations, and fidelity tooling "
        "for captured CNN activations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("saliency", help="write per-scale, combined, and overlay maps")
    _add_pipeline_options(p)
    p.set_defaults(handler=_cmd_saliency)

    p = sub.add_parser("lovi", help="write the layer-ordered color rendering")
    _add_pipeline_options(p)
    p.set_defaults(handler=_cmd_lovi)

    p = sub.add_parser("mask", help="write keep/remove masks and the masked input")
    _add_pipeline_options(p)
    p.add_argument("--mode", choices=[m.value for m in evalkit.MaskMode], help="mask protocol")
    p.add_argument("--fraction", help="fraction of pixels the protocol selects")
    p.add_argument(
        "--fill", choices=[f.value for f in evalkit.FillMode], help="fill for dropped pixels"
    )
    p.set_defaults(handler=_cmd_mask)

    p = sub.add_parser("score", help="print fidelity scores from a per-layer accuracy CSV")
    p.add_argument("csv", help="CSV with columns layer,kappa,rho and z or z_kar,z_roar")
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("flops", help="print the per-scale operation count report")
    p.add_argument("--dims", help="scale dims as 'CxHxW,CxHxW,...' (default: ResNet-50)")
    p.add_argument("--json", action="store_true", help="emit JSON instead of text")
    p.set_defaults(handler=_cmd_flops)

    p = sub.add_parser("fuse-cam", help="sharpen the combined map with a CAM image")
    _add_pipeline_options(p)
    p.add_argument("--cam", help="grayscale CAM image at input resolution")
    p.set_defaults(handler=_cmd_fuse_cam)

    return parser


def _setup_logging() -> None:
    level = os.environ.get("SMOE_LOG", "WARNING").upper()
    log.setLevel(getattr(logging, level, logging.WARNING))
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config(args)
        args.handler(args)
    except _Failure as failure:
        print(f"error: {failure}", file=sys.stderr)
        return 1
    except (SmoeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
