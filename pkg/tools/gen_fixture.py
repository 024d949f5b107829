"""Regenerate the synthetic capture fixture under tests/fixtures.

The fixture imitates a five-scale capture of a small network run on a
32x32 input: per-scale pre/post snapshot pairs whose activity clusters
around a blob, the input image itself, a CAM image, and accuracy CSVs
for the scoring command.  Everything is seeded, so reruns are
byte-identical.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from smoe import tensor_io
from smoe.tensor_io import ActivationTensor, ImageBuffer, ScaleEntry, ScaleManifest, Stage

SCALE_SHAPES = [(8, 32, 32), (12, 16, 16), (16, 8, 8), (24, 4, 4), (32, 2, 2)]
SEED = 807240


def bump(height: int, width: int, cy: float, cx: float, spread: float) -> np.ndarray:
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    d2 = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2
    return np.exp(-d2 / (2.0 * spread * spread))


def build_scales(rng: np.random.Generator):
    pres = []
    for channels, height, width in SCALE_SHAPES:
        noise = rng.normal(0.0, 0.6, size=(channels, height, width))
        amps = rng.uniform(0.5, 2.5, size=(channels, 1, 1))
        blob = bump(height, width, 0.38, 0.62, 0.16)
        pres.append((noise + amps * blob - 0.4).astype(np.float32))
    return pres


def build_input(rng: np.random.Generator) -> np.ndarray:
    gradient = np.linspace(0.15, 0.75, 32)[:, None] * np.ones((1, 32))
    blob = bump(32, 32, 0.38, 0.62, 0.18)
    rgb = np.stack(
        [
            gradient * 0.9 + 0.25 * blob,
            gradient * 0.6 + 0.45 * blob,
            np.flipud(gradient) * 0.8 + 0.1 * blob,
        ],
        axis=-1,
    )
    rgb += rng.normal(0.0, 0.02, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


SCORE_ROWS = {
    "scores_smoe.csv": (
        "layer,kappa,rho,z_kar,z_roar\n"
        "l1,56.61,44.48,66.42,73.48\n"
        "l2,50.69,44.81,61.28,72.41\n"
        "l3,51.25,36.35,50.67,68.90\n"
        "l4,46.40,33.88,40.81,64.63\n"
        "l5,63.00,21.15,42.98,66.04\n"
    ),
    "scores_std.csv": (
        "layer,kappa,rho,z_kar,z_roar\n"
        "l1,51.84,45.78,66.42,73.48\n"
        "l2,50.73,42.74,61.28,72.41\n"
        "l3,50.72,36.17,50.67,68.90\n"
        "l4,46.16,34.41,40.81,64.63\n"
        "l5,62.82,22.88,42.98,66.04\n"
    ),
}


def main(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    pres = build_scales(rng)
    entries = []
    for idx, pre in enumerate(pres, start=1):
        post = np.maximum(pre, 0.0)
        pre_path = out_dir / f"scale_{idx}_pre.npy"
        post_path = out_dir / f"scale_{idx}_post.npy"
        tensor_io.save_tensor(ActivationTensor(values=pre, stage=Stage.PRE), pre_path)
        tensor_io.save_tensor(ActivationTensor(values=post, stage=Stage.POST), post_path)
        entries.append(
            ScaleEntry(
                index=idx,
                post_path=post_path,
                pre_path=pre_path,
                height=pre.shape[1],
                width=pre.shape[2],
            )
        )
    input_path = out_dir / "input.png"
    tensor_io.save_image(ImageBuffer(values=build_input(rng)), input_path)
    cam = bump(32, 32, 0.38, 0.62, 0.22)
    cam_img = (cam - cam.min()) / (cam.max() - cam.min())
    tensor_io.save_image(ImageBuffer(values=cam_img[:, :, None]), out_dir / "cam.png")
    manifest = ScaleManifest(
        model="synthetic5",
        input_path=input_path,
        input_height=32,
        input_width=32,
        scales=tuple(entries),
    )
    tensor_io.save_manifest(manifest, out_dir / "manifest.json")
    for name, body in SCORE_ROWS.items():
        tensor_io.write_bytes_atomic(out_dir / name, body.encode())
    print(f"fixture written to {out_dir}")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "tests" / "fixtures"
    main(target)
