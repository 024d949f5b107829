import numpy as np
import pytest
import torch
from PIL import Image

from smoe_exporter import CaptureSpec, export_activations


@pytest.fixture(scope="session")
def sample_image(tmp_path_factory):
    """A deterministic non-square RGB image with structure to crop."""
    rng = np.random.default_rng(3)
    h, w = 300, 400
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.stack([
        xx / w,
        yy / h,
        np.exp(-(((xx - 250) / 60.0) ** 2 + ((yy - 120) / 50.0) ** 2)),
    ], axis=-1)
    img = np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)
    path = tmp_path_factory.mktemp("img") / "sample.png"
    Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
    return path


@pytest.fixture(scope="session")
def resnet_export(sample_image, tmp_path_factory):
    """One shared ResNet-50 capture; the forward pass is the slow part."""
    torch.manual_seed(0)
    out = tmp_path_factory.mktemp("resnet50")
    spec = CaptureSpec(
        model="resnet50", image_path=sample_image, out_dir=out, weights="random"
    )
    return export_activations(spec)
