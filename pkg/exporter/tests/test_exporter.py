import json
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from smoe_exporter import (
    CaptureSpec,
    TapPoint,
    UsageError,
    ValidationError,
    check_architecture,
    export_activations,
)
from smoe_exporter.cli import main

RESNET50_SHAPES = ((64, 112, 112), (256, 56, 56), (512, 28, 28),
                   (1024, 14, 14), (2048, 7, 7))


def load_npy(path):
    return np.load(path)


class TestCaptureSpec:
    def test_unknown_model_rejected(self, tmp_path):
        with pytest.raises(UsageError, match="unknown model"):
            CaptureSpec(model="alexnet", image_path="x.png", out_dir=tmp_path)

    def test_unknown_weights_rejected(self, tmp_path):
        with pytest.raises(UsageError, match="weights"):
            CaptureSpec(
                model="resnet50", image_path="x.png", out_dir=tmp_path, weights="best"
            )

    def test_unknown_capture_kind_rejected(self):
        with pytest.raises(UsageError, match="capture kind"):
            TapPoint("relu", capture="gradient")


class TestResnetExport:
    def test_documented_shapes(self, resnet_export):
        assert resnet_export.shapes == RESNET50_SHAPES

    def test_snapshot_files_round_trip(self, resnet_export):
        for (pre_path, post_path), shape in zip(
            resnet_export.snapshot_paths, RESNET50_SHAPES
        ):
            pre = load_npy(pre_path)
            post = load_npy(post_path)
            assert pre.shape == post.shape == shape
            assert pre.dtype == post.dtype == np.float32

    def test_post_is_rectified_pre(self, resnet_export):
        for pre_path, post_path in resnet_export.snapshot_paths:
            pre = load_npy(pre_path)
            post = load_npy(post_path)
            assert np.array_equal(post, np.maximum(pre, 0.0))
            assert post.min() >= 0.0

    def test_manifest_dims_halve(self, resnet_export):
        doc = json.loads(resnet_export.manifest_path.read_text())
        dims = [(s["height"], s["width"]) for s in doc["scales"]]
        for (ph, pw), (h, w) in zip(dims, dims[1:]):
            assert (ph, pw) == (2 * h, 2 * w)
        assert doc["input"]["height"] == doc["input"]["width"] == 224

    def test_manifest_records_preprocessing(self, resnet_export):
        doc = json.loads(resnet_export.manifest_path.read_text())
        assert doc["preprocess"]["resize_shorter"] == 256
        assert doc["preprocess"]["center_crop"] == 224
        assert doc["taps"] == "default scale boundaries"
        assert [s["tap"] for s in doc["scales"]][0] == "relu"

    def test_input_image_is_the_crop(self, resnet_export):
        with Image.open(resnet_export.input_path) as img:
            assert img.size == (224, 224)
            assert img.mode == "RGB"

    def test_primary_loader_reads_everything(self, resnet_export):
        from smoe.tensor_io import Stage, load_manifest, load_tensor

        manifest = load_manifest(resnet_export.manifest_path)
        assert manifest.model == "resnet50"
        for entry in manifest.scales:
            post = load_tensor(entry.post_path, stage=Stage.POST)
            pre = load_tensor(entry.pre_path, stage=Stage.PRE)
            assert post.values.shape == pre.values.shape

    def test_primary_pipeline_end_to_end(self, resnet_export, tmp_path):
        out = tmp_path / "saliency"
        proc = subprocess.run(
            [sys.executable, "-m", "smoe.cli", "saliency",
             "--manifest", str(resnet_export.manifest_path), "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        produced = sorted(p.name for p in out.iterdir())
        assert produced == sorted(
            [f"scale_{k}.png" for k in range(1, 6)] + ["combined.png", "overlay.png"]
        )


class TestOtherModels:
    def test_vgg_shapes(self, sample_image, tmp_path):
        torch.manual_seed(0)
        result = export_activations(CaptureSpec(
            model="vgg", image_path=sample_image, out_dir=tmp_path, weights="random"
        ))
        assert result.shapes == ((64, 224, 224), (128, 112, 112), (256, 56, 56),
                                 (512, 28, 28), (512, 14, 14))

    def test_densenet_shapes_and_functional_tap(self, sample_image, tmp_path):
        torch.manual_seed(0)
        result = export_activations(CaptureSpec(
            model="densenet", image_path=sample_image, out_dir=tmp_path,
            weights="random",
        ))
        assert result.shapes == ((64, 112, 112), (256, 56, 56), (512, 28, 28),
                                 (1024, 14, 14), (1024, 7, 7))
        # The final tap rectifies the batch-norm output itself, so pre
        # must keep its negative side while post drops it.
        pre_path, post_path = result.snapshot_paths[-1]
        pre = load_npy(pre_path)
        assert (pre < 0).any()
        assert np.array_equal(load_npy(post_path), np.maximum(pre, 0.0))


class TestValidation:
    def test_shape_drift_detected(self):
        drifted = ((64, 112, 112), (256, 56, 56), (512, 28, 28),
                   (1024, 14, 14), (2048, 8, 8))
        with pytest.raises(ValidationError, match="drift"):
            check_architecture(drifted, RESNET50_SHAPES)

    def test_non_3d_snapshot_detected(self):
        with pytest.raises(ValidationError, match="3-D"):
            check_architecture(((64, 112),), None)

    def test_custom_taps_must_halve(self, sample_image, tmp_path):
        taps = (TapPoint("relu"), TapPoint("layer2.3.relu"))
        with pytest.raises(ValidationError, match="scale boundary"):
            export_activations(CaptureSpec(
                model="resnet50", image_path=sample_image, out_dir=tmp_path,
                taps=taps, weights="random",
            ))

    def test_custom_taps_at_boundaries_allowed(self, sample_image, tmp_path):
        taps = (TapPoint("relu"), TapPoint("layer1.2.relu"))
        result = export_activations(CaptureSpec(
            model="resnet50", image_path=sample_image, out_dir=tmp_path,
            taps=taps, weights="random",
        ))
        assert result.shapes == ((64, 112, 112), (256, 56, 56))
        doc = json.loads(result.manifest_path.read_text())
        assert doc["taps"] == "custom"

    def test_unknown_submodule_rejected(self, sample_image, tmp_path):
        taps = (TapPoint("layer9.0.relu"),)
        with pytest.raises(UsageError, match="submodule"):
            export_activations(CaptureSpec(
                model="resnet50", image_path=sample_image, out_dir=tmp_path,
                taps=taps, weights="random",
            ))

    def test_missing_image_reported(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            export_activations(CaptureSpec(
                model="resnet50", image_path=tmp_path / "none.png",
                out_dir=tmp_path, weights="random",
            ))

    def test_undecodable_image_rejected(self, tmp_path):
        bogus = tmp_path / "bogus.png"
        bogus.write_bytes(b"not an image")
        with pytest.raises(UsageError, match="decodable"):
            export_activations(CaptureSpec(
                model="resnet50", image_path=bogus, out_dir=tmp_path,
                weights="random",
            ))


class TestWeightsFallback:
    def test_unreachable_zoo_falls_back_to_random(self, monkeypatch, caplog):
        import torchvision.models as zoo

        from smoe_exporter.capture import build_model

        calls = []

        def fake_factory(weights=None):
            calls.append(weights)
            if weights is not None:
                raise OSError("name resolution failed")
            return torch.nn.ReLU()

        monkeypatch.setattr(zoo, "resnet50", fake_factory)
        with caplog.at_level("WARNING", logger="smoe_exporter"):
            model = build_model("resnet50", "pretrained")
        assert calls == ["DEFAULT", None]
        assert not model.training
        assert any("falling back to random" in r.message for r in caplog.records)


class TestCli:
    def test_success_path(self, sample_image, tmp_path, capsys):
        rc = main([
            "--model", "resnet50", "--image", str(sample_image),
            "--out", str(tmp_path), "--weights", "random",
        ])
        assert rc == 0
        assert (tmp_path / "manifest.json").exists()
        assert "manifest.json" in capsys.readouterr().out

    def test_missing_image_fails(self, tmp_path, capsys):
        rc = main([
            "--model", "resnet50", "--image", str(tmp_path / "none.png"),
            "--out", str(tmp_path), "--weights", "random",
        ])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_model_choices_enforced(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["--model", "alexnet", "--image", "x.png", "--out", str(tmp_path)])
