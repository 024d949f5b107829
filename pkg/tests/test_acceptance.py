"""Acceptance suite: one test per contract criterion.

Each test prints a single ``[acceptance] <name>: PASS|FAIL`` line (visible
with ``-s`` or in failure output) and enforces the stated tolerance and
runtime budget.  Values marked as reference numbers are frozen from the
published tables; everything else is checked against independent oracles.
"""

import contextlib
import math
import sys
import time

import numpy as np
from scipy.special import ndtr

from smoe import evalkit, lovi, saliency, stats
from smoe.cli import main
from smoe.evalkit import MaskMode, MaskSpec, ScoreVectors
from smoe.saliency import SaliencyMap
from smoe.tensor_io import ActivationColumn


@contextlib.contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL", file=sys.stderr)
        raise
    print(f"[acceptance] {name}: PASS", file=sys.stderr)


def col(values):
    return ActivationColumn(values=np.asarray(values, dtype=np.float64))


# Reference statistic rows: alternating pair, mean, population std, value.
REFERENCE_ROWS = [
    ((0.5, 1.0), 0.75, 0.25, 0.064),
    ((1.0, 2.0), 1.5, 0.5, 0.127),
    ((2.0, 4.0), 3.0, 1.0, 0.255),
    ((1.0, 2.0), 1.5, 0.5, 0.127),
    ((2.0, 3.0), 2.5, 0.5, 0.074),
    ((2.0, 4.0), 3.0, 1.0, 0.255),
    ((0.6125, 1.8375), 1.225, 0.6125, 0.254),
]

# Published per-layer KAR/ROAR accuracies (percent) for the two methods,
# plus the random-mask baselines.
BASELINE_KAR = (66.42, 61.28, 50.67, 40.81, 42.98)
BASELINE_ROAR = (73.48, 72.41, 68.90, 64.63, 66.04)
SMOE_KAR = (56.61, 50.69, 51.25, 46.40, 63.00)
SMOE_ROAR = (44.48, 44.81, 36.35, 33.88, 21.15)
STD_KAR = (51.84, 50.73, 50.72, 46.16, 62.82)
STD_ROAR = (45.78, 42.74, 36.17, 34.41, 22.88)


def published_vectors(kar, roar):
    scale = lambda row: tuple(v / 100.0 for v in row)
    return ScoreVectors(
        kappa=scale(kar),
        rho=scale(roar),
        z_keep=scale(BASELINE_KAR),
        z_remove=scale(BASELINE_ROAR),
    )


def test_reference_statistic_rows():
    with criterion("reference statistic rows"):
        start = time.perf_counter()
        for pair, mean, std, expected in REFERENCE_ROWS:
            column = col(list(pair) * 4)
            m, s = stats.normal_stats(column)
            assert abs(m - mean) <= 1e-6
            assert abs(s - std) <= 1e-6
            assert abs(stats.smoe_scale(column) - expected) <= 1e-3
        assert time.perf_counter() - start < 1.0


def test_order_equivalence_with_gamma_oracle():
    """Rankings by the fast statistic and by the fitted scale must agree.

    Checked over 1,000 random positive columns: zero discordant pairs
    are allowed among pairs whose oracle values differ by more than
    1e-9.
    """
    with criterion("order equivalence vs gamma oracle"):
        start = time.perf_counter()
        rng = np.random.default_rng(20260814)
        sizes = rng.choice([8, 64, 256], size=1000)
        fast = np.empty(1000)
        oracle = np.empty(1000)
        for i, r in enumerate(sizes):
            column = col(rng.uniform(0.05, 10.0, size=int(r)))
            fast[i] = stats.smoe_scale(column)
            oracle[i] = stats.gamma_scale_oracle(column)
        decided = np.abs(oracle[:, None] - oracle[None, :]) > 1e-9
        discordant = np.sign(fast[:, None] - fast[None, :]) != np.sign(
            oracle[:, None] - oracle[None, :]
        )
        inversions = int(np.count_nonzero(decided & discordant) // 2)
        assert time.perf_counter() - start < 10.0
        assert inversions == 0, (
            f"{inversions} of {int(decided.sum() // 2)} oracle-decided pairs "
            "are ranked differently by the fast statistic"
        )


def test_published_score_reproduction():
    with criterion("published score reproduction"):
        start = time.perf_counter()
        smoe_vec = published_vectors(SMOE_KAR, SMOE_ROAR)
        std_vec = published_vectors(STD_KAR, STD_ROAR)
        assert abs(evalkit.difference_score(smoe_vec) - 1.70) <= 0.01
        assert abs(evalkit.difference_score(std_vec) - 1.64) <= 0.01
        assert abs(evalkit.information_score(smoe_vec) - 1.13) <= 0.01
        assert abs(evalkit.information_score(std_vec) - 1.07) <= 0.01
        assert time.perf_counter() - start < 1.0


def test_flops_ledger_reproduction():
    with criterion("flops ledger reproduction"):
        start = time.perf_counter()
        report = evalkit.flops_report(evalkit.RESNET50_SCALE_DIMS)
        stat_ops = [layer.statistic_ops for layer in report.layers]
        norm_ops = [layer.normalize_ops for layer in report.layers]
        assert stat_ops == [3223808, 3214400, 1606416, 803012, 401457]
        assert norm_ops == [150528, 37632, 9408, 2352, 588]
        assert report.statistic_total == 9249093
        assert report.normalize_total == 200508
        assert report.combine_total == 1580544
        assert report.grand_total == 11030145
        assert abs(report.overhead_percent() - 0.29) <= 0.01
        assert time.perf_counter() - start < 1.0


def test_mask_transform_invariance():
    with criterion("mask invariance under monotone transforms"):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        transforms = [
            lambda v: 3.0 * v + 2.0,
            lambda v: v**3,
            lambda v: ndtr(v),
        ]
        for _ in range(100):
            base = rng.random((16, 16))
            for fraction in (0.025, 0.1, 0.5):
                for mode in (MaskMode.KAR_KEEP, MaskMode.ROAR_REMOVE):
                    spec = MaskSpec(mode=mode, fraction=fraction)
                    reference = evalkit.make_mask(SaliencyMap(values=base), spec)
                    for transform in transforms:
                        twisted = evalkit.make_mask(
                            SaliencyMap(values=transform(base)), spec
                        )
                        assert np.array_equal(reference.bits, twisted.bits)
        assert time.perf_counter() - start < 5.0


def test_lovi_analytic_cases():
    with criterion("layer-ordered color analytic cases"):
        one_hot_first = [1.0, 0.0, 0.0, 0.0, 0.0]
        one_hot_last = [0.0, 0.0, 0.0, 0.0, 1.0]
        uniform = [0.3, 0.3, 0.3, 0.3, 0.3]
        assert abs(lovi.hue(one_hot_first) - 300.0) <= 1e-9
        assert abs(lovi.hue(one_hot_last) - 0.0) <= 1e-9
        assert abs(lovi.hue(uniform) - 150.0) <= 1e-9
        assert abs(lovi.saturation(one_hot_first) - 0.8) <= 1e-9
        assert abs(lovi.saturation([0.2] * 5) - 0.0) <= 1e-9
        assert abs(lovi.saturation([1.0] * 5) - 0.0) <= 1e-9
        assert abs(lovi.value([0.1, 0.7, 0.2, 0.05, 0.0]) - 0.7) <= 1e-9


def test_pipeline_determinism_and_goldens(manifest_path, golden_dir, tmp_path):
    with criterion("pipeline determinism and goldens"):
        jobs = [
            ("saliency", [], "saliency",
             ["scale_1.png", "scale_2.png", "scale_3.png", "scale_4.png",
              "scale_5.png", "combined.png", "overlay.png"]),
            ("lovi", [], "lovi", ["lovi.png", "lovi_overlay.png"]),
            ("mask", ["--mode", "kar_keep", "--fraction", "0.25"], "mask",
             ["mask.png", "masked.png"]),
        ]
        for command, extra, golden_name, files in jobs:
            first = tmp_path / f"{command}_a"
            second = tmp_path / f"{command}_b"
            for out in (first, second):
                rc = main(
                    [command, "--manifest", str(manifest_path), "--out", str(out)]
                    + extra
                )
                assert rc == 0
            for name in files:
                run_a = (first / name).read_bytes()
                run_b = (second / name).read_bytes()
                golden = (golden_dir / golden_name / name).read_bytes()
                assert run_a == run_b, f"{command}/{name} differs across runs"
                assert run_a == golden, f"{command}/{name} differs from golden"


def test_cdf_and_truncated_normal_checks():
    with criterion("cdf and truncated-normal numerics"):
        normalized = saliency.normalize_cdf(SaliencyMap(values=np.array([[0.0, 1.0]])))
        assert abs(normalized.values[0, 1] - 0.841345) <= 1e-6

        params = stats.truncnormal_stats(col([-1.0, 1.0] * 4))
        assert abs(params.mu) <= 1e-12 and abs(params.sigma - 1.0) <= 1e-12
        assert abs(params.trunc_mean - math.sqrt(2.0 / math.pi)) <= 1e-6

        # Truncating N(0, 1) below zero leaves the half-normal law, so
        # |z| sampling is an exact Monte-Carlo oracle for it.
        rng = np.random.default_rng(123)
        samples = np.abs(rng.standard_normal(1_000_000))
        mean_se = samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(params.trunc_mean - samples.mean()) <= 3.0 * mean_se
        std_se = samples.std(ddof=1) / math.sqrt(2.0 * (samples.size - 1))
        assert abs(params.trunc_std - samples.std(ddof=1)) <= 3.0 * std_se
