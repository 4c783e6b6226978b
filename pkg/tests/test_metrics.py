import math

import numpy as np
import pytest

from radiomap import ingest
from radiomap.errors import PredictorFailure, ShapeMismatch, ZeroReference
from radiomap.metrics import (
    SsimConfig,
    evaluate_split,
    mse,
    nmse,
    psnr,
    rmse,
    ssim,
    write_report,
)
from radiomap.oracle import OracleConfig, compute_pathloss, generate_scene


def test_mse_identical_zero():
    a = np.random.default_rng(0).random((16, 16))
    assert mse(a, a) == 0.0


def test_mse_uniform_difference():
    a = np.zeros((7, 9))
    b = np.full((7, 9), 0.1)
    assert mse(a, b) == pytest.approx(0.01)
    assert rmse(a, b) == pytest.approx(0.1)


def test_mse_symmetry_and_shape_check():
    rng = np.random.default_rng(1)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert mse(a, b) == mse(b, a)
    with pytest.raises(ShapeMismatch):
        mse(a, np.zeros((4, 4)))


def test_rmse_squares_to_mse():
    rng = np.random.default_rng(2)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    assert abs(rmse(a, b) ** 2 - mse(a, b)) < 1e-12


def test_nmse_values():
    truth = np.random.default_rng(3).random((10, 10)) + 0.5
    assert nmse(np.zeros_like(truth), truth) == pytest.approx(1.0)
    assert nmse(truth, truth) == 0.0
    assert nmse(1.1 * truth, truth) == pytest.approx(0.01)


def test_nmse_zero_reference():
    with pytest.raises(ZeroReference):
        nmse(np.ones((4, 4)), np.zeros((4, 4)))


def test_psnr_values():
    a = np.zeros((5, 5))
    b = np.full((5, 5), 0.1)
    assert psnr(a, b, r=1.0) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a) == math.inf
    # doubling the range adds exactly 20 log10(2) dB
    gain = psnr(a, b, r=2.0) - psnr(a, b, r=1.0)
    assert gain == pytest.approx(20.0 * math.log10(2.0), abs=1e-12)


def test_ssim_identical_is_exactly_one():
    rng = np.random.default_rng(4)
    for shape in ((16, 16), (32, 24), (11, 11)):
        a = rng.random(shape)
        assert ssim(a, a) == 1.0


def test_ssim_constant_images_formula():
    cfg = SsimConfig()
    c1v, c2v = 0.3, 0.8
    a = np.full((32, 32), c1v)
    b = np.full((32, 32), c2v)
    expected = (2 * c1v * c2v + cfg.c1) / (c1v**2 + c2v**2 + cfg.c1)
    assert ssim(a, b, cfg) == pytest.approx(expected, abs=1e-9)


def test_ssim_symmetric():
    rng = np.random.default_rng(5)
    a, b = rng.random((20, 20)), rng.random((20, 20))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_config_c3_relation():
    cfg = SsimConfig()
    assert cfg.c3 == cfg.c2 / 2
    assert cfg.c1 == pytest.approx((0.01 * 1.0) ** 2)


def test_pixel_shuffle_changes_ssim_not_mse():
    rng = np.random.default_rng(6)
    truth = rng.random((24, 24))
    pred = truth + rng.normal(0, 0.05, truth.shape)
    perm = rng.permutation(truth.size)
    truth_s = truth.ravel()[perm].reshape(truth.shape)
    pred_s = pred.ravel()[perm].reshape(truth.shape)
    assert mse(pred_s, truth_s) == pytest.approx(mse(pred, truth), abs=1e-15)
    assert nmse(pred_s, truth_s) == pytest.approx(nmse(pred, truth), abs=1e-12)
    assert abs(ssim(pred_s, truth_s) - ssim(pred, truth)) > 1e-4


def _tiny_index(tmp_path, n_maps=3):
    cfg = OracleConfig()
    scenes = [generate_scene(70 + k, 32, 4, 2) for k in range(n_maps)]
    maps = [compute_pathloss(s, cfg) for s in scenes]
    ingest.save_synthetic_dataset(scenes, maps, tmp_path, cfg.encode_config())
    return ingest.load_synthetic_dataset(tmp_path)


def test_evaluate_split_ground_truth_predictor(tmp_path):
    index = _tiny_index(tmp_path)
    truths = {}

    def loader(idx, record):
        scene, gray = ingest.load_record(idx, record)
        truths["last"] = gray
        return scene, gray

    report = evaluate_split(lambda scene: truths["last"], index, loader=loader)
    assert report.nmse == 0.0
    assert report.rmse == 0.0
    assert report.ssim == 1.0
    assert report.psnr_inf_count == len(index)


def test_evaluate_split_all_zero_predictor(tmp_path):
    index = _tiny_index(tmp_path)
    report = evaluate_split(lambda scene: np.zeros((index.n, index.n)), index)
    for _, sample_nmse, _, _, _ in report.samples:
        assert sample_nmse == pytest.approx(1.0)


def test_evaluate_split_report_fields_and_files(tmp_path):
    index = _tiny_index(tmp_path)
    report = evaluate_split(lambda scene: np.zeros((index.n, index.n)), index)
    report_path = tmp_path / "report.txt"
    csv_path = tmp_path / "report.csv"
    write_report(report, report_path, csv_path)
    text = report_path.read_text()
    for key in ("nmse=", "rmse=", "ssim=", "psnr="):
        assert key in text
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "record_id,nmse,rmse,ssim,psnr"
    assert len(lines) == len(index) + 1


def test_evaluate_split_propagates_failures_with_record_id(tmp_path):
    index = _tiny_index(tmp_path)

    def broken(scene):
        raise RuntimeError("boom")

    with pytest.raises(PredictorFailure, match="00000_0"):
        evaluate_split(broken, index)
