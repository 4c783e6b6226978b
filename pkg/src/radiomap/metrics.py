"""Evaluation suite for grayscale radio maps: MSE, NMSE, RMSE, PSNR, SSIM.

All metrics operate on the gray-encoded maps by default (decode to dB first
if a dB-domain comparison is wanted). Identical inputs give PSNR +inf, which
split aggregation excludes from the mean and reports separately.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import ingest
from .errors import PredictorFailure, ShapeMismatch, ZeroReference


def _check_shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _check_shapes(a, b)
    return float(np.mean((a - b) ** 2))


def rmse(a, b) -> float:
    return math.sqrt(mse(a, b))


def nmse(pred, truth) -> float:
    """Squared error normalized by the reference's squared norm."""
    pred, truth = _check_shapes(pred, truth)
    denom = float(np.sum(truth**2))
    if denom == 0.0:
        raise ZeroReference("reference map is identically zero")
    return float(np.sum((pred - truth) ** 2)) / denom


def psnr(pred, truth, r=1.0) -> float:
    """10*log10(r^2 / MSE); +inf for identical inputs."""
    m = mse(pred, truth)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(r * r / m)


@dataclass(frozen=True)
class SsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Mean of the local SSIM map under a Gaussian window.

    With C3 = C2/2 the luminance/contrast/structure product collapses to the
    two-constant combined formula, which is what is computed here.
    """
    cfg = cfg or SsimConfig()
    a, b = _check_shapes(a, b)
    win = min(cfg.window_size, *a.shape)
    if win % 2 == 0:
        win -= 1
    w = _gaussian_window(win, cfg.window_sigma)
    c1, c2 = cfg.c1, cfg.c2

    mu_a = fftconvolve(a, w, mode="valid")
    mu_b = fftconvolve(b, w, mode="valid")
    # identical expression structure for both variances and the covariance so
    # that ssim(x, x) evaluates to exactly 1.0
    var_a = fftconvolve(a * a, w, mode="valid") - mu_a * mu_a
    var_b = fftconvolve(b * b, w, mode="valid") - mu_b * mu_b
    cov = fftconvolve(a * b, w, mode="valid") - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class SplitReport:
    nmse: float
    rmse: float
    ssim: float
    psnr: float
    psnr_inf_count: int
    samples: list = field(default_factory=list)  # (record_id, nmse, rmse, ssim, psnr)


def evaluate_split(predictor, index, loader=None, ssim_cfg=None) -> SplitReport:
    """Run a predictor over every record of a split and aggregate the four
    report metrics. ``predictor(scene) -> gray map``; ``loader`` materializes
    a record (defaults to the synthetic dataset loader).
    """
    loader = loader or ingest.load_record
    rows = []
    for record in index.records:
        record_id = f"{record.map_id}_{record.tx_index}"
        scene, truth = loader(index, record)
        try:
            pred = predictor(scene)
        except Exception as e:
            raise PredictorFailure(f"predictor failed on record {record_id}: {e}") from e
        rows.append(
            (
                record_id,
                nmse(pred, truth),
                rmse(pred, truth),
                ssim(pred, truth, ssim_cfg),
                psnr(pred, truth),
            )
        )
    finite_psnr = [r[4] for r in rows if math.isfinite(r[4])]
    return SplitReport(
        nmse=float(np.mean([r[1] for r in rows])),
        rmse=float(np.mean([r[2] for r in rows])),
        ssim=float(np.mean([r[3] for r in rows])),
        psnr=float(np.mean(finite_psnr)) if finite_psnr else math.inf,
        psnr_inf_count=len(rows) - len(finite_psnr),
        samples=rows,
    )


def write_report(report: SplitReport, report_path, csv_path=None):
    """Emit the line-oriented metric=value report and the per-sample CSV."""
    with open(report_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"nmse={report.nmse!r}\n")
        f.write(f"rmse={report.rmse!r}\n")
        f.write(f"ssim={report.ssim!r}\n")
        f.write(f"psnr={'inf' if math.isinf(report.psnr) else repr(report.psnr)}\n")
        f.write(f"psnr_inf_count={report.psnr_inf_count}\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["record_id", "nmse", "rmse", "ssim", "psnr"])
            for record_id, v_nmse, v_rmse, v_ssim, v_psnr in report.samples:
                writer.writerow(
                    [record_id, repr(v_nmse), repr(v_rmse), repr(v_ssim),
                     "inf" if math.isinf(v_psnr) else repr(v_psnr)]
                )
