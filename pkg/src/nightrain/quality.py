"""Reference-based image quality metrics: PSNR, SSIM, and error statistics.

All reductions use exact compensated summation (math.fsum), so results do
not depend on vectorisation or summation order.  SSIM uses Gaussian-weighted
local statistics over valid window positions only (no padding); C1 and C2
follow the usual (k*L)**2 convention.  Identical images score SSIM 1.0
exactly and PSNR is capped at 99.0 dB so CSV cells stay finite.

ssim_and_grad additionally returns the derivative of the SSIM score with
respect to the first image, which the denoiser training loss consumes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .imgcore import check_same_shape

PSNR_CAP_DB = 99.0

CSV_COLUMNS = ("psnr_db", "ssim", "l1", "mse", "rmse", "mae")


@dataclass(frozen=True)
class SsimConfig:
    window: int = 7
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValidationError(f"window must be odd and >= 3, got {self.window}")
        if min(self.gaussian_sigma, self.k1, self.k2, self.dynamic_range) <= 0:
            raise ValidationError("SSIM constants must be positive")


def error_stats(a: np.ndarray, b: np.ndarray) -> tuple:
    """Return (mse, rmse, mae, l1); mae and l1 are the same quantity
    reported under both labels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    d = (a - b).ravel()
    n = d.size
    mse = math.fsum(d * d) / n
    mae = math.fsum(np.abs(d)) / n
    return mse, math.sqrt(mse), mae, mae


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / mse) in dB, capped at 99.0 (zero-MSE convention)."""
    mse = error_stats(a, b)[0]
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def gaussian_window(window: int, sigma: float) -> np.ndarray:
    """1-D Gaussian weights of odd length `window`, normalised to sum 1."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a symmetric 1-D kernel."""
    win = g.size
    t = np.lib.stride_tricks.sliding_window_view(x, win, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(t, win, axis=1) @ g


def _ssim_terms(a, b, cfg: SsimConfig):
    g = gaussian_window(cfg.window, cfg.gaussian_sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    e_aa = _filter_valid(a * a, g)
    e_bb = _filter_valid(b * b, g)
    e_ab = _filter_valid(a * b, g)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    s_map = (a1 * a2) / (b1 * b2)
    return s_map, (mu_a, mu_b, a1, a2, b1, b2, g)


def _check_ssim_size(a, cfg):
    if a.shape[0] < cfg.window or a.shape[1] < cfg.window:
        raise ValidationError(
            f"image {a.shape} smaller than SSIM window {cfg.window}"
        )


def ssim(a: np.ndarray, b: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean local SSIM over all valid window positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    _check_ssim_size(a, cfg)
    s_map, _ = _ssim_terms(a, b, cfg)
    return math.fsum(s_map.ravel()) / s_map.size


def _spread_valid(m: np.ndarray, g: np.ndarray, out_shape) -> np.ndarray:
    """Adjoint of _filter_valid: spread a valid-position map back over the
    pixels each window covers, weighted by the (symmetric) kernel."""
    win = g.size
    pad_r = out_shape[0] - m.shape[0]
    pad_c = out_shape[1] - m.shape[1]
    assert pad_r == win - 1 and pad_c == win - 1
    mp = np.pad(m, ((win - 1, win - 1), (win - 1, win - 1)))
    t = np.lib.stride_tricks.sliding_window_view(mp, win, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(t, win, axis=1) @ g


def ssim_and_grad(a: np.ndarray, b: np.ndarray, cfg: SsimConfig = SsimConfig()):
    """Return (ssim value, d ssim / d a).

    The gradient covers the exact valid-window formulation used by ssim();
    it feeds the perceptual term of the denoiser loss.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    _check_ssim_size(a, cfg)
    s_map, (mu_a, mu_b, a1, a2, b1, b2, g) = _ssim_terms(a, b, cfg)
    n_pos = s_map.size
    inv_b1b2 = 1.0 / (b1 * b2)
    s_over_b2 = s_map / b2
    # ds/da_i = w * (f1 + b_i * f2 + a_i * f3), accumulated over windows
    f1 = 2.0 * mu_b * (a2 - a1) * inv_b1b2 - 2.0 * mu_a * s_map / b1 + 2.0 * mu_a * s_over_b2
    f2 = 2.0 * a1 * inv_b1b2
    f3 = -2.0 * s_over_b2
    grad = (
        _spread_valid(f1, g, a.shape)
        + b * _spread_valid(f2, g, a.shape)
        + a * _spread_valid(f3, g, a.shape)
    ) / n_pos
    value = math.fsum(s_map.ravel()) / n_pos
    return value, grad


# --- batched twin of ssim_and_grad for the training loss -------------------

def _filter_valid_batch(x, g):
    win = g.size
    t = np.lib.stride_tricks.sliding_window_view(x, win, axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(t, win, axis=2) @ g


def _spread_valid_batch(m, g):
    win = g.size
    mp = np.pad(m, ((0, 0), (win - 1, win - 1), (win - 1, win - 1)))
    t = np.lib.stride_tricks.sliding_window_view(mp, win, axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(t, win, axis=2) @ g


def ssim_and_grad_batch(a, b, cfg: SsimConfig = SsimConfig()):
    """Per-image SSIM values and gradients for a (B, H, W) batch.

    Same formulation as ssim_and_grad applied image-wise; plain float64
    sums instead of compensated summation (training path).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = gaussian_window(cfg.window, cfg.gaussian_sigma)
    mu_a = _filter_valid_batch(a, g)
    mu_b = _filter_valid_batch(b, g)
    var_a = _filter_valid_batch(a * a, g) - mu_a * mu_a
    var_b = _filter_valid_batch(b * b, g) - mu_b * mu_b
    cov = _filter_valid_batch(a * b, g) - mu_a * mu_b
    c1 = (cfg.k1 * cfg.dynamic_range) ** 2
    c2 = (cfg.k2 * cfg.dynamic_range) ** 2
    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    s_map = (a1 * a2) / (b1 * b2)
    n_pos = s_map.shape[1] * s_map.shape[2]
    inv_b1b2 = 1.0 / (b1 * b2)
    s_over_b2 = s_map / b2
    f1 = 2.0 * mu_b * (a2 - a1) * inv_b1b2 - 2.0 * mu_a * s_map / b1 + 2.0 * mu_a * s_over_b2
    f2 = 2.0 * a1 * inv_b1b2
    f3 = -2.0 * s_over_b2
    grads = (
        _spread_valid_batch(f1, g)
        + b * _spread_valid_batch(f2, g)
        + a * _spread_valid_batch(f3, g)
    ) / n_pos
    values = s_map.sum(axis=(1, 2)) / n_pos
    return values, grads


# ---------------------------------------------------------------------------
# Aggregate reporting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QualityRow:
    name: str
    psnr_db: float
    ssim: float
    l1: float
    mse: float
    rmse: float
    mae: float

    def values(self) -> tuple:
        return (self.psnr_db, self.ssim, self.l1, self.mse, self.rmse, self.mae)


@dataclass(frozen=True)
class QualityReport:
    rows: tuple  # of QualityRow
    mean: QualityRow  # unweighted mean, name "mean"


def compare_pair(restored, reference, name: str = "", ssim_cfg: SsimConfig = SsimConfig()) -> QualityRow:
    mse, rmse, mae, l1 = error_stats(restored, reference)
    return QualityRow(
        name=name,
        psnr_db=psnr(restored, reference),
        ssim=ssim(restored, reference, ssim_cfg),
        l1=l1,
        mse=mse,
        rmse=rmse,
        mae=mae,
    )


def quality_report(pairs, names=None, ssim_cfg: SsimConfig = SsimConfig()) -> QualityReport:
    """Per-pair metric rows plus their unweighted mean.

    pairs is a sequence of (restored, reference) images of matching size.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("quality_report requires at least one pair")
    if names is None:
        names = [f"pair_{i:04d}" for i in range(len(pairs))]
    rows = tuple(
        compare_pair(r, t, name=name, ssim_cfg=ssim_cfg)
        for (r, t), name in zip(pairs, names)
    )
    cols = list(zip(*(row.values() for row in rows)))
    mean_vals = [math.fsum(col) / len(rows) for col in cols]
    return QualityReport(rows=rows, mean=QualityRow("mean", *mean_vals))


def write_quality_csv(report: QualityReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name",) + tuple(CSV_COLUMNS))
        for row in list(report.rows) + [report.mean]:
            writer.writerow([row.name] + [f"{v:.10g}" for v in row.values()])


def read_quality_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert tuple(header[1:]) == CSV_COLUMNS
        return [
            QualityRow(r[0], *(float(v) for v in r[1:])) for r in reader
        ]
