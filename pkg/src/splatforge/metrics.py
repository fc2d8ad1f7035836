"""Image quality metrics for comparing renders against references.

Images are float arrays in [0, 1], grayscale (H, W) or color (H, W, 3).
PSNR uses a peak of 1.0; SSIM follows the standard windowed formulation
with an 11-tap Gaussian (sigma 1.5) and constants k1 = 0.01, k2 = 0.03,
evaluated on valid windows only (no padding) and averaged over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ParameterError
from .imgio import read_image, write_color_png

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
        b = b[:, :, np.newaxis]
    if a.ndim != 3:
        raise ParameterError("images must be (H, W) or (H, W, C)")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB against a peak of 1.0.

    Identical images have zero error; that returns math.inf.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return k / k.sum()


_KERNEL = _gaussian_kernel()


def _window_mean(img: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means, cropped to fully valid windows."""
    half = SSIM_WINDOW // 2
    out = correlate1d(img, _KERNEL, axis=0, mode="constant")
    out = correlate1d(out, _KERNEL, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid windows, averaged over channels."""
    a, b = _check_pair(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ParameterError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    values = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mx = _window_mean(x)
        my = _window_mean(y)
        mxx = _window_mean(x * x)
        myy = _window_mean(y * y)
        mxy = _window_mean(x * y)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        score = ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2)
        )
        values.append(float(np.mean(score)))
    return float(np.mean(values))


def diff_overlay(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Error visualization: grayscale of `a` tinted red where images differ.

    The per-pixel L2 color difference is normalized by its maximum (an
    all-zero difference yields the plain grayscale image), then used to
    blend from gray toward pure red.
    """
    a, b = _check_pair(a, b)
    gray = np.mean(a, axis=2)
    heat = np.sqrt(np.sum((a - b) ** 2, axis=2))
    peak = float(heat.max())
    if peak > 0:
        heat = heat / peak
    out = gray[:, :, np.newaxis] * (1.0 - heat)[:, :, np.newaxis] * np.ones(3)
    out[:, :, 0] += heat
    return np.clip(out, 0.0, 1.0)


@dataclass
class QualityReport:
    """Metric results for a set of image pairs.

    per_pair holds (name, psnr, ssim) tuples. Mean and standard
    deviation of PSNR skip infinite values (identical pairs); the count
    of those is kept separately.
    """

    per_pair: list[tuple[str, float, float]] = field(default_factory=list)
    mean_psnr: float = 0.0
    std_psnr: float = 0.0
    mean_ssim: float = 0.0
    std_ssim: float = 0.0
    identical_pairs: int = 0

    def format_table(self) -> str:
        lines = [f"{'pair':<32} {'psnr':>10} {'ssim':>8}"]
        for name, p, s in self.per_pair:
            p_text = "inf" if math.isinf(p) else f"{p:.3f}"
            lines.append(f"{name:<32} {p_text:>10} {s:>8.4f}")
        lines.append(
            f"{'mean +- std':<32} {self.mean_psnr:>7.3f} +- {self.std_psnr:.3f} "
            f"{self.mean_ssim:>8.4f} +- {self.std_ssim:.4f}"
        )
        if self.identical_pairs:
            lines.append(
                f"# {self.identical_pairs} identical pair(s) excluded from the PSNR mean"
            )
        return "\n".join(lines)


def _sample_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(np.asarray(values), ddof=1))


def evaluate_pairs(pairs: Iterable[tuple[str, np.ndarray, np.ndarray]]) -> QualityReport:
    """PSNR/SSIM for named image pairs plus summary statistics."""
    report = QualityReport()
    finite_psnr = []
    ssims = []
    for name, a, b in pairs:
        p = psnr(a, b)
        s = ssim(a, b)
        report.per_pair.append((name, p, s))
        ssims.append(s)
        if math.isinf(p):
            report.identical_pairs += 1
        else:
            finite_psnr.append(p)
    if finite_psnr:
        report.mean_psnr = float(np.mean(finite_psnr))
        report.std_psnr = _sample_std(finite_psnr)
    if ssims:
        report.mean_ssim = float(np.mean(ssims))
        report.std_ssim = _sample_std(ssims)
    return report


def evaluate_directories(
    test_dir: str | Path,
    reference_dir: str | Path,
    overlay_dir: str | Path | None = None,
) -> QualityReport:
    """Compare same-named PNGs in two directories.

    Files present in only one directory are an error; an empty
    intersection is too.  With overlay_dir set, a diff visualization is
    written there per pair.
    """
    test_dir = Path(test_dir)
    reference_dir = Path(reference_dir)
    test_names = {p.name for p in test_dir.glob("*.png")}
    ref_names = {p.name for p in reference_dir.glob("*.png")}
    if test_names != ref_names:
        difference = sorted(test_names ^ ref_names)
        raise ParameterError(
            f"directories do not hold the same images; unmatched: {difference[:5]}"
        )
    if not test_names:
        raise ParameterError("no image pairs to compare")

    if overlay_dir is not None:
        overlay_dir = Path(overlay_dir)
        overlay_dir.mkdir(parents=True, exist_ok=True)

    def generate():
        for name in sorted(test_names):
            a = read_image(test_dir / name)
            b = read_image(reference_dir / name)
            if overlay_dir is not None:
                write_color_png(diff_overlay(a, b), overlay_dir / name)
            yield name, a, b

    return evaluate_pairs(generate())
