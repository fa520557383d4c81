"""Average FFT magnitude spectra of high-pass filtered image collections.

The residual image (pixel minus a local low-pass estimate) strips scene
content and leaves the periodic traces a generator imprints; averaging the
log magnitudes over a collection makes the fingerprint stand out. The
default low-pass estimate is a 3x3 median; a Gaussian alternative is
selectable and recorded in the output metadata.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from . import forge, fourier


def highpass(image: np.ndarray, mode: str = "median") -> np.ndarray:
    """Residual after subtracting a local low-pass estimate, then the DC term."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return np.stack([highpass(ch, mode) for ch in image])
    if mode == "median":
        low = median_filter(image, size=3, mode="reflect")
    elif mode == "gaussian":
        low = forge.gaussian_blur(image, 1.0)
    else:
        raise ValueError(f"unknown highpass mode {mode!r}")
    residual = image - low
    return residual - residual.mean()


@dataclass
class SpectrumMap:
    """DC-centered grid of averaged log magnitudes."""

    values: np.ndarray
    count: int
    filter_mode: str

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("a spectrum map needs at least one source image")
        if not np.isfinite(self.values).all():
            raise ValueError("spectrum map contains non-finite values")


def _to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image.mean(axis=0) if image.ndim == 3 else image


def avg_fft_spectrum(images, filter_mode: str = "median") -> SpectrumMap:
    """Mean over images of log(1 + |FFT2(highpass(img))|), DC at center."""
    grays = [_to_gray(img) for img in images]
    if not grays:
        raise ValueError("no images given")
    shape = grays[0].shape
    for g in grays:
        if g.shape != shape:
            raise ValueError(f"image size mismatch: {g.shape} vs {shape}")
    stack = np.stack([np.log1p(np.abs(fourier.fft2(highpass(g, filter_mode)))) for g in grays])
    return SpectrumMap(values=fourier.center_dc(stack.mean(axis=0)),
                       count=len(grays), filter_mode=filter_mode)


def peak_background_ratio(spectrum: SpectrumMap, offset: tuple[int, int],
                          exclude: int = 2, window: int = 11) -> float:
    """Magnitude at a frequency offset from DC over the local background median.

    The map stores log(1 + m); the ratio is taken on the de-logged
    magnitudes so it reads as a plain energy ratio.
    """
    values = np.expm1(spectrum.values)
    h, w = values.shape
    cy, cx = h // 2, w // 2
    py, px = (cy + offset[0]) % h, (cx + offset[1]) % w
    half = window // 2
    ys = [(py + dy) % h for dy in range(-half, half + 1)]
    xs = [(px + dx) % w for dx in range(-half, half + 1)]
    patch = values[np.ix_(ys, xs)]
    mask = np.ones_like(patch, dtype=bool)
    mask[half - exclude:half + exclude + 1, half - exclude:half + exclude + 1] = False
    background = float(np.median(patch[mask]))
    return float(values[py, px]) / max(background, 1e-12)


def export_spectrum(spectrum: SpectrumMap, out_prefix: str) -> tuple[str, str]:
    """Write <prefix>.pgm (min-max normalized) and <prefix>.csv (raw values)."""
    values = spectrum.values
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        levels = np.round((values - lo) / (hi - lo) * 255.0)
    else:
        levels = np.zeros_like(values)
    gray = levels.astype(np.uint8)
    h, w = gray.shape
    pgm_path = out_prefix + ".pgm"
    csv_path = out_prefix + ".csv"
    try:
        with open(pgm_path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode())
            f.write(gray.tobytes())
        with open(csv_path, "w") as f:
            f.write(f"# filter={spectrum.filter_mode} count={spectrum.count}\n")
            for row in values:
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing spectrum to {out_prefix!r}: {exc}") from exc
    return pgm_path, csv_path


def read_spectrum_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            rows.append([float(v) for v in line.strip().split(",")])
    return np.array(rows, dtype=np.float64)
