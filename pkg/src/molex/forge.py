"""Deterministic synthetic corpus: natural-statistics "real" images and
"fake" counterparts carrying injected generator-style artifacts.

Real images are 1/f-spectrum noise fields with randomized per-channel color
statistics. A fake image is the real image of the same seed plus one
artifact field, so each pair differs only by the injected trace:

  grid      additive sinusoidal grid of period p (axis-aligned FFT peaks)
  checker   square-wave checkerboard of period p (Nyquist-corner energy)
  lowfreq   isotropic noise boost under a heavy-tailed low-frequency envelope
  ring      narrow annulus of frequency-domain energy at radius f0

Blur/JPEG-style augmentations live here as well, since training applies
them to batches drawn from this corpus.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import fourier, rng

REAL_ID = "real"


@dataclass(frozen=True)
class GeneratorSpec:
    """One artifact family with its parameters."""

    kind: str                 # grid | checker | lowfreq | ring
    period: int = 4           # pixels per cycle (grid, checker)
    sigma: float = 2.0        # spatial blob scale (lowfreq)
    radius: float = 6.0       # frequency-bin radius (ring)
    amp: float = 0.1

    @property
    def generator_id(self) -> str:
        if self.kind == "grid":
            return f"grid{self.period}"
        if self.kind == "checker":
            return f"checker{self.period}"
        if self.kind == "lowfreq":
            return f"lowfreq{self.sigma:g}"
        if self.kind == "ring":
            return f"ring{self.radius:g}"
        raise ValueError(f"unknown generator kind {self.kind!r}")


_DEFAULT_AMPS = {"grid": 0.1, "checker": 0.12, "lowfreq": 0.3, "ring": 0.15}


def parse_generator(token: str) -> GeneratorSpec:
    """Parse ids like grid4, checker2, lowfreq, ring, optionally ':amp'."""
    token = token.strip()
    if ":" in token:
        token, amp_text = token.split(":", 1)
        amp = float(amp_text)
    else:
        amp = None
    for kind in ("grid", "checker", "lowfreq", "ring"):
        if token.startswith(kind):
            tail = token[len(kind):]
            spec = GeneratorSpec(kind=kind, amp=amp if amp is not None else _DEFAULT_AMPS[kind])
            if tail:
                value = float(tail)
                if kind in ("grid", "checker"):
                    spec = replace(spec, period=int(value))
                elif kind == "lowfreq":
                    spec = replace(spec, sigma=value)
                else:
                    spec = replace(spec, radius=value)
            return spec
    raise ValueError(f"unknown generator id {token!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 64
    channels: int = 3


def _check_size(size: int) -> None:
    if size < 2 or size & (size - 1):
        raise ValueError(f"image size must be a power of two for FFT synthesis, got {size}")


def _radius_grid(size: int) -> np.ndarray:
    f = np.minimum(np.arange(size), size - np.arange(size)).astype(np.float64)
    return np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)


def _pink_field(size: int, gen: np.random.Generator) -> np.ndarray:
    """Zero-mean unit-variance field with a 1/f amplitude spectrum."""
    r = _radius_grid(size)
    amp = np.zeros_like(r)
    nonzero = r > 0
    amp[nonzero] = 1.0 / r[nonzero]
    spec = (gen.normal(size=(size, size)) + 1j * gen.normal(size=(size, size))) * amp
    fld = fourier.ifft2(spec).real
    return fld / fld.std()


def gen_real(spec: SyntheticSpec, seed: int) -> np.ndarray:
    """Synthesize one real-class image, shape [C, H, W], values in [0, 1]."""
    _check_size(spec.image_size)
    gen = rng.stream(seed, "real")
    luminance = _pink_field(spec.image_size, gen)
    img = np.empty((spec.channels, spec.image_size, spec.image_size))
    for c in range(spec.channels):
        mix = gen.uniform(0.6, 0.9)
        detail = _pink_field(spec.image_size, gen)
        fld = mix * luminance + (1.0 - mix) * detail
        fld /= fld.std()
        mean = gen.uniform(0.4, 0.6)
        contrast = gen.uniform(0.08, 0.16)
        img[c] = mean + contrast * fld
    return np.clip(img, 0.0, 1.0)


def artifact_field(generator: GeneratorSpec, size: int, seed: int) -> np.ndarray:
    """The injected trace, shape [H, W], roughly zero-mean.

    Every family draws a per-image strength jitter in [0.7, 1.3]: real
    generators do not stamp their fingerprint at one fixed energy, and the
    spread keeps a detector from keying on a single amplitude.
    """
    _check_size(size)
    gen = rng.stream(seed, "artifact", generator.generator_id)
    scale = generator.amp * gen.uniform(0.7, 1.3)
    if generator.kind == "grid":
        phase_x, phase_y = gen.uniform(0.0, 2.0 * np.pi, size=2)
        coords = np.arange(size)
        wave_x = np.cos(2.0 * np.pi * coords / generator.period + phase_x)
        wave_y = np.cos(2.0 * np.pi * coords / generator.period + phase_y)
        return scale * 0.5 * (wave_x[None, :] + wave_y[:, None])
    if generator.kind == "checker":
        sign = 1.0 if gen.uniform() < 0.5 else -1.0
        half = max(generator.period // 2, 1)
        cell = (np.arange(size) // half) % 2
        board = np.where((cell[:, None] + cell[None, :]) % 2 == 0, 1.0, -1.0)
        return sign * scale * board
    if generator.kind == "lowfreq":
        # heavy-tailed isotropic envelope: power peaks at DC and falls off as
        # r^-4, so the boost is dominantly low-frequency but touches every
        # orientation at every band
        r = _radius_grid(size)
        rho = size / (2.0 * np.pi * generator.sigma)
        envelope = 1.0 / (1.0 + (r / rho) ** 2)
        envelope[0, 0] = 0.0
        spec = (gen.normal(size=(size, size)) + 1j * gen.normal(size=(size, size))) * envelope
        fld = fourier.ifft2(spec).real
        return scale * fld / fld.std()
    if generator.kind == "ring":
        r = _radius_grid(size)
        mask = (np.abs(r - generator.radius) <= 1.5).astype(np.float64)
        spec = (gen.normal(size=(size, size)) + 1j * gen.normal(size=(size, size))) * mask
        fld = fourier.ifft2(spec).real
        return scale * fld / fld.std()
    raise ValueError(f"unknown generator kind {generator.kind!r}")


def gen_fake(spec: SyntheticSpec, generator: GeneratorSpec, seed: int) -> np.ndarray:
    """Real base of the same seed plus the artifact, clipped to [0, 1]."""
    base = gen_real(spec, seed)
    trace = artifact_field(generator, spec.image_size, seed)
    return np.clip(base + trace[None, :, :], 0.0, 1.0)


# post-processing ----------------------------------------------------

def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    moved = np.moveaxis(arr, axis, -1)
    pad = [(0, 0)] * (moved.ndim - 1) + [(radius, radius)]
    padded = np.pad(moved, pad, mode="reflect")
    out = np.zeros_like(moved)
    width = moved.shape[-1]
    for i, w in enumerate(kernel):
        out += w * padded[..., i:i + width]
    return np.moveaxis(out, -1, axis)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3 sigma), reflect padding."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    image = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return image.copy()
    kernel = _gauss_kernel(sigma)
    out = _blur_axis(image, kernel, -1)
    return _blur_axis(out, kernel, -2)


# Standard luminance quantization table (applied to every channel; the
# chroma path and entropy coding are deliberately omitted).
_QUANT_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def _dct8_matrix() -> np.ndarray:
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    mat = np.cos(np.pi * (2 * n + 1) * k / 16.0)
    mat[0] *= np.sqrt(1.0 / 8.0)
    mat[1:] *= np.sqrt(2.0 / 8.0)
    return mat


_DCT8 = _dct8_matrix()


def quant_table(quality: int) -> np.ndarray:
    """Scale the base table by the standard quality mapping, floor 1."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((_QUANT_BASE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def jpeg_like(image: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT quantization artifact of JPEG at the given quality.

    Each channel independently: 8x8 DCT, divide by the scaled luminance
    table, round, dequantize, inverse DCT. Sizes not divisible by 8 are
    reflect-padded and cropped back.
    """
    table = quant_table(quality)
    image = np.asarray(image, dtype=np.float64)
    single = image.ndim == 2
    channels = image[None] if single else image
    c, h, w = channels.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    if pad_h or pad_w:
        channels = np.pad(channels, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    hh, ww = channels.shape[1:]
    blocks = channels.reshape(c, hh // 8, 8, ww // 8, 8).transpose(0, 1, 3, 2, 4)
    shifted = blocks * 255.0 - 128.0
    coef = np.einsum("kn,...nm,lm->...kl", _DCT8, shifted, _DCT8)
    # AC coefficients quantize by the scaled table; DC passes through, so a
    # constant block survives any quality (blockiness comes from the AC path).
    dc = coef[..., 0, 0].copy()
    coef = np.round(coef / table) * table
    coef[..., 0, 0] = dc
    pixels = np.einsum("kn,...kl,lm->...nm", _DCT8, coef, _DCT8)
    out = (pixels + 128.0) / 255.0
    out = out.transpose(0, 1, 3, 2, 4).reshape(c, hh, ww)
    out = out[:, :h, :w]
    out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


# batches and augmentation -------------------------------------------

@dataclass
class Batch:
    images: np.ndarray                       # [B, C, H, W] in [0, 1]
    labels: np.ndarray                       # [B] of {0, 1}
    provenance: list = field(default_factory=list)   # (generator_id, seed) per item


def augment(batch: Batch, p: float, gen: np.random.Generator,
            sigma_range: tuple[float, float] = (0.0, 3.0),
            quality_range: tuple[int, int] = (30, 100)) -> Batch:
    """Independently blur and re-quantize each image with probability p.

    Four draws happen per image regardless of the gates, so the stream
    stays aligned whatever gets applied.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    images = batch.images.copy()
    for i in range(len(images)):
        gate_blur = gen.uniform()
        sigma = gen.uniform(*sigma_range)
        gate_jpeg = gen.uniform()
        quality = int(gen.integers(quality_range[0], quality_range[1] + 1))
        if gate_blur < p and sigma > 0:
            images[i] = gaussian_blur(images[i], sigma)
        if gate_jpeg < p:
            images[i] = jpeg_like(images[i], quality)
    return Batch(images=images, labels=batch.labels.copy(), provenance=list(batch.provenance))


# on-disk corpus ------------------------------------------------------

def write_ppm(path: str, image: np.ndarray) -> None:
    """8-bit binary PPM (P6)."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    c, h, w = arr.shape
    if c != 3:
        raise ValueError(f"PPM wants 3 channels, got {c}")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.transpose(1, 2, 0).tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Read a P6 PPM back to float [3, H, W] in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic != b"P6" or maxval != 255:
        raise ValueError(f"{path}: expected 8-bit P6, got {magic!r} maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


@dataclass
class CorpusItem:
    path: str
    label: int
    generator_id: str
    seed: int


class Corpus:
    """One split: manifest rows plus images preloaded as uint8."""

    def __init__(self, items: list[CorpusItem], pixels: list[np.ndarray]):
        self.items = items
        self._pixels = pixels
        self.labels = np.array([it.label for it in items], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.items)

    def image(self, index: int) -> np.ndarray:
        return self._pixels[index].astype(np.float64) / 255.0

    def gather(self, indices) -> Batch:
        images = np.stack([self.image(i) for i in indices])
        labels = self.labels[list(indices)]
        provenance = [(self.items[i].generator_id, self.items[i].seed) for i in indices]
        return Batch(images=images, labels=labels, provenance=provenance)

    def generator_ids(self) -> list[str]:
        seen = []
        for it in self.items:
            if it.generator_id != REAL_ID and it.generator_id not in seen:
                seen.append(it.generator_id)
        return seen


def write_split(directory: str, spec: SyntheticSpec, n_real: int,
                fakes: list[tuple[GeneratorSpec, int]], seed: int, tag: str) -> str:
    """Write one split directory (PPM files + manifest.tsv); returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    rows = []
    for i in range(n_real):
        item_seed = rng.derive_key(seed, tag, "real", i) % (2 ** 31)
        name = f"real_{i:05d}.ppm"
        write_ppm(os.path.join(directory, name), gen_real(spec, item_seed))
        rows.append((name, 0, REAL_ID, item_seed))
    for generator, count in fakes:
        gid = generator.generator_id
        for i in range(count):
            item_seed = rng.derive_key(seed, tag, gid, i) % (2 ** 31)
            name = f"{gid}_{i:05d}.ppm"
            write_ppm(os.path.join(directory, name), gen_fake(spec, generator, item_seed))
            rows.append((name, 1, gid, item_seed))
    manifest = os.path.join(directory, "manifest.tsv")
    with open(manifest, "w") as f:
        f.write("path\tlabel\tgenerator_id\tseed\n")
        for name, label, gid, item_seed in rows:
            f.write(f"{name}\t{label}\t{gid}\t{item_seed}\n")
    return manifest


def load_split(directory: str) -> Corpus:
    manifest = os.path.join(directory, "manifest.tsv")
    items = []
    pixels = []
    with open(manifest) as f:
        header = f.readline()
        if not header.startswith("path"):
            raise ValueError(f"{manifest}: missing header row")
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            path, label, gid, item_seed = line.split("\t")
            full = os.path.join(directory, path)
            items.append(CorpusItem(path=full, label=int(label), generator_id=gid,
                                    seed=int(item_seed)))
            raw = read_ppm(full)
            pixels.append(np.clip(np.round(raw * 255.0), 0, 255).astype(np.uint8))
    return Corpus(items, pixels)


def build_corpus(root: str, spec: SyntheticSpec,
                 train_generators: list[GeneratorSpec],
                 test_generators: list[GeneratorSpec],
                 train_size: int, val_size: int, test_size: int, seed: int) -> dict:
    """Train/val/test tree; test fakes come from generators unseen in training."""
    def shares(total: int, gens: list[GeneratorSpec]):
        n_fake = total // 2
        base = n_fake // len(gens)
        counts = [base] * len(gens)
        for k in range(n_fake - base * len(gens)):
            counts[k] += 1
        return total - n_fake, list(zip(gens, counts))

    paths = {}
    for split, total, gens in (("train", train_size, train_generators),
                               ("val", val_size, train_generators),
                               ("test", test_size, test_generators)):
        n_real, fakes = shares(total, gens)
        directory = os.path.join(root, split)
        write_split(directory, spec, n_real, fakes, seed, split)
        paths[split] = directory
    return paths
