"""molex: mixture of low-rank experts on a frozen vision transformer.

Library layout:

    tensor    float64 autodiff core
    optim     AdamW
    rng       counter-based seeded streams
    fourier   radix-2 FFT
    vit       backbone, adapter attachment, parameter accounting
    mole      LoRA experts, router, balance losses, classifier head
    forge     synthetic corpus + blur/jpeg augmentation
    metrics   bce, average precision, threshold tuning
    spectra   averaged high-pass FFT fingerprints
    archive   binary weight container
    trainer   training/eval/ablation orchestration
    cli       the `molex` command
"""

from . import archive, forge, fourier, metrics, mole, optim, rng, spectra, tensor, trainer, vit
from .tensor import Tensor, no_grad

__all__ = ["archive", "forge", "fourier", "metrics", "mole", "optim", "rng",
           "spectra", "tensor", "trainer", "vit", "Tensor", "no_grad"]

__version__ = "0.1.0"
