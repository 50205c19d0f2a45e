"""Self-supervised deep equilibrium reconstruction for Cartesian parallel MRI."""

from . import baselines, datagen, deq, denoiser, linops, metrics, sampling, trainer, verify
from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "datagen",
    "deq",
    "denoiser",
    "linops",
    "metrics",
    "sampling",
    "trainer",
    "verify",
    "kernel_backend",
    "__version__",
]
