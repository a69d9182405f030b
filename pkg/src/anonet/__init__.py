"""Compact filter-bank-seeded fully convolutional network for weakly
supervised anomaly segmentation in textured surfaces, from scratch on
numpy with optional compiled convolution kernels."""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
