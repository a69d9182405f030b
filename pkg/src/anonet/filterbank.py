"""Leung-Malik (LM), Schmid (S) and Root Filter Set (RFS) banks.

Filters are evaluated analytically on the centered integer grid
{-(k-1)/2 .. (k-1)/2}^2 at any odd kernel size, then normalized: zero-DC
kinds (derivatives, LoG, Schmid) get their mean removed and are scaled to
unit L1 norm; plain Gaussians keep their positive DC and are only L1
scaled.  Construction is float64 and fully deterministic.

Bank compositions:
  LM : 36 first/second Gaussian derivatives (6 orientations x 3 scales,
       elongation sigma_x = 3 sigma_y) + 8 LoG + 4 Gaussians = 48
  S  : 13 isotropic Gabor-like filters cos(pi*tau*r/sigma)*exp(-r^2/2sigma^2)
       with a constant offset chosen so the discrete sum is exactly zero
  RFS: edge + bar filters at sigma in {1,2,4} x 6 orientations (36) plus an
       isotropic Gaussian and LoG at sigma=10, = 38
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .serial import read_blob, write_blob

SCHMID_PAIRS = [(2, 1), (4, 1), (4, 2), (6, 1), (6, 2), (6, 3),
                (8, 1), (8, 2), (8, 3), (10, 1), (10, 2), (10, 3), (10, 4)]

BANK_SIZES = {"LM": 48, "S": 13, "RFS": 38}


@dataclass
class FilterBank:
    family: str                      # "LM" | "S" | "RFS"
    kernel_size: int
    filters: np.ndarray              # (n, k, k) float64
    metadata: list = field(default_factory=list)

    def __len__(self):
        return self.filters.shape[0]


def _check_k(k):
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if k < 5:
        raise ValueError(f"kernel size must be >= 5, got {k}")


def _grid(k):
    half = (k - 1) // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    y, x = np.meshgrid(coords, coords, indexing="ij")
    return x, y


def normalize_filter(kernel, zero_dc=True):
    """Mean-remove (for zero-DC kinds) then scale to unit L1 norm."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if not np.any(kernel):
        raise ValueError("cannot normalize an all-zero kernel")
    if zero_dc:
        kernel = kernel - kernel.mean()
    l1 = np.abs(kernel).sum()
    if l1 == 0:
        raise ValueError("kernel is zero after mean removal")
    return kernel / l1


def _gauss1d(sigma, pts, order):
    var = sigma * sigma
    g = np.exp(-(pts * pts) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    if order == 0:
        return g
    if order == 1:
        return -g * pts / var
    return g * (pts * pts - var) / (var * var)


def _oriented_derivative(k, sigma, theta, order):
    """Gaussian derivative of given order along the rotated y axis.

    Long axis (order 0, sigma_x = 3 sigma) lies along the rotated x axis.
    """
    x, y = _grid(k)
    c, s = math.cos(theta), math.sin(theta)
    xr = c * x - s * y
    yr = s * x + c * y
    return _gauss1d(3.0 * sigma, xr, 0) * _gauss1d(sigma, yr, order)


def _gaussian2d(k, sigma):
    x, y = _grid(k)
    return np.exp(-(x * x + y * y) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def _log2d(k, sigma):
    x, y = _grid(k)
    var = sigma * sigma
    r2 = x * x + y * y
    g = np.exp(-r2 / (2.0 * var)) / (2.0 * math.pi * var)
    return g * (r2 - 2.0 * var) / (var * var)


def build_lm(k):
    """48-filter Leung-Malik bank at odd kernel size k."""
    _check_k(k)
    filters, meta = [], []
    scales = [1.0, math.sqrt(2.0), 2.0]
    orients = [i * math.pi / 6.0 for i in range(6)]
    for order, kind in ((1, "edge"), (2, "bar")):
        for sigma in scales:
            for theta in orients:
                filters.append(normalize_filter(_oriented_derivative(k, sigma, theta, order)))
                meta.append({"kind": kind, "sigma": (3.0 * sigma, sigma), "orientation": theta})
    log_sigmas = [math.sqrt(2.0) ** i for i in range(4)]
    for sigma in log_sigmas + [3.0 * s for s in log_sigmas]:
        filters.append(normalize_filter(_log2d(k, sigma)))
        meta.append({"kind": "LoG", "sigma": sigma, "orientation": None})
    for sigma in log_sigmas:
        filters.append(normalize_filter(_gaussian2d(k, sigma), zero_dc=False))
        meta.append({"kind": "Gaussian", "sigma": sigma, "orientation": None})
    return FilterBank("LM", k, np.stack(filters), meta)


def build_schmid(k):
    """13-filter rotationally invariant Schmid bank at odd kernel size k."""
    _check_k(k)
    x, y = _grid(k)
    r = np.sqrt(x * x + y * y)
    filters, meta = [], []
    for sigma, tau in SCHMID_PAIRS:
        f = np.cos(math.pi * tau * r / sigma) * np.exp(-(r * r) / (2.0 * sigma * sigma))
        f -= f.mean()    # F0 offset: zero DC on the discrete grid
        filters.append(normalize_filter(f))
        meta.append({"kind": "schmid", "sigma": float(sigma), "tau": float(tau),
                     "orientation": None})
    return FilterBank("S", k, np.stack(filters), meta)


def build_rfs(k):
    """38-filter Root Filter Set bank at odd kernel size k."""
    _check_k(k)
    filters, meta = [], []
    orients = [i * math.pi / 6.0 for i in range(6)]
    for order, kind in ((1, "edge"), (2, "bar")):
        for sigma in (1.0, 2.0, 4.0):
            for theta in orients:
                filters.append(normalize_filter(_oriented_derivative(k, sigma, theta, order)))
                meta.append({"kind": kind, "sigma": (3.0 * sigma, sigma), "orientation": theta})
    filters.append(normalize_filter(_gaussian2d(k, 10.0), zero_dc=False))
    meta.append({"kind": "Gaussian", "sigma": 10.0, "orientation": None})
    filters.append(normalize_filter(_log2d(k, 10.0)))
    meta.append({"kind": "LoG", "sigma": 10.0, "orientation": None})
    return FilterBank("RFS", k, np.stack(filters), meta)


_BUILDERS = {"LM": build_lm, "S": build_schmid, "RFS": build_rfs}


def build_bank(family, k):
    try:
        builder = _BUILDERS[family]
    except KeyError:
        raise ValueError(f"unknown filter bank family {family!r}") from None
    return builder(k)


def save_bank(bank, path):
    write_blob(path, {"type": "filterbank", "family": bank.family,
                      "kernel_size": bank.kernel_size, "metadata": bank.metadata},
               [("filters", bank.filters.astype(np.float32))])


def load_bank(path):
    meta, arrays = read_blob(path)
    if meta.get("type") != "filterbank":
        raise ValueError(f"{path}: not a filter bank file")
    return FilterBank(meta["family"], meta["kernel_size"],
                      arrays["filters"].astype(np.float64), meta["metadata"])
