"""Model introspection: intermediate activations and activation maximization.

Both leave the model weights untouched.  Activation maximization runs
gradient ascent on the input image to find the preferred stimulus of one
filter, with batch norm in inference mode so the objective depends only on
the input.  Results are not unique; runs are seeded and deterministic.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import save_png


@dataclass
class ActMaxConfig:
    layer: int
    filter: int
    steps: int = 500
    alpha: float = 1.0            # applied to the L2-normalized gradient
    seed: int = 0
    renormalize: bool = False     # re-standardize the input after each step
    input_size: tuple = (64, 64)
    max_retries: int = 5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass
class ActMaxResult:
    input: np.ndarray             # (H, W) preferred stimulus
    trace: list                   # objective value per step (including start)
    converged: bool
    seed_used: int


def intermediate_activations(model, image, layers=None):
    """Per-layer post-activation stacks for a single (H, W) image.

    Returns a list of (C, H', W') arrays in forward order; ``layers``
    selects a subset by index.
    """
    model.set_mode("eval")
    img = np.asarray(image, dtype=np.float32)[None, None, :, :]
    model.forward(img, keep_cache=True)
    stacks = [entry[3][0] for entry in model._cache]
    model._cache = None
    if layers is None:
        return stacks
    for l in layers:
        if not 0 <= l < len(stacks):
            raise IndexError(f"layer index {l} out of range (model has {len(stacks)})")
    return [stacks[l] for l in layers]


def _forward_to_layer(model, x, layer):
    """Forward through layers 0..layer inclusive, returning the cache."""
    cache = []
    out = x
    for idx in range(layer + 1):
        conv, bn, spec = model.conv_params[idx], model.bn_params[idx], model.config.layers[idx]
        conv_in = out
        z = nn.conv2d_forward(out, conv)
        bn_in = z
        if bn is not None:
            z = nn.batchnorm_forward(z, bn)
        pre_act = z
        out = nn.relu(z) if spec.activation == "relu" else nn.tanh_act(z)
        cache.append((conv_in, bn_in, pre_act, out))
    return cache


def _input_gradient(model, cache, layer, filt):
    """d(mean activation of ``filt`` at ``layer``)/d(input), via the cache."""
    act = cache[layer][3]
    g = np.zeros_like(act)
    g[:, filt] = 1.0 / (act.shape[2] * act.shape[3])
    for idx in range(layer, -1, -1):
        conv, bn, spec = model.conv_params[idx], model.bn_params[idx], model.config.layers[idx]
        conv_in, bn_in, pre_act, act_out = cache[idx]
        if spec.activation == "relu":
            g = nn.relu_backward(pre_act, g)
        else:
            g = nn.tanh_backward(act_out, g)
        if bn is not None:
            # inference mode: the running stats are constants
            inv = 1.0 / np.sqrt(bn.running_var + bn.epsilon)
            g = (g * (bn.gamma * inv)[None, :, None, None]).astype(np.float32)
        g, _, _ = nn.conv2d_backward(conv_in, conv, g)
    return g


def activation_objective(model, image, layer, filt):
    """Mean activation of one filter for one (H, W) image (BN inference)."""
    img = np.asarray(image, dtype=np.float32)[None, None, :, :]
    cache = _forward_to_layer(model, img, layer)
    return float(cache[layer][3][0, filt].mean())


def activation_maximization(model, cfg):
    """Gradient ascent on the input maximizing one filter's mean activation.

    The input starts from seeded uniform noise in [0, 1); each step adds
    alpha times the L2-normalized input gradient.  A zero starting
    gradient triggers a retry with a fresh seed; the run is flagged
    non-converged when the objective improves by less than 1e-6 over its
    final 10% of steps.
    """
    if not 0 <= cfg.layer < len(model.conv_params):
        raise IndexError(f"layer index {cfg.layer} out of range")
    if not 0 <= cfg.filter < model.conv_params[cfg.layer].out_channels:
        raise IndexError(f"filter index {cfg.filter} out of range")
    model.set_mode("eval")
    h, w = cfg.input_size
    seed = cfg.seed
    for attempt in range(cfg.max_retries + 1):
        rng = np.random.default_rng(seed)
        x = rng.random((1, 1, h, w), dtype=np.float64).astype(np.float32)
        cache = _forward_to_layer(model, x, cfg.layer)
        g = _input_gradient(model, cache, cfg.layer, cfg.filter)
        if np.linalg.norm(g) > 0:
            break
        seed += 1
    else:
        return ActMaxResult(x[0, 0], [float(cache[cfg.layer][3][0, cfg.filter].mean())],
                            converged=False, seed_used=seed)
    trace = [float(cache[cfg.layer][3][0, cfg.filter].mean())]
    for _step in range(cfg.steps):
        norm = np.linalg.norm(g.astype(np.float64))
        if norm == 0:
            break
        x = x + (cfg.alpha / norm) * g
        if cfg.renormalize:
            std = x.std()
            if std > 0:
                x = ((x - x.mean()) / std).astype(np.float32)
        cache = _forward_to_layer(model, x, cfg.layer)
        trace.append(float(cache[cfg.layer][3][0, cfg.filter].mean()))
        g = _input_gradient(model, cache, cfg.layer, cfg.filter)
    tail = max(1, (len(trace) - 1) // 10)
    converged = (trace[-1] - trace[-tail - 1]) >= 1e-6
    return ActMaxResult(x[0, 0].astype(np.float32), trace, converged, seed)


def save_grid(stack, path, pad=1):
    """Tile a (n, H, W) stack into one grayscale PNG, row-major order.

    Each tile is min-max normalized independently; the per-tile ranges are
    recorded in a JSON sidecar next to the image.
    """
    stack = np.asarray(stack, dtype=np.float64)
    n, h, w = stack.shape
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    canvas = np.zeros((rows * (h + pad) + pad, cols * (w + pad) + pad))
    ranges = []
    for i in range(n):
        tile = stack[i]
        lo, hi = float(tile.min()), float(tile.max())
        ranges.append({"index": i, "min": lo, "max": hi})
        norm = (tile - lo) / (hi - lo) if hi > lo else np.zeros_like(tile)
        r, c = divmod(i, cols)
        y0 = pad + r * (h + pad)
        x0 = pad + c * (w + pad)
        canvas[y0:y0 + h, x0:x0 + w] = norm
    save_png(canvas, path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"order": "row-major", "colormap": "grayscale min-max per tile",
                   "tiles": ranges}, fh, indent=2, sort_keys=True)
    return path


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "objective"])
        for i, v in enumerate(trace):
            writer.writerow([i, repr(float(v))])
