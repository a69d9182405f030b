"""From-scratch neural-net primitives on (N, C, H, W) float32 arrays.

Everything here is hand-derived: same-size 2-D convolution (im2col fast
path backed by the compiled/fallback kernels), batch normalization,
ReLU/tanh, MSE and cross-entropy losses, Adadelta, He initialization and a
central-finite-difference gradient checker.  Reductions (losses, batch
statistics, convolution accumulation) run in float64 so results are
deterministic and tight against float64 reference computations; tensors
are stored as float32.
"""

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Raised when array shapes or layer configuration are inconsistent."""


class ConvParams:
    """Parameters of one convolution layer.

    weights: (out_ch, in_ch, k, k) float32, bias: (out_ch,) float32.
    Padding is fixed to (k-1)/2 so stride-1 layers preserve spatial dims.
    """

    def __init__(self, weights, bias, stride=1, trainable=True):
        weights = np.asarray(weights, dtype=np.float32)
        if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
            raise ShapeError(f"conv weights must be (out, in, k, k), got {weights.shape}")
        k = weights.shape[2]
        if k % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {k}")
        if stride < 1:
            raise ShapeError(f"stride must be >= 1, got {stride}")
        self.weights = weights
        self.bias = np.asarray(bias, dtype=np.float32).reshape(weights.shape[0])
        self.stride = int(stride)
        self.trainable = bool(trainable)

    @property
    def kernel_size(self):
        return self.weights.shape[2]

    @property
    def pad(self):
        return (self.kernel_size - 1) // 2

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]


class BatchNormParams:
    """Per-channel affine batch normalization state.

    Running statistics start uninitialized; the first training-mode pass
    seeds them with the batch statistics, later passes blend with
    ``momentum``.  ``mode`` is "train" or "eval".
    """

    def __init__(self, channels, epsilon=1e-8, momentum=0.9):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.gamma = np.ones(channels, dtype=np.float32)
        self.beta = np.zeros(channels, dtype=np.float32)
        self.running_mean = None
        self.running_var = None
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.mode = "train"

    @property
    def channels(self):
        return self.gamma.shape[0]


def _check_input(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {x.shape}")
    return x


def conv_output_shape(h, w, k, stride):
    pad = (k - 1) // 2
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def conv2d_forward(x, p):
    """Zero-padded convolution; stride 1 preserves spatial dims exactly."""
    x = _check_input(x)
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"input has {c} channels, layer expects {p.in_channels}")
    k, s, pad = p.kernel_size, p.stride, p.pad
    oh, ow = conv_output_shape(h, w, k, s)
    wmat = p.weights.reshape(p.out_channels, c * k * k).astype(np.float64)
    bias = p.bias.astype(np.float64)[:, None]
    x64 = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((n, p.out_channels, oh, ow), dtype=np.float32)
    cols = np.empty((c * k * k, oh * ow), dtype=np.float64)
    prod = np.empty((p.out_channels, oh * ow), dtype=np.float64)
    for i in range(n):
        _kernels.im2col(x64[i], k, s, pad, cols)
        np.matmul(wmat, cols, out=prod)
        prod += bias
        out[i] = prod.reshape(p.out_channels, oh, ow)
    return out


def conv2d_backward(x, p, grad_out):
    """Chain-rule gradients of conv2d_forward w.r.t. input, weights, bias."""
    x = _check_input(x)
    grad_out = _check_input(grad_out)
    n, c, h, w = x.shape
    k, s, pad = p.kernel_size, p.stride, p.pad
    oh, ow = conv_output_shape(h, w, k, s)
    if grad_out.shape != (n, p.out_channels, oh, ow):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward "
            f"output {(n, p.out_channels, oh, ow)}")
    wmat = p.weights.reshape(p.out_channels, c * k * k).astype(np.float64)
    x64 = np.ascontiguousarray(x, dtype=np.float64)
    g64 = np.ascontiguousarray(grad_out, dtype=np.float64)
    grad_w = np.zeros((p.out_channels, c * k * k), dtype=np.float64)
    grad_x = np.empty((n, c, h, w), dtype=np.float32)
    cols = np.empty((c * k * k, oh * ow), dtype=np.float64)
    gcols = np.empty((c * k * k, oh * ow), dtype=np.float64)
    for i in range(n):
        gmat = g64[i].reshape(p.out_channels, oh * ow)
        _kernels.im2col(x64[i], k, s, pad, cols)
        grad_w += gmat @ cols.T
        np.matmul(wmat.T, gmat, out=gcols)
        grad_x[i] = _kernels.col2im(gcols, c, h, w, k, s, pad)
    grad_bias = g64.sum(axis=(0, 2, 3))
    return (grad_x,
            grad_w.reshape(p.weights.shape).astype(np.float32),
            grad_bias.astype(np.float32))


def batchnorm_forward(x, p):
    """Normalize per channel over (N, H, W); affine scale/shift by gamma/beta.

    Training mode uses batch statistics (population variance) and updates
    the running estimates; eval mode uses the running estimates.
    """
    x = _check_input(x)
    if x.shape[1] != p.channels:
        raise ShapeError(f"input has {x.shape[1]} channels, BN expects {p.channels}")
    x64 = x.astype(np.float64)
    if p.mode == "train":
        mean = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        if p.running_mean is None:
            p.running_mean = mean.copy()
            p.running_var = var.copy()
        else:
            m = p.momentum
            p.running_mean = m * p.running_mean + (1.0 - m) * mean
            p.running_var = m * p.running_var + (1.0 - m) * var
    else:
        if p.running_mean is None:
            raise RuntimeError("batch norm used in eval mode before any training pass")
        mean, var = p.running_mean, p.running_var
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x64 - mean[None, :, None, None]) * inv[None, :, None, None]
    out = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]
    return out.astype(np.float32)


def batchnorm_backward(x, p, grad_out):
    """Gradients of training-mode batchnorm_forward (stats recomputed from x)."""
    x = _check_input(x)
    grad_out = _check_input(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError("grad_out shape must match input shape")
    x64 = x.astype(np.float64)
    g64 = grad_out.astype(np.float64)
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x64.mean(axis=(0, 2, 3))
    var = x64.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xc = x64 - mean[None, :, None, None]
    xhat = xc * inv[None, :, None, None]

    grad_gamma = (g64 * xhat).sum(axis=(0, 2, 3))
    grad_beta = g64.sum(axis=(0, 2, 3))

    gxhat = g64 * p.gamma.astype(np.float64)[None, :, None, None]
    sum_g = gxhat.sum(axis=(0, 2, 3))
    sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))
    grad_x = (inv[None, :, None, None] / m) * (
        m * gxhat
        - sum_g[None, :, None, None]
        - xhat * sum_gx[None, :, None, None]
    )
    return (grad_x.astype(np.float32),
            grad_gamma.astype(np.float32),
            grad_beta.astype(np.float32))


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(np.float32)


def tanh_act(x):
    return np.tanh(x)


def tanh_backward(y, grad_out):
    """Backward through tanh given the forward *output* y."""
    return (grad_out * (1.0 - np.asarray(y, dtype=np.float64) ** 2)).astype(np.float32)


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. pred."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    n = pred.size
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.sum(diff * diff) / n)
    grad = (2.0 / n) * diff
    return loss, grad.astype(np.float32)


def cross_entropy_loss(pred, target, clamp=1e-7):
    """Binary cross entropy for pred in (0,1) against target in {0,1}."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    tvals = np.unique(target)
    if not np.all(np.isin(tvals, (0.0, 1.0))):
        raise ValueError(f"targets must be 0/1, got values {tvals[:5]}")
    n = pred.size
    y = target.astype(np.float64)
    yhat = np.clip(pred.astype(np.float64), clamp, 1.0 - clamp)
    loss = float(-np.sum(y * np.log(yhat) + (1.0 - y) * np.log1p(-yhat)) / n)
    grad = ((yhat - y) / (yhat * (1.0 - yhat))) / n
    # the clamp zeroes the gradient outside the open interval
    grad = np.where((pred <= clamp) | (pred >= 1.0 - clamp), 0.0, grad)
    return loss, grad.astype(np.float32)


class AdadeltaState:
    """Per-parameter E[g^2] / E[dx^2] accumulators, lazily shaped."""

    def __init__(self, rho=0.95, epsilon=1e-6):
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.rho = float(rho)
        self.epsilon = float(epsilon)
        self.acc_grad = {}
        self.acc_delta = {}


def adadelta_step(params, grads, state):
    """One Adadelta update, in place, over a list of parameter arrays.

    ``params[i]`` may be None to skip a slot (frozen parameter).
    Accumulator math runs in float64; the applied delta is cast to the
    parameter dtype.
    """
    rho, eps = state.rho, state.epsilon
    for idx, (p, g) in enumerate(zip(params, grads)):
        if p is None or g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        eg2 = state.acc_grad.get(idx)
        edx2 = state.acc_delta.get(idx)
        if eg2 is None:
            eg2 = np.zeros(p.shape, dtype=np.float64)
            edx2 = np.zeros(p.shape, dtype=np.float64)
        eg2 = rho * eg2 + (1.0 - rho) * g * g
        delta = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 = rho * edx2 + (1.0 - rho) * delta * delta
        state.acc_grad[idx] = eg2
        state.acc_delta[idx] = edx2
        p += delta.astype(p.dtype)
    return params


def he_init(shape, fan_in, rng):
    """Zero-mean normal with variance 2/fan_in (float32)."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


def unit_normal_init(shape, rng):
    """Standard normal init (mean 0, variance 1), float32."""
    return rng.standard_normal(shape).astype(np.float32)


def grad_check(f, x, analytic_grad, epsilon=1e-4):
    """Max relative error between analytic_grad and central differences of f.

    ``f`` maps an array like ``x`` to a scalar.  Relative error uses
    max(|a|, |n|, 1e-8) as denominator per coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = f(x)
        flat[i] = orig - epsilon
        fm = f(x)
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    # treat coordinates where both sides vanish as exact
    both_small = (np.abs(analytic) < 1e-10) & (np.abs(numeric) < 1e-10)
    rel = np.abs(analytic - numeric) / denom
    rel[both_small] = 0.0
    return float(rel.max()) if rel.size else 0.0
