"""Declarative model builder, forward/backward pass and weight files.

Covers the 12 filter-bank-seeded network configurations, the 9 ablation
configurations and the large baseline network they were pruned from.  All
networks are fully convolutional: stride-1 layers preserve spatial size,
the final layer is a 1x1 convolution with tanh producing the segmentation
scores.  Hidden layers are conv -> batch norm -> ReLU.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .filterbank import BANK_SIZES, build_bank
from .serial import BlobError, read_blob, write_blob

WEIGHT_FORMAT_VERSION = 1

# name -> (bank family, kernel size, stack length, first layer trainable)
TABLE1_CONFIGS = {
    "LMExp1": ("LM", 7, 48, False),
    "LMExp2": ("LM", 7, 48, True),
    "LMExp3": ("LM", 11, 48, False),
    "LMExp4": ("LM", 11, 48, True),
    "RFSExp1": ("RFS", 7, 38, False),
    "RFSExp2": ("RFS", 7, 38, True),
    "RFSExp3": ("RFS", 11, 38, False),
    "RFSExp4": ("RFS", 11, 38, True),
    "SExp1": ("S", 7, 13, False),
    "SExp2": ("S", 7, 13, True),
    "SExp3": ("S", 11, 13, False),
    "SExp4": ("S", 11, 13, True),
}

# name -> (first-layer stride of blocks 1 and 2, layers per block,
#          kernel size per block, channel depth per block)
TABLE2_CONFIGS = {
    "Exp1": (2, 3, (11, 7, 3), (32, 64, 128)),
    "Exp2": (2, 2, (11, 7, 3), (32, 64, 128)),
    "Exp3": (1, 1, (11, 7, 3), (32, 64, 128)),
    "Exp4": (1, 1, (11, 7, 3), (32, 32, 32)),
    "Exp5": (1, 1, (11, 7, 3), (8, 32, 32)),
    "Exp6": (1, 1, (3, 3, 3), (32, 32, 32)),
    "Exp7": (1, 1, (7, 7, 7), (32, 32, 32)),
    "Exp8": (1, 1, (11, 11, 11), (32, 32, 32)),
    "Exp9": (1, 1, (3, 7, 11), (32, 32, 32)),
}


class ConfigError(ValueError):
    """Raised for unknown configuration names or mismatched filter banks."""


@dataclass
class LayerSpec:
    kernel: int
    out_channels: int
    stride: int = 1
    activation: str = "relu"         # "relu" | "tanh"
    batchnorm: bool = True
    trainable: bool = True
    init: str = "he"                 # "he" | "unit_normal" | "filterbank"

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class ModelConfig:
    name: str
    layers: list
    provenance: str = "custom"       # "table1" | "table2" | "baseline" | "custom"
    bank_family: str = None          # set for filter-bank-seeded configs

    def to_dict(self):
        return {
            "name": self.name,
            "provenance": self.provenance,
            "bank_family": self.bank_family,
            "layers": [vars(spec).copy() for spec in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], [LayerSpec(**spec) for spec in d["layers"]],
                   d.get("provenance", "custom"), d.get("bank_family"))


def _segmentation_layer():
    return LayerSpec(kernel=1, out_channels=1, activation="tanh", batchnorm=False)


def table1_config(name, trainable=None):
    """Filter-bank-seeded network config; ``trainable`` overrides the table."""
    try:
        family, k, n, table_trainable = TABLE1_CONFIGS[name]
    except KeyError:
        raise ConfigError(f"unknown configuration {name!r}") from None
    if trainable is None:
        trainable = table_trainable
    layers = [
        LayerSpec(kernel=k, out_channels=n, trainable=trainable, init="filterbank"),
        LayerSpec(kernel=7, out_channels=32),
        LayerSpec(kernel=3, out_channels=32),
        _segmentation_layer(),
    ]
    return ModelConfig(name, layers, "table1", bank_family=family)


def table2_config(name):
    """Ablation network config: three conv blocks plus the segmentation layer."""
    try:
        stride, per_block, kernels, depths = TABLE2_CONFIGS[name]
    except KeyError:
        raise ConfigError(f"unknown configuration {name!r}") from None
    layers = []
    for block, (k, depth) in enumerate(zip(kernels, depths)):
        for i in range(per_block):
            s = stride if (i == 0 and block < 2) else 1
            layers.append(LayerSpec(kernel=k, out_channels=depth, stride=s))
    layers.append(_segmentation_layer())
    return ModelConfig(name, layers, "table2")


def baseline_config():
    """The large network the ablations started from (Exp1 topology)."""
    cfg = table2_config("Exp1")
    return ModelConfig("baseline", cfg.layers, "baseline")


class Model:
    """A materialized network: per-layer conv + optional batch-norm params."""

    def __init__(self, config, conv_params, bn_params):
        self.config = config
        self.conv_params = conv_params
        self.bn_params = bn_params           # entry is None where batchnorm=False
        self._cache = None

    @property
    def name(self):
        return self.config.name

    def set_mode(self, mode):
        """Switch every batch-norm layer between "train" and "eval"."""
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        for bn in self.bn_params:
            if bn is not None:
                bn.mode = mode

    def forward(self, x, keep_cache=False):
        """Run the network on an (N, 1, H, W) batch of images."""
        x = np.asarray(x, dtype=np.float32)
        if x.ndim != 4 or x.shape[1] != 1:
            raise nn.ShapeError(f"expected single-channel (N, 1, H, W) input, got {x.shape}")
        cache = []
        out = x
        for conv, bn, spec in zip(self.conv_params, self.bn_params, self.config.layers):
            conv_in = out
            z = nn.conv2d_forward(out, conv)
            bn_in = z
            if bn is not None:
                z = nn.batchnorm_forward(z, bn)
            pre_act = z
            out = nn.relu(z) if spec.activation == "relu" else nn.tanh_act(z)
            cache.append((conv_in, bn_in, pre_act, out))
        self._cache = cache if keep_cache else None
        return out

    def backward(self, grad_out):
        """Backprop a loss gradient; returns per-layer (grad sets) and grad wrt input.

        Requires the preceding ``forward(..., keep_cache=True)``.  Gradients
        are returned (not accumulated on the params): a list per layer of
        dicts with keys weights/bias and, when batch-normed, gamma/beta.
        """
        if self._cache is None:
            raise RuntimeError("backward requires forward(..., keep_cache=True) first")
        grads = [None] * len(self.conv_params)
        g = np.asarray(grad_out, dtype=np.float32)
        for idx in range(len(self.conv_params) - 1, -1, -1):
            conv, bn, spec = self.conv_params[idx], self.bn_params[idx], self.config.layers[idx]
            conv_in, bn_in, pre_act, act_out = self._cache[idx]
            if spec.activation == "relu":
                g = nn.relu_backward(pre_act, g)
            else:
                g = nn.tanh_backward(act_out, g)
            layer_grads = {}
            if bn is not None:
                g, layer_grads["gamma"], layer_grads["beta"] = nn.batchnorm_backward(bn_in, bn, g)
            g, layer_grads["weights"], layer_grads["bias"] = nn.conv2d_backward(conv_in, conv, g)
            grads[idx] = layer_grads
        return grads, g

    def trainable_parameters(self):
        """Flat list of (array, path) for every parameter the optimizer may update."""
        out = []
        for idx, (conv, bn, spec) in enumerate(
                zip(self.conv_params, self.bn_params, self.config.layers)):
            if spec.trainable:
                out.append((conv.weights, (idx, "weights")))
                out.append((conv.bias, (idx, "bias")))
            if bn is not None:
                out.append((bn.gamma, (idx, "gamma")))
                out.append((bn.beta, (idx, "beta")))
        return out

    def count_parameters(self):
        """Conv weights + biases + BN gamma/beta; running stats excluded."""
        total = 0
        for conv, bn in zip(self.conv_params, self.bn_params):
            total += conv.weights.size + conv.bias.size
            if bn is not None:
                total += bn.gamma.size + bn.beta.size
        return int(total)


def build_model(config, bank=None, seed=0, filter_init="filterbank"):
    """Materialize a config.  ``bank`` is required for filter-bank configs.

    ``filter_init`` can be set to "he" or "unit_normal" to bypass seeding
    (sensitivity analysis); layers declared init="unit_normal" use a
    standard normal, everything else defaults to He initialization.
    """
    rng = np.random.default_rng(seed)
    conv_params, bn_params = [], []
    in_ch = 1
    for spec in config.layers:
        shape = (spec.out_channels, in_ch, spec.kernel, spec.kernel)
        fan_in = in_ch * spec.kernel * spec.kernel
        if spec.init == "filterbank" and filter_init == "filterbank":
            if bank is None:
                raise ConfigError(f"config {config.name!r} requires a filter bank")
            if config.bank_family and bank.family != config.bank_family:
                raise ConfigError(
                    f"config {config.name!r} expects a {config.bank_family} bank, "
                    f"got {bank.family}")
            if bank.kernel_size != spec.kernel or len(bank) != spec.out_channels:
                raise ConfigError(
                    f"bank {bank.family} {bank.kernel_size}x{bank.kernel_size}x{len(bank)} "
                    f"does not match layer {spec.kernel}x{spec.kernel}x{spec.out_channels}")
            weights = bank.filters.astype(np.float32)[:, None, :, :]
        elif spec.init == "unit_normal":
            weights = nn.unit_normal_init(shape, rng)
        else:
            weights = nn.he_init(shape, fan_in, rng)
        conv_params.append(nn.ConvParams(weights, np.zeros(spec.out_channels),
                                         stride=spec.stride, trainable=spec.trainable))
        bn_params.append(nn.BatchNormParams(spec.out_channels) if spec.batchnorm else None)
        in_ch = spec.out_channels
    return Model(config, conv_params, bn_params)


def build_anonet(name, bank, seed=0, trainable=None):
    """Build one of the 12 filter-bank configurations seeded from ``bank``."""
    return build_model(table1_config(name, trainable=trainable), bank=bank, seed=seed)


def build_ablation(name, seed=0):
    """Build one of the 9 ablation configurations (Exp1..Exp9)."""
    return build_model(table2_config(name), seed=seed)


def build_baseline(seed=0):
    return build_model(baseline_config(), seed=seed)


def build_by_name(name, seed=0, bank=None, trainable=None):
    """Resolve any known config name; builds the bank on demand for table 1."""
    if name in TABLE1_CONFIGS:
        if bank is None:
            family, k, _, _ = TABLE1_CONFIGS[name]
            bank = build_bank(family, k)
        return build_anonet(name, bank, seed=seed, trainable=trainable)
    if name in TABLE2_CONFIGS:
        return build_ablation(name, seed=seed)
    if name == "baseline":
        return build_baseline(seed=seed)
    raise ConfigError(f"unknown configuration {name!r}")


def save_weights(model, path):
    """Write weights (and BN running stats when present) to a container file."""
    arrays = []
    for idx, (conv, bn) in enumerate(zip(model.conv_params, model.bn_params)):
        arrays.append((f"layer{idx}.weights", conv.weights))
        arrays.append((f"layer{idx}.bias", conv.bias))
        if bn is not None:
            arrays.append((f"layer{idx}.gamma", bn.gamma))
            arrays.append((f"layer{idx}.beta", bn.beta))
            if bn.running_mean is not None:
                arrays.append((f"layer{idx}.running_mean", bn.running_mean.astype(np.float64)))
                arrays.append((f"layer{idx}.running_var", bn.running_var.astype(np.float64)))
    meta = {"type": "weights", "format_version": WEIGHT_FORMAT_VERSION,
            "config": model.config.to_dict()}
    write_blob(path, meta, arrays)


def load_weights(path, into=None):
    """Load a weight file; returns a Model.

    With ``into`` set, the arrays are loaded into that model and every
    shape must match (a SExp1 file does not fit an LMExp1 model).
    """
    meta, arrays = read_blob(path)
    if meta.get("type") != "weights":
        raise BlobError(f"{path}: not a weight file")
    if meta.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise BlobError(f"{path}: unsupported format version {meta.get('format_version')}")
    config = ModelConfig.from_dict(meta["config"])
    if into is None:
        conv_params, bn_params = [], []
        in_ch = 1
        for idx, spec in enumerate(config.layers):
            expected = (spec.out_channels, in_ch, spec.kernel, spec.kernel)
            weights = arrays[f"layer{idx}.weights"]
            if weights.shape != expected:
                raise BlobError(f"{path}: layer {idx} weights {weights.shape} != {expected}")
            conv_params.append(nn.ConvParams(weights, arrays[f"layer{idx}.bias"],
                                             stride=spec.stride, trainable=spec.trainable))
            if spec.batchnorm:
                bn = nn.BatchNormParams(spec.out_channels)
                bn.gamma = arrays[f"layer{idx}.gamma"].astype(np.float32)
                bn.beta = arrays[f"layer{idx}.beta"].astype(np.float32)
                if f"layer{idx}.running_mean" in arrays:
                    bn.running_mean = arrays[f"layer{idx}.running_mean"].astype(np.float64)
                    bn.running_var = arrays[f"layer{idx}.running_var"].astype(np.float64)
                bn_params.append(bn)
            else:
                bn_params.append(None)
            in_ch = spec.out_channels
        return Model(config, conv_params, bn_params)
    for idx, (conv, bn) in enumerate(zip(into.conv_params, into.bn_params)):
        weights = arrays.get(f"layer{idx}.weights")
        if weights is None or weights.shape != conv.weights.shape:
            got = None if weights is None else weights.shape
            raise BlobError(
                f"{path}: layer {idx} weights {got} do not fit model "
                f"{into.name!r} expecting {conv.weights.shape}")
        conv.weights[...] = weights
        conv.bias[...] = arrays[f"layer{idx}.bias"]
        if bn is not None:
            bn.gamma[...] = arrays[f"layer{idx}.gamma"]
            bn.beta[...] = arrays[f"layer{idx}.beta"]
            if f"layer{idx}.running_mean" in arrays:
                bn.running_mean = arrays[f"layer{idx}.running_mean"].astype(np.float64)
                bn.running_var = arrays[f"layer{idx}.running_var"].astype(np.float64)
    return into
