"""DEMNET assembly, whole-model forward/backward, and checkpoint persistence.

The stack built by `build_demnet`:

    stem:    conv(stem_filters)+relu, conv(stem_filters)+relu, maxpool
    blocks:  for each filter count F in the ladder:
                 conv(F)+relu, conv(F)+relu, batchnorm, maxpool
    head:    flatten, dropout(r0), dense(d0)+relu, dense(d1)+relu,
             dropout(r1), dense(d2)+relu, dense(num_classes)

Convolutions are 3x3 (configurable), stride 1, same-padded; pools are 2x2
stride 2, so a 128x128 input walks 128 -> 64 -> 32 -> 16 -> 8 -> 4. Any pool
stage whose output extent would drop below 1 is a build error, unless
`adaptive_pooling` is set, in which case that stage is skipped (feature-map
inputs from an external extractor can be spatially tiny).

Checkpoint file format (version 1, little-endian throughout):

    magic   b"DMNT"
    u32     version (= 1)
    u32     config block byte length
    bytes   config block: UTF-8 "key=value" lines, keys sorted; covers every
            DemnetConfig field plus seed and epochs_trained
    then, one record per tensor:
    u8      rank
    rank*u64  dims
    payload   row-major float32 IEEE-754

Tensor order: every trainable parameter in layer order (conv/dense weights
then bias, batchnorm gamma then beta), followed by running_mean and
running_var for each batchnorm layer in layer order. Version 1 stores
float32 only; saving a float64 model raises.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from . import layers as L
from .tensor import RngState, Tensor, he_uniform

CHECKPOINT_MAGIC = b"DMNT"
CHECKPOINT_VERSION = 1


class DemnetBuildError(ValueError):
    """A config whose shape walk cannot be realised."""


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointBadMagic(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass(frozen=True)
class DemnetConfig:
    in_channels: int = 1
    in_height: int = 128
    in_width: int = 128
    stem_filters: int = 16
    block_filters: tuple[int, ...] = (32, 64, 128, 256)
    kernel_size: int = 3
    dense_widths: tuple[int, ...] = (512, 128, 64)
    dropout_rates: tuple[float, ...] = (0.25, 0.25)
    num_classes: int = 4
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    adaptive_pooling: bool = False

    def validate(self):
        for name in ("in_channels", "in_height", "in_width", "stem_filters",
                     "kernel_size", "num_classes"):
            if getattr(self, name) < 1:
                raise DemnetBuildError(f"{name} must be >= 1, got {getattr(self, name)}")
        if len(self.block_filters) < 1 or any(f < 1 for f in self.block_filters):
            raise DemnetBuildError(f"bad block filter ladder {self.block_filters}")
        if len(self.dense_widths) != 3 or any(d < 1 for d in self.dense_widths):
            raise DemnetBuildError(
                f"dense_widths must be three positive values, got {self.dense_widths}")
        if len(self.dropout_rates) != 2 or any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise DemnetBuildError(
                f"dropout_rates must be two values in [0, 1), got {self.dropout_rates}")
        if self.kernel_size % 2 != 1:
            raise DemnetBuildError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.bn_eps <= 0:
            raise DemnetBuildError(f"bn_eps must be > 0, got {self.bn_eps}")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise DemnetBuildError(f"bn_momentum must be in [0, 1), got {self.bn_momentum}")


# --- layer descriptors ------------------------------------------------------

@dataclass
class _FlattenCache(L._Cache):
    in_shape: tuple


class _Layer:
    name: str

    def forward(self, model, x, rng):
        raise NotImplementedError

    def backward(self, model, cache, dout):
        """Returns (dx, [(param_index, grad), ...])."""
        raise NotImplementedError


class _Conv(_Layer):
    def __init__(self, name, w_idx, b_idx, spec):
        self.name, self.w_idx, self.b_idx, self.spec = name, w_idx, b_idx, spec

    def forward(self, model, x, rng):
        return L.conv2d_forward(x, model.params[self.w_idx],
                                model.params[self.b_idx], self.spec)

    def backward(self, model, cache, dout):
        dx, dw, db = L.conv2d_backward(cache, dout)
        return dx, [(self.w_idx, dw), (self.b_idx, db)]


class _Relu(_Layer):
    def __init__(self, name):
        self.name = name

    def forward(self, model, x, rng):
        return L.relu_forward(x)

    def backward(self, model, cache, dout):
        return L.relu_backward(cache, dout), []


class _Pool(_Layer):
    def __init__(self, name, spec):
        self.name, self.spec = name, spec

    def forward(self, model, x, rng):
        return L.maxpool_forward(x, self.spec)

    def backward(self, model, cache, dout):
        return L.maxpool_backward(cache, dout), []


class _BatchNorm(_Layer):
    def __init__(self, name, state_idx, gamma_idx, beta_idx):
        self.name, self.state_idx = name, state_idx
        self.gamma_idx, self.beta_idx = gamma_idx, beta_idx

    def forward(self, model, x, rng):
        return L.batchnorm_forward(x, model.bn_states[self.state_idx], model.mode)

    def backward(self, model, cache, dout):
        dx, dgamma, dbeta = L.batchnorm_backward(cache, dout)
        return dx, [(self.gamma_idx, dgamma), (self.beta_idx, dbeta)]


class _Dropout(_Layer):
    def __init__(self, name, rate):
        self.name, self.rate = name, rate

    def forward(self, model, x, rng):
        return L.dropout_forward(x, self.rate, rng, model.mode)

    def backward(self, model, cache, dout):
        return L.dropout_backward(cache, dout), []


class _Flatten(_Layer):
    def __init__(self, name):
        self.name = name

    def forward(self, model, x, rng):
        return x.reshape(x.shape[0], -1), _FlattenCache(in_shape=x.shape)

    def backward(self, model, cache, dout):
        cache._consume()
        return dout.reshape(cache.in_shape), []


class _Dense(_Layer):
    def __init__(self, name, w_idx, b_idx):
        self.name, self.w_idx, self.b_idx = name, w_idx, b_idx

    def forward(self, model, x, rng):
        return L.dense_forward(x, model.params[self.w_idx], model.params[self.b_idx])

    def backward(self, model, cache, dout):
        dx, dw, db = L.dense_backward(cache, dout)
        return dx, [(self.w_idx, dw), (self.b_idx, db)]


# --- model ------------------------------------------------------------------

@dataclass
class Model:
    """Realised layer stack. Mutable single-owner during training; switch to
    infer mode and stop mutating before sharing across threads.

    Batchnorm gamma/beta arrays appear both in `params` and inside their
    BatchNormState; optimizers must update parameters in place to keep the
    two views identical.
    """
    config: DemnetConfig
    layers: list
    params: list
    param_names: list
    bn_states: list
    seed: int
    dtype: np.dtype
    mode: str = "train"
    epochs_trained: int = 0

    def set_mode(self, mode: str):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        self.mode = mode

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params))


@dataclass
class ForwardResult:
    logits: Tensor
    probs: Tensor
    loss: float | None
    caches: list
    xent_cache: L.SoftmaxXentCache | None


def build_demnet(config: DemnetConfig, seed: int = 42, dtype=np.float32) -> Model:
    """Build the stack, validating the pooling shape walk, and initialise
    weights He-style from one seeded stream (layer order, weights only)."""
    config.validate()
    dtype = np.dtype(dtype)
    rng = RngState(seed)
    k = config.kernel_size
    pad = k // 2
    conv_spec = L.ConvSpec(stride=1, pad=pad)
    pool_spec = L.PoolSpec(window=2, stride=2)

    model_layers: list[_Layer] = []
    params: list[Tensor] = []
    param_names: list[str] = []
    bn_states: list[L.BatchNormState] = []

    def add_param(name, arr):
        params.append(arr)
        param_names.append(name)
        return len(params) - 1

    def add_conv(stage, i, c_in, c_out):
        w = he_uniform((c_out, c_in, k, k), fan_in=c_in * k * k, rng=rng, dtype=dtype)
        b = np.zeros(c_out, dtype=dtype)
        w_idx = add_param(f"{stage}.conv{i}.w", w)
        b_idx = add_param(f"{stage}.conv{i}.b", b)
        model_layers.append(_Conv(f"{stage}.conv{i}", w_idx, b_idx, conv_spec))
        model_layers.append(_Relu(f"{stage}.relu{i}"))
        return c_out

    def add_pool(stage, h, w):
        oh = L.pool_output_extent(h, pool_spec.window, pool_spec.stride)
        ow = L.pool_output_extent(w, pool_spec.window, pool_spec.stride)
        if oh < 1 or ow < 1:
            if config.adaptive_pooling:
                return h, w  # stage dropped
            raise DemnetBuildError(
                f"{stage} max-pool underflow: extent {h}x{w} with window "
                f"{pool_spec.window} stride {pool_spec.stride} gives {oh}x{ow}")
        model_layers.append(_Pool(f"{stage}.pool", pool_spec))
        return oh, ow

    c, h, w = config.in_channels, config.in_height, config.in_width
    c = add_conv("stem", 1, c, config.stem_filters)
    c = add_conv("stem", 2, c, config.stem_filters)
    h, w = add_pool("stem", h, w)

    for bi, f in enumerate(config.block_filters, start=1):
        stage = f"block{bi}"
        c = add_conv(stage, 1, c, f)
        c = add_conv(stage, 2, c, f)
        state = L.BatchNormState.create(c, momentum=config.bn_momentum,
                                        eps=config.bn_eps, dtype=dtype)
        bn_states.append(state)
        g_idx = add_param(f"{stage}.bn.gamma", state.gamma)
        b_idx = add_param(f"{stage}.bn.beta", state.beta)
        model_layers.append(_BatchNorm(f"{stage}.bn", len(bn_states) - 1, g_idx, b_idx))
        h, w = add_pool(stage, h, w)

    model_layers.append(_Flatten("head.flatten"))
    width = c * h * w

    def add_dense(i, d_in, d_out, relu):
        wgt = he_uniform((d_in, d_out), fan_in=d_in, rng=rng, dtype=dtype)
        b = np.zeros(d_out, dtype=dtype)
        w_idx = add_param(f"head.dense{i}.w", wgt)
        b_idx = add_param(f"head.dense{i}.b", b)
        model_layers.append(_Dense(f"head.dense{i}", w_idx, b_idx))
        if relu:
            model_layers.append(_Relu(f"head.relu{i}"))
        return d_out

    d0, d1, d2 = config.dense_widths
    model_layers.append(_Dropout("head.dropout1", config.dropout_rates[0]))
    width = add_dense(1, width, d0, relu=True)
    width = add_dense(2, width, d1, relu=True)
    model_layers.append(_Dropout("head.dropout2", config.dropout_rates[1]))
    width = add_dense(3, width, d2, relu=True)
    add_dense(4, width, config.num_classes, relu=False)

    return Model(config=config, layers=model_layers, params=params,
                 param_names=param_names, bn_states=bn_states,
                 seed=int(seed), dtype=dtype)


def model_forward(model: Model, batch: Tensor, labels=None,
                  rng: RngState | None = None) -> ForwardResult:
    """Run the stack. With labels, also computes softmax cross-entropy; the
    returned caches feed model_backward. Train-mode dropout draws from `rng`."""
    expected = (model.config.in_channels, model.config.in_height, model.config.in_width)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
        raise ValueError(
            f"batch shape {batch.shape} does not match model input "
            f"(N, {expected[0]}, {expected[1]}, {expected[2]})")
    x = batch
    caches = []
    for layer in model.layers:
        x, cache = layer.forward(model, x, rng)
        caches.append(cache)
    logits = x
    if labels is not None:
        probs, loss, xent = L.softmax_xent_forward(logits, labels)
        return ForwardResult(logits, probs, loss, caches, xent)
    return ForwardResult(logits, L.softmax_probs(logits), None, caches, None)


def model_backward(model: Model, result: ForwardResult,
                   loss_grad: float = 1.0) -> list:
    """Chain-rule walk back through the stack; returns one gradient per entry
    of model.params, in order. Requires a result produced with labels."""
    if result.xent_cache is None:
        raise ValueError("model_backward needs a forward result computed with labels")
    grads: list = [None] * len(model.params)
    dout = L.softmax_xent_backward(result.xent_cache, loss_grad)
    for layer, cache in zip(reversed(model.layers), reversed(result.caches)):
        dout, param_grads = layer.backward(model, cache, dout)
        for idx, g in param_grads:
            grads[idx] = g
    assert all(g is not None for g in grads)
    return grads


def predict(model: Model, batch: Tensor) -> np.ndarray:
    """Argmax class per sample (ties go to the lowest index). Infer mode only."""
    if model.mode != "infer":
        raise ValueError("predict requires the model in infer mode")
    result = model_forward(model, batch)
    return result.probs.argmax(axis=1)


# --- checkpoint persistence ---------------------------------------------------

_TUPLE_FIELDS = {"block_filters": int, "dense_widths": int, "dropout_rates": float}


def _config_to_block(model: Model) -> bytes:
    items = {}
    for f in fields(DemnetConfig):
        v = getattr(model.config, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        items[f.name] = v
    items["seed"] = model.seed
    items["epochs_trained"] = model.epochs_trained
    lines = [f"{k}={items[k]}" for k in sorted(items)]
    return "\n".join(lines).encode("utf-8")


def _config_from_block(block: bytes) -> tuple[DemnetConfig, int, int]:
    known = {f.name for f in fields(DemnetConfig)} | {"seed", "epochs_trained"}
    raw = {}
    for line in block.decode("utf-8").splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        if key not in known:
            raise CheckpointError(f"unknown config key {key!r} in checkpoint")
        raw[key] = value
    missing = known - raw.keys()
    if missing:
        raise CheckpointError(f"checkpoint config missing keys: {sorted(missing)}")
    kwargs = {}
    for f in fields(DemnetConfig):
        v = raw[f.name]
        if f.name in _TUPLE_FIELDS:
            conv = _TUPLE_FIELDS[f.name]
            kwargs[f.name] = tuple(conv(x) for x in v.split(",")) if v else ()
        elif f.type == "bool" or isinstance(getattr(DemnetConfig, f.name), bool):
            kwargs[f.name] = v == "True"
        elif isinstance(getattr(DemnetConfig, f.name), float):
            kwargs[f.name] = float(v)
        else:
            kwargs[f.name] = int(v)
    return DemnetConfig(**kwargs), int(raw["seed"]), int(raw["epochs_trained"])


def _checkpoint_tensors(model: Model) -> list:
    tensors = list(model.params)
    for state in model.bn_states:
        tensors.append(state.running_mean)
        tensors.append(state.running_var)
    return tensors


def save_checkpoint(model: Model, path):
    """Write the version-1 checkpoint; float32 models only."""
    if model.dtype != np.float32:
        raise ValueError(
            f"checkpoint format stores float32; model dtype is {model.dtype}")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    block = _config_to_block(model)
    out += struct.pack("<I", len(block))
    out += block
    for arr in _checkpoint_tensors(model):
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def load_checkpoint(path) -> Model:
    """Rebuild the model from a checkpoint; round trip is bit-exact."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointBadMagic(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (block_len,) = struct.unpack("<I", r.take(4))
    config, seed, epochs = _config_from_block(r.take(block_len))

    model = build_demnet(config, seed=seed, dtype=np.float32)
    model.epochs_trained = epochs
    for arr in _checkpoint_tensors(model):
        (rank,) = struct.unpack("<B", r.take(1))
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        if dims != arr.shape:
            raise CheckpointError(
                f"tensor shape {dims} in file does not match expected {arr.shape}")
        payload = r.take(4 * int(np.prod(dims)))
        arr[...] = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if r.pos != len(r.data):
        raise CheckpointError(
            f"{len(r.data) - r.pos} trailing bytes after last tensor")
    return model


def hybrid_config(feature_shape: tuple[int, ...], base: DemnetConfig | None = None) -> DemnetConfig:
    """Config for feature-container input: rank-1 feature rows become
    (D, 1, 1) inputs; spatial maps keep (C, H, W). Pool stages that would
    underflow are dropped via adaptive_pooling."""
    base = base or DemnetConfig()
    if len(feature_shape) == 1:
        c, h, w = feature_shape[0], 1, 1
    elif len(feature_shape) == 3:
        c, h, w = feature_shape
    else:
        raise DemnetBuildError(
            f"feature rows must be rank 1 or 3, got shape {feature_shape}")
    return replace(base, in_channels=int(c), in_height=int(h), in_width=int(w),
                   adaptive_pooling=True)
