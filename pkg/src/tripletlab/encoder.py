"""Desk-scale trainable encoder: a plain MLP with hand-written backprop.

The encoder is a stack of affine layers with an elementwise nonlinearity
between them (none after the last). A shape-identical copy updated by
exponential moving average serves as the stop-gradient target network.
Optimization is SGD with momentum under a cosine-annealed learning rate.

Parameters checkpoint to a little-endian binary file: an ASCII magic tag,
format version, layer count, activation name, per-layer dimensions, then
the raw float64 weights and biases row-major. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatchError,
    OutOfRangeError,
    ParseError,
    StaleCacheError,
)

CHECKPOINT_MAGIC = b"TTLABENC"
CHECKPOINT_VERSION = 1

ACTIVATIONS = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass
class EncoderParams:
    """Affine layers (weight out x in, bias out) plus the activation name."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise OutOfRangeError(f"unknown activation {self.activation!r}")
        if not self.layers:
            raise DimensionMismatchError("encoder needs at least one layer")
        prev_out = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatchError(f"layer {i} weight/bias shapes disagree")
            if prev_out is not None and w.shape[1] != prev_out:
                raise DimensionMismatchError(
                    f"layer {i} expects input {w.shape[1]}, previous outputs {prev_out}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise OutOfRangeError(f"layer {i} has non-finite parameters")
            prev_out = w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def shapes(self) -> tuple:
        return tuple(w.shape for w, _ in self.layers)

    def copy(self) -> "EncoderParams":
        return EncoderParams([(w.copy(), b.copy()) for w, b in self.layers], self.activation)


def init_encoder(layer_dims, activation: str = "tanh", seed: int = 0) -> EncoderParams:
    """Random encoder with the given dimension chain, e.g. [32, 64, 64, 16].

    Weights are scaled by 1/sqrt(fan_in); deterministic in the seed.
    """
    dims = list(layer_dims)
    if len(dims) < 2:
        raise DimensionMismatchError("layer_dims needs at least input and output")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        b = np.zeros(fan_out)
        layers.append((w, b))
    return EncoderParams(layers, activation)


@dataclass
class ForwardCache:
    """Per-layer inputs and preactivations from one forward call."""

    inputs: list[np.ndarray]       # a_{l-1} for each layer
    preactivations: list[np.ndarray]
    param_shapes: tuple


def forward(params: EncoderParams, inputs) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on an n x input_dim matrix; returns embeddings + cache."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionMismatchError(
            f"inputs must be n x {params.input_dim}, got {x.shape}"
        )
    act, _ = ACTIVATIONS[params.activation]
    layer_inputs, preacts = [], []
    a = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        layer_inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        a = z if i == last else act(z)
    return a, ForwardCache(layer_inputs, preacts, params.shapes())


def backward(params: EncoderParams, cache: ForwardCache, grad_embeddings):
    """Parameter gradients for a loss whose embedding gradient is given.

    Returns a list of (grad_w, grad_b) matching ``params.layers``.
    """
    if cache.param_shapes != params.shapes():
        raise StaleCacheError("cache was produced by a different network shape")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    n, d = cache.inputs[0].shape[0], params.output_dim
    if g.shape != (n, d):
        raise StaleCacheError(f"grad_embeddings must be {n} x {d}, got {g.shape}")
    _, dact = ACTIVATIONS[params.activation]
    grads = [None] * len(params.layers)
    delta = g
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (delta.T @ cache.inputs[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * dact(cache.preactivations[i - 1])
    return grads


@dataclass
class TargetNetwork:
    """EMA copy of the online encoder; provides stop-gradient embeddings."""

    params: EncoderParams
    momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise OutOfRangeError("target momentum must lie in [0, 1]")


def ema_update(target: TargetNetwork, online: EncoderParams) -> TargetNetwork:
    """target <- momentum * target + (1 - momentum) * online, elementwise."""
    if target.params.shapes() != online.shapes():
        raise DimensionMismatchError("target and online networks differ in shape")
    mm = target.momentum
    layers = [
        (mm * tw + (1.0 - mm) * ow, mm * tb + (1.0 - mm) * ob)
        for (tw, tb), (ow, ob) in zip(target.params.layers, online.layers)
    ]
    return TargetNetwork(EncoderParams(layers, online.activation), mm)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise OutOfRangeError(f"step {step} outside 0..{total_steps}")
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class OptimizerState:
    """SGD-momentum buffers and the cosine schedule position."""

    velocities: list[tuple[np.ndarray, np.ndarray]]
    base_lr: float
    momentum_coeff: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.momentum_coeff < 1.0:
            raise OutOfRangeError("momentum_coeff must lie in [0, 1)")
        if self.weight_decay < 0:
            raise OutOfRangeError("weight_decay must be nonnegative")
        if self.base_lr <= 0:
            raise OutOfRangeError("base_lr must be positive")


def init_optimizer(params: EncoderParams, base_lr: float, momentum_coeff: float = 0.9,
                   weight_decay: float = 0.0, total_steps: int = 1) -> OptimizerState:
    velocities = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    return OptimizerState(velocities, base_lr, momentum_coeff, weight_decay,
                          step=0, total_steps=total_steps)


def sgd_momentum_step(params: EncoderParams, grads, state: OptimizerState):
    """One update: v <- mu*v + g + wd*p; p <- p - lr(step)*v. Returns new objects."""
    if len(grads) != len(params.layers):
        raise DimensionMismatchError("gradient list does not match layer count")
    lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    new_layers, new_velocities = [], []
    for (w, b), (gw, gb), (vw, vb) in zip(params.layers, grads, state.velocities):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise DimensionMismatchError("gradient shapes do not match parameters")
        vw = state.momentum_coeff * vw + gw + state.weight_decay * w
        vb = state.momentum_coeff * vb + gb + state.weight_decay * b
        new_layers.append((w - lr * vw, b - lr * vb))
        new_velocities.append((vw, vb))
    new_params = EncoderParams(new_layers, params.activation)
    new_state = replace(state, velocities=new_velocities, step=state.step + 1)
    return new_params, new_state


def save_checkpoint(path, params: EncoderParams) -> None:
    """Write parameters in the versioned little-endian binary format."""
    act = params.activation.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.layers)))
        fh.write(struct.pack("<I", len(act)))
        fh.write(act)
        for w, _ in params.layers:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in params.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> EncoderParams:
    """Read a checkpoint written by :func:`save_checkpoint`, bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ParseError("not an encoder checkpoint (bad magic)")
    off = 8
    version, layer_count = struct.unpack_from("<II", data, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    (act_len,) = struct.unpack_from("<I", data, off)
    off += 4
    activation = data[off:off + act_len].decode("ascii")
    off += act_len
    dims = []
    for _ in range(layer_count):
        out_dim, in_dim = struct.unpack_from("<II", data, off)
        off += 8
        dims.append((out_dim, in_dim))
    layers = []
    for out_dim, in_dim in dims:
        w = np.frombuffer(data, dtype="<f8", count=out_dim * in_dim, offset=off)
        off += out_dim * in_dim * 8
        b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=off)
        off += out_dim * 8
        layers.append((w.reshape(out_dim, in_dim).copy(), b.copy()))
    if off != len(data):
        raise ParseError("checkpoint has trailing bytes")
    return EncoderParams(layers, activation)
