"""Layers, the Adam optimizer and the binary checkpoint format."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .tensor import Tensor

CHECKPOINT_VERSION = 1


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, shape))


class Module:
    """Holds parameters and child modules; ``named_parameters`` is deterministic."""

    training = True

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def train(self, mode=True):
        for m in self._modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def _modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value._modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._modules()

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data = value.copy()


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        self.weight = uniform_fan_in(rng, (in_features, out_features), in_features)
        self.bias = parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x):
        return tn.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-12):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, padding="same"):
        fan_in = in_channels * kernel_size
        self.weight = uniform_fan_in(rng, (out_channels, in_channels, kernel_size), fan_in)
        self.bias = parameter(np.zeros(out_channels))
        self.padding = padding

    def __call__(self, x):
        return tn.conv1d(x, self.weight, self.bias, self.padding)


def scaled_dot_product_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    d = q.shape[-1]
    # scaling q is cheaper than scaling the n x n score matrix
    scores = tn.matmul(tn.mul(q, 1.0 / math.sqrt(d)), tn.swapaxes(k, -1, -2))
    weights = tn.softmax(scores, axis=-1)
    return tn.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Self-attention with H heads of width ``head_dim`` and output map W_o."""

    def __init__(self, d_model, n_heads, head_dim, rng):
        self.n_heads = n_heads
        self.head_dim = head_dim
        inner = n_heads * head_dim
        self.query = Linear(d_model, inner, rng)
        self.key = Linear(d_model, inner, rng)
        self.value = Linear(d_model, inner, rng)
        self.out = Linear(inner, d_model, rng)
        self.last_weights = None

    def _split(self, x):
        b, n, _ = x.shape
        return tn.transpose(tn.reshape(x, (b, n, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x):
        b, n, _ = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        heads, weights = scaled_dot_product_attention(q, k, v)
        self.last_weights = weights.data
        merged = tn.reshape(tn.transpose(heads, (0, 2, 1, 3)), (b, n, self.n_heads * self.head_dim))
        return self.out(merged)


# ------------------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class MissingGradient(RuntimeError):
    pass


def adam_step(params, state):
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradient(f"parameter {i} with shape {p.shape} has no gradient; call backward() first")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self):
        adam_step(self.params, self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ------------------------------------------------------------------------------------
# checkpoints
#
# A checkpoint is a directory with two files:
#   params.bin    every parameter's float64 values, little-endian, C order,
#                 concatenated in manifest order with no padding
#   manifest.txt  "key = value" header lines, then one line per parameter:
#                 "param <name> <dim0>x<dim1>... <offset> <count>"
#                 (offset and count are in float64 elements)


def save_checkpoint(directory, state, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format_version = {CHECKPOINT_VERSION}", "dtype = float64-le"]
    for key, value in (meta or {}).items():
        lines.append(f"{key} = {value}")
    offset = 0
    chunks = []
    for name, value in state.items():
        value = np.ascontiguousarray(value, dtype="<f8")
        shape = "x".join(str(s) for s in value.shape) or "scalar"
        lines.append(f"param {name} {shape} {offset} {value.size}")
        chunks.append(value.tobytes())
        offset += value.size
    (directory / "params.bin").write_bytes(b"".join(chunks))
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory):
    """Return ``(state, meta)`` from a checkpoint directory."""
    directory = Path(directory)
    raw = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8")
    state, meta = OrderedDict(), {}
    for line_no, line in enumerate((directory / "manifest.txt").read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("param "):
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"manifest line {line_no}: malformed parameter entry {line!r}")
            _, name, shape, offset, count = parts
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            offset, count = int(offset), int(count)
            if offset + count > raw.size or int(np.prod(dims)) != count:
                raise ValueError(f"manifest line {line_no}: entry {name} inconsistent with params.bin")
            state[name] = raw[offset : offset + count].astype(np.float64).reshape(dims)
        else:
            key, eq, value = line.partition("=")
            if not eq:
                raise ValueError(f"manifest line {line_no}: expected 'key = value', got {line!r}")
            meta[key.strip()] = value.strip()
    return state, meta
