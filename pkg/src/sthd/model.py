"""2-D patch transformer over a target series and its K neighbours."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as tn
from .nn import Conv1d, LayerNorm, Linear, Module, MultiHeadAttention, uniform_fan_in
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


def num_patches(L, patch_len, patch_stride):
    """P = floor((L - l) / s) + 2."""
    return (L - patch_len) // patch_stride + 2


@dataclass(frozen=True)
class SthdConfig:
    input_length: int = 48
    horizon: int = 12
    K: int = 0
    patch_len: int = 12
    patch_stride: int = 6
    d_model: int = 256
    n_heads: int = 4
    head_dim: int = 0  # 0 means d_model // n_heads
    e_layers: int = 2
    d_ff: int = 384
    conv_kernel: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        for f in ("input_length", "horizon", "patch_len", "patch_stride", "d_model", "n_heads", "e_layers", "d_ff", "conv_kernel"):
            if int(getattr(self, f)) < 1:
                raise ConfigError(f"{f} must be positive, got {getattr(self, f)}")
        if self.K < 0:
            raise ConfigError(f"K must be non-negative, got {self.K}")
        if self.head_dim == 0 and self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}; set head_dim explicitly")
        if self.conv_kernel % 2 != 1:
            raise ConfigError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.num_patches < 1:
            raise ConfigError(
                f"patch_len={self.patch_len}, patch_stride={self.patch_stride} give no patches for input_length={self.input_length}"
            )

    @property
    def num_patches(self):
        return num_patches(self.input_length, self.patch_len, self.patch_stride)

    @property
    def channels(self):
        return 1 + self.K

    @property
    def resolved_head_dim(self):
        return self.head_dim or self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k not in kinds:
                raise ConfigError(f"unknown model config key {k!r}")
            out[k] = float(v) if k == "dropout" else int(v)
        return cls(**out)


def make_patches(inputs, patch_len, patch_stride):
    """Split each channel of ``inputs`` (..., L, C) into P patches -> (..., C, P, l).

    Every channel is padded at the end with repeats of its last value
    (at least ``patch_len`` of them) and unfolded with window ``patch_len``
    and step ``patch_stride``; the first P windows are kept.
    """
    if patch_len < 1 or patch_stride < 1:
        raise ConfigError(f"patch_len and patch_stride must be positive, got {patch_len}, {patch_stride}")
    x = np.asarray(inputs, dtype=np.float64)
    L = x.shape[-2]
    P = num_patches(L, patch_len, patch_stride)
    if P < 1:
        raise ConfigError(f"no patches: L={L}, patch_len={patch_len}, patch_stride={patch_stride}")
    pad = max(patch_len, (P - 1) * patch_stride + patch_len - L)
    series = np.swapaxes(x, -1, -2)  # (..., C, L)
    tail = np.repeat(series[..., -1:], pad, axis=-1)
    padded = np.concatenate([series, tail], axis=-1)
    windows = np.lib.stride_tricks.sliding_window_view(padded, patch_len, axis=-1)
    return np.ascontiguousarray(windows[..., : (P - 1) * patch_stride + 1 : patch_stride, :])


def sinusoidal_table(n_positions, dim):
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class EncoderLayer(Module):
    def __init__(self, cfg, rng):
        d = cfg.d_model
        self.attention = MultiHeadAttention(d, cfg.n_heads, cfg.resolved_head_dim, rng)
        self.norm1 = LayerNorm(d)
        self.conv1 = Conv1d(d, cfg.d_ff, cfg.conv_kernel, rng)
        self.conv2 = Conv1d(cfg.d_ff, d, cfg.conv_kernel, rng)
        self.norm2 = LayerNorm(d)
        self.dropout = cfg.dropout

    def __call__(self, x, rng=None):
        drop = self.dropout if self.training else 0.0
        a = tn.dropout(self.attention(x), drop, rng)
        x = self.norm1(x + a)
        f = self.conv2(tn.gelu(self.conv1(x)))
        return self.norm2(x + tn.dropout(f, drop, rng))


class SthdModel(Module):
    def __init__(self, cfg, seed=0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        D, P = cfg.d_model, cfg.num_patches
        self.patch_projection = uniform_fan_in(rng, (cfg.patch_len, D), cfg.patch_len)
        self.channel_encoding = uniform_fan_in(rng, (cfg.channels, D), D)
        self.temporal_encoding = sinusoidal_table(P, D)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.e_layers)]
        self.flatten = Linear(P * D, D, rng)
        self.head = Linear(D, cfg.horizon, rng)
        self._dropout_rng = np.random.default_rng([seed, 1])

    def embed(self, patches):
        """Patch projection + temporal and channel encodings -> (b, C*P, D)."""
        b, C, P, l = patches.shape
        cfg = self.cfg
        if C > cfg.channels:
            raise ShapeError(f"sample has {C} channels but the model was built for at most 1+K={cfg.channels}")
        if P != cfg.num_patches or l != cfg.patch_len:
            raise ShapeError(f"patch grid {P}x{l} does not match config {cfg.num_patches}x{cfg.patch_len}")
        z = tn.matmul(Tensor(patches), self.patch_projection)
        z = z + self.temporal_encoding
        z = z + tn.reshape(self.channel_encoding[:C], (C, 1, cfg.d_model))
        return tn.reshape(z, (b, C * P, cfg.d_model))

    def encode(self, patches):
        x = self.embed(patches)
        for layer in self.layers:
            x = layer(x, self._dropout_rng)
        return x

    def attention_weights(self):
        return [layer.attention.last_weights for layer in self.layers]

    def decode(self, encoded):
        """(b, C*P, D) -> (b, tau), reading only the target channel's representation."""
        b, n, D = encoded.shape
        P = self.cfg.num_patches
        if n % P or D != self.cfg.d_model:
            raise ShapeError(f"encoded shape {encoded.shape} incompatible with P={P}, D={self.cfg.d_model}")
        C = n // P
        per_channel = self.flatten(tn.reshape(encoded, (b, C, P * D)))
        return self.head(per_channel[:, 0, :])

    def __call__(self, inputs):
        """Forecast from raw windows ``inputs`` of shape (b, L, C) or (L, C)."""
        x = np.asarray(inputs, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.shape[1] != self.cfg.input_length:
            raise ShapeError(f"input length {x.shape[1]} != configured L={self.cfg.input_length}")
        out = self.decode(self.encode(make_patches(x, self.cfg.patch_len, self.cfg.patch_stride)))
        return out[0] if single else out

    def predict(self, inputs):
        was = self.training
        self.eval()
        try:
            with tn.no_grad():
                return self(inputs).data
        finally:
            self.train(was)


def forward_loss(batch, model):
    """Mean squared error over all samples and horizon steps of ``batch``."""
    pred = model(batch.inputs)
    targets = np.asarray(batch.targets, dtype=np.float64)
    if pred.shape != targets.shape:
        raise ShapeError(f"forward_loss: prediction shape {pred.shape} != target shape {targets.shape}")
    return tn.mse(pred, Tensor(targets))
