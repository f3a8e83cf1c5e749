"""Causal spatio-temporal autoencoder with decoupled sampling modules.

Videos are ``(batch, frames, 3, H, W)`` tensors in [-1, 1].  The encoder
compresses time by ``r_t`` and space by ``r_s``; the decoder inverts the shape
arithmetic exactly.  In causal mode the first frame is duplicated ``r_t - 1``
times before encoding and the same number of frames is dropped after decoding,
so ``N + 1`` frames map to ``n + 1`` latent frames and back.

Four architecture variants share the residual trunk and differ only in how
sampling is done:

``DecoupledBlend``
    2D convolutions for spatial sampling, an AlphaBlender of a learned
    temporal 1D convolution and a parameter-free pooling/repetition path for
    temporal sampling.  The default.
``DecoupledNoBlend``
    As above, but temporal sampling keeps only the parameter-free path.
``Fully3D``
    Spatial and temporal sampling both done with strided 3D convolutions.
``Fully2D``
    Every 3D convolution of the trunk replaced by a per-frame 2D convolution.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _pad_pair, conv_output_shape
from .quantize import QuantizeResult, Regularizer, RegularizerConfig

ALPHA = 1.0 / (1.0 + math.exp(-0.2))  # sigmoid(0.2), fixed blend weight
RATIOS = (1, 2, 4, 8, 16)


class Variant(str, enum.Enum):
    FULLY_3D = "Fully3D"
    DECOUPLED_NO_BLEND = "DecoupledNoBlend"
    FULLY_2D = "Fully2D"
    DECOUPLED_BLEND = "DecoupledBlend"


@dataclass(frozen=True)
class ModelConfig:
    causal: bool = True
    r_t: int = 4
    r_s: int = 8
    latent_channels: int = 4
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 2)
    blocks_per_stage: int = 1
    variant: Variant = Variant.DECOUPLED_BLEND

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "channel_multipliers", tuple(int(m) for m in self.channel_multipliers))
        if self.r_t not in RATIOS or self.r_s not in RATIOS:
            raise ValueError(f"compression ratios must be in {RATIOS}, got r_t={self.r_t}, r_s={self.r_s}")
        if not self.channel_multipliers:
            raise ValueError("need at least one channel multiplier")
        if len(self.channel_multipliers) < max(self.temporal_stages, self.spatial_stages):
            raise ValueError(
                f"{len(self.channel_multipliers)} stages cannot host "
                f"{self.spatial_stages} spatial and {self.temporal_stages} temporal sampling modules"
            )
        if self.latent_channels < 1 or self.base_channels < 1 or self.blocks_per_stage < 0:
            raise ValueError("channel and block counts must be positive")

    @property
    def spatial_stages(self) -> int:
        return int(math.log2(self.r_s))

    @property
    def temporal_stages(self) -> int:
        return int(math.log2(self.r_t))

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_multipliers]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    # -- shape arithmetic -------------------------------------------------------

    def check_video_shape(self, frames: int, height: int, width: int) -> None:
        if frames < 1:
            raise ValueError("video has no frames")
        if self.causal and frames % self.r_t != 1 % self.r_t:
            raise ValueError(f"causal mode needs frames = 1 (mod {self.r_t}), got {frames}")
        if not self.causal and frames % self.r_t:
            raise ValueError(f"non-causal mode needs frames divisible by {self.r_t}, got {frames}")
        if height % self.r_s or width % self.r_s:
            raise ValueError(f"spatial size {height}x{width} not divisible by {self.r_s}")

    def latent_shape(self, frames: int, height: int, width: int) -> tuple[int, int, int]:
        self.check_video_shape(frames, height, width)
        n = (frames - 1) // self.r_t + 1 if self.causal else frames // self.r_t
        return n, height // self.r_s, width // self.r_s

    def video_frames(self, latent_frames: int) -> int:
        if self.causal:
            return (latent_frames - 1) * self.r_t + 1
        return latent_frames * self.r_t


# -- module plumbing -------------------------------------------------------------


class Module:
    """Container of named parameters and child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = ad.parameter(value, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._children.items():
            yield from m.named_parameters(f"{prefix}{name}.")

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def trace(self, shape: tuple[int, int, int, int]) -> tuple[int, tuple[int, int, int, int]]:
        """Multiply-accumulates for one clip of ``shape`` = (T, C, H, W), and the output shape."""
        raise NotImplementedError


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        for i, m in enumerate(modules):
            self.child(str(i), m)

    def append(self, m: Module) -> None:
        self.child(str(len(self._children)), m)

    def forward(self, x):
        for m in self._children.values():
            x = m(x)
        return x

    def trace(self, shape):
        total = 0
        for m in self._children.values():
            macs, shape = m.trace(shape)
            total += macs
        return total, shape


class Conv(Module):
    """A 3D, per-frame 2D or temporal 1D convolution with bias."""

    def __init__(self, rng, kind: str, ci: int, co: int, kernel: int = 3, stride=1, time_pad="causal"):
        super().__init__()
        self.kind, self.ci, self.co, self.k = kind, ci, co, kernel
        self.time_pad = time_pad
        if kind == "3d":
            self.stride = (stride,) * 3 if isinstance(stride, int) else tuple(stride)
            kshape = (kernel,) * 3
        elif kind == "2d":
            self.stride = (1, stride, stride)
            kshape = (kernel, kernel)
        elif kind == "1d":
            self.stride = (stride, 1, 1)
            kshape = (kernel,)
        else:
            raise ValueError(f"unknown conv kind {kind!r}")
        fan_in = ci * int(np.prod(kshape))
        self.weight = self.param("weight", rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(co, ci) + kshape))
        self.bias = self.param("bias", np.zeros(co))

    def _kernel(self):
        k = self.k
        return {"3d": (k, k, k), "2d": (1, k, k), "1d": (k, 1, 1)}[self.kind]

    def _pads(self):
        kt, kh, kw = self._kernel()
        tpad = _pad_pair(self.time_pad, kt) if self.kind != "2d" else (0, 0)
        return (tpad, _pad_pair("symmetric", kh), _pad_pair("symmetric", kw))

    def forward(self, x):
        if self.kind == "3d":
            return ad.conv3d(x, self.weight, self.bias, self.stride, time_padding=self._pads()[0])
        if self.kind == "2d":
            return ad.conv2d(x, self.weight, self.bias, self.stride[1:])
        return ad.conv1d_temporal(x, self.weight, self.bias, self.stride[0], pad=self._pads()[0])

    def trace(self, shape):
        T, C, H, W = shape
        if C != self.ci:
            raise ValueError(f"conv expects {self.ci} channels, got {C}")
        out = conv_output_shape((T, H, W), self._kernel(), self.stride, self._pads())
        macs = int(np.prod(out)) * int(np.prod(self._kernel())) * self.ci * self.co
        return macs, (out[0], self.co, out[1], out[2])


class LayerNorm(Module):
    """Normalization over the channel axis at every (frame, row, column)."""

    def __init__(self, channels: int):
        super().__init__()
        self.scale = self.param("scale", np.ones(channels))
        self.shift = self.param("shift", np.zeros(channels))

    def forward(self, x):
        return ad.layer_norm(x, self.scale, self.shift, axes=(2,))

    def trace(self, shape):
        return 0, shape


class ResBlock(Module):
    """norm -> SiLU -> conv -> norm -> SiLU -> conv, plus a (projected) skip."""

    def __init__(self, rng, kind: str, ci: int, co: int, causal: bool):
        super().__init__()
        tp = "causal" if causal else "symmetric"
        self.norm1 = self.child("norm1", LayerNorm(ci))
        self.conv1 = self.child("conv1", Conv(rng, kind, ci, co, time_pad=tp))
        self.norm2 = self.child("norm2", LayerNorm(co))
        self.conv2 = self.child("conv2", Conv(rng, kind, co, co, time_pad=tp))
        self.skip = self.child("skip", Conv(rng, kind, ci, co, kernel=1)) if ci != co else None

    def forward(self, x):
        h = self.conv1(ad.silu(self.norm1(x)))
        h = self.conv2(ad.silu(self.norm2(h)))
        return (self.skip(x) if self.skip is not None else x) + h

    def trace(self, shape):
        m1, s = self.conv1.trace(shape)
        m2, s = self.conv2.trace(s)
        m3 = self.skip.trace(shape)[0] if self.skip is not None else 0
        return m1 + m2 + m3, s


# -- sampling operators ----------------------------------------------------------------


def alpha_blend(x1: Tensor, x2: Tensor, alpha: float = ALPHA) -> Tensor:
    """``alpha * x1 + (1 - alpha) * x2``."""
    if x1.shape != x2.shape:
        raise ValueError(f"blend inputs differ in shape: {x1.shape} vs {x2.shape}")
    ad._record_macs(2 * x1.size)
    return ad.scale(x1, alpha) + ad.scale(x2, 1.0 - alpha)


def temporal_avg_pool(x: Tensor) -> Tensor:
    """Average consecutive frame pairs (2j, 2j + 1)."""
    B, T, C, H, W = x.shape
    if T % 2:
        raise ValueError(f"temporal downsampling needs an even frame count, got {T}")
    return ad.mean(ad.reshape(x, (B, T // 2, 2, C, H, W)), axis=2)


def _temporal_stride_pad(causal: bool) -> tuple[int, int]:
    # kernel 3, stride 2: output j reads frames 2j-1..2j+1, never beyond its own pair
    return (1, 0) if causal else (1, 1)


class SpatialDownsample(Module):
    def __init__(self, rng, channels: int, variant: Variant, causal: bool):
        super().__init__()
        if variant is Variant.FULLY_3D:
            tp = "causal" if causal else "symmetric"
            self.conv = self.child("conv", Conv(rng, "3d", channels, channels, stride=(1, 2, 2), time_pad=tp))
        else:
            self.conv = self.child("conv", Conv(rng, "2d", channels, channels, stride=2))

    def forward(self, x):
        if x.shape[3] % 2 or x.shape[4] % 2:
            raise ValueError(f"spatial downsampling needs even extents, got {x.shape[3:]}")
        return self.conv(x)

    def trace(self, shape):
        if shape[2] % 2 or shape[3] % 2:
            raise ValueError(f"spatial downsampling needs even extents, got {shape[2:]}")
        return self.conv.trace(shape)


class SpatialUpsample(Module):
    def __init__(self, rng, channels: int, variant: Variant, causal: bool):
        super().__init__()
        kind = "3d" if variant is Variant.FULLY_3D else "2d"
        tp = "causal" if causal else "symmetric"
        self.conv = self.child("conv", Conv(rng, kind, channels, channels, time_pad=tp))

    def forward(self, x):
        return self.conv(ad.repeat(ad.repeat(x, 2, axis=3), 2, axis=4))

    def trace(self, shape):
        T, C, H, W = shape
        return self.conv.trace((T, C, 2 * H, 2 * W))


class TemporalDownsample(Module):
    def __init__(self, rng, channels: int, variant: Variant, causal: bool, alpha: float = ALPHA):
        super().__init__()
        self.variant, self.alpha = variant, alpha
        pad = _temporal_stride_pad(causal)
        self.conv = None
        if variant is Variant.FULLY_3D:
            self.conv = self.child("conv", Conv(rng, "3d", channels, channels, stride=(2, 1, 1), time_pad=pad))
        elif variant is not Variant.DECOUPLED_NO_BLEND:
            self.conv = self.child("conv", Conv(rng, "1d", channels, channels, stride=2, time_pad=pad))

    def init_identity(self) -> None:
        """Make the learned path copy the last frame of each pair."""
        w = np.zeros_like(self.conv.weight.data)
        eye = np.eye(w.shape[0])
        if self.conv.kind == "3d":
            w[:, :, 2, 1, 1] = eye
        else:
            w[:, :, 2] = eye
        self.conv.weight.data = w
        self.conv.bias.data = np.zeros_like(self.conv.bias.data)

    def forward(self, x):
        if x.shape[1] % 2:
            raise ValueError(f"temporal downsampling needs an even frame count, got {x.shape[1]}")
        if self.variant is Variant.FULLY_3D:
            return self.conv(x)
        pooled = temporal_avg_pool(x)
        if self.conv is None:
            return pooled
        return alpha_blend(self.conv(x), pooled, self.alpha)

    def trace(self, shape):
        T, C, H, W = shape
        if T % 2:
            raise ValueError(f"temporal downsampling needs an even frame count, got {T}")
        out = (T // 2, C, H, W)
        if self.conv is None:
            return 0, out
        macs, _ = self.conv.trace(shape)
        if self.variant is not Variant.FULLY_3D:
            macs += 2 * int(np.prod(out))
        return macs, out


class TemporalUpsample(Module):
    def __init__(self, rng, channels: int, variant: Variant, causal: bool, alpha: float = ALPHA):
        super().__init__()
        self.variant, self.alpha, self.causal = variant, alpha, causal
        tp = "causal" if causal else "symmetric"
        self.conv = None
        if variant is Variant.FULLY_3D:
            self.conv = self.child("conv", Conv(rng, "3d", channels, channels, time_pad=tp))
        elif variant is not Variant.DECOUPLED_NO_BLEND:
            self.conv = self.child("conv", Conv(rng, "1d", channels, channels, time_pad=tp))

    def init_identity(self) -> None:
        """Make the learned path return its input (current-frame tap only)."""
        w = np.zeros_like(self.conv.weight.data)
        eye = np.eye(w.shape[0])
        tap = 2 if self.causal else 1
        if self.conv.kind == "3d":
            w[:, :, tap, 1, 1] = eye
        else:
            w[:, :, tap] = eye
        self.conv.weight.data = w
        self.conv.bias.data = np.zeros_like(self.conv.bias.data)

    def forward(self, x):
        rep = ad.repeat(x, 2, axis=1)
        if self.variant is Variant.FULLY_3D:
            return self.conv(rep)
        if self.conv is None:
            return rep
        return alpha_blend(self.conv(rep), rep, self.alpha)

    def trace(self, shape):
        T, C, H, W = shape
        rep = (2 * T, C, H, W)
        if self.conv is None:
            return 0, rep
        macs, _ = self.conv.trace(rep)
        if self.variant is not Variant.FULLY_3D:
            macs += 2 * int(np.prod(rep))
        return macs, rep


def spatial_downsample(x: Tensor, module: SpatialDownsample) -> Tensor:
    return module(x)


def spatial_upsample(x: Tensor, module: SpatialUpsample) -> Tensor:
    return module(x)


def temporal_downsample(x: Tensor, module: TemporalDownsample) -> Tensor:
    return module(x)


def temporal_upsample(x: Tensor, module: TemporalUpsample) -> Tensor:
    return module(x)


# -- causal frame handling -----------------------------------------------------------


def _frame_axis(x) -> int:
    if x.ndim not in (4, 5):
        raise ValueError(f"expected a (B,) T, C, H, W video, got shape {x.shape}")
    return x.ndim - 4


def causal_pad(x, r_t: int):
    """Prepend ``r_t - 1`` copies of the first frame."""
    axis = _frame_axis(x)
    if x.shape[axis] == 0:
        raise ValueError("cannot pad an empty video")
    if r_t == 1:
        return x
    if isinstance(x, Tensor):
        first = x[(slice(None),) * axis + (slice(0, 1),)]
        return ad.concat([ad.repeat(first, r_t - 1, axis=axis), x], axis=axis)
    first = np.take(x, [0], axis=axis)
    return np.concatenate([np.repeat(first, r_t - 1, axis=axis), x], axis=axis)


def causal_trim(x, r_t: int):
    """Drop the first ``r_t - 1`` frames of a decoded causal stream."""
    axis = _frame_axis(x)
    T = x.shape[axis]
    if T == 0:
        raise ValueError("cannot trim an empty video")
    if T % r_t:
        raise ValueError(f"decoded frame count {T} not divisible by r_t={r_t}")
    return x[(slice(None),) * axis + (slice(r_t - 1, None),)]


# -- encoder / decoder ------------------------------------------------------------------


def _trunk_kind(cfg: ModelConfig) -> str:
    return "2d" if cfg.variant is Variant.FULLY_2D else "3d"


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, out_channels: int, rng):
        super().__init__()
        kind, chs = _trunk_kind(cfg), cfg.channels
        tp = "causal" if cfg.causal else "symmetric"
        self.conv_in = self.child("conv_in", Conv(rng, kind, 3, chs[0], time_pad=tp))
        stages = []
        prev = chs[0]
        for s, ch in enumerate(chs):
            stage = Sequential()
            for _ in range(cfg.blocks_per_stage):
                stage.append(ResBlock(rng, kind, prev, ch, cfg.causal))
                prev = ch
            if s < cfg.spatial_stages:
                stage.append(SpatialDownsample(rng, ch, cfg.variant, cfg.causal))
            if s < cfg.temporal_stages:
                stage.append(TemporalDownsample(rng, ch, cfg.variant, cfg.causal))
            stages.append(stage)
        self.stages = self.child("stages", Sequential(*stages))
        self.mid = self.child("mid", ResBlock(rng, kind, prev, prev, cfg.causal))
        self.norm_out = self.child("norm_out", LayerNorm(prev))
        self.conv_out = self.child("conv_out", Conv(rng, kind, prev, out_channels, time_pad=tp))

    def forward(self, x):
        h = self.mid(self.stages(self.conv_in(x)))
        return self.conv_out(ad.silu(self.norm_out(h)))

    def trace(self, shape):
        total = 0
        for m in (self.conv_in, self.stages, self.mid, self.conv_out):
            macs, shape = m.trace(shape)
            total += macs
        return total, shape


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, in_channels: int, rng):
        super().__init__()
        kind, chs = _trunk_kind(cfg), cfg.channels
        tp = "causal" if cfg.causal else "symmetric"
        self.conv_in = self.child("conv_in", Conv(rng, kind, in_channels, chs[-1], time_pad=tp))
        self.mid = self.child("mid", ResBlock(rng, kind, chs[-1], chs[-1], cfg.causal))
        stages = []
        prev = chs[-1]
        for s in reversed(range(len(chs))):
            stage = Sequential()
            for _ in range(cfg.blocks_per_stage):
                stage.append(ResBlock(rng, kind, prev, chs[s], cfg.causal))
                prev = chs[s]
            if s < cfg.temporal_stages:
                stage.append(TemporalUpsample(rng, prev, cfg.variant, cfg.causal))
            if s < cfg.spatial_stages:
                stage.append(SpatialUpsample(rng, prev, cfg.variant, cfg.causal))
            stages.append(stage)
        self.stages = self.child("stages", Sequential(*stages))
        self.norm_out = self.child("norm_out", LayerNorm(prev))
        self.conv_out = self.child("conv_out", Conv(rng, kind, prev, 3, time_pad=tp))

    def forward(self, z):
        h = self.stages(self.mid(self.conv_in(z)))
        return self.conv_out(ad.silu(self.norm_out(h)))

    def trace(self, shape):
        total = 0
        for m in (self.conv_in, self.mid, self.stages, self.conv_out):
            macs, shape = m.trace(shape)
            total += macs
        return total, shape


def _to_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _channels_last(z: Tensor) -> Tensor:
    return ad.transpose(z, (0, 1, 3, 4, 2))


def _channels_second(z: Tensor) -> Tensor:
    return ad.transpose(z, (0, 1, 4, 2, 3))


class VidTok:
    """Encoder, latent regularizer and decoder of one tokenizer.

    Parameter names are prefixed ``encoder.``, ``decoder.`` and ``quantizer.``.
    """

    def __init__(self, config: ModelConfig, regularizer: RegularizerConfig, seed: int = 0):
        if regularizer.channels != config.latent_channels:
            raise ValueError(
                f"regularizer works on {regularizer.channels} channels but the model has {config.latent_channels}"
            )
        self.config = config
        self.reg_config = regularizer
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config, regularizer.pre_channels, rng)
        self.decoder = Decoder(config, regularizer.channels, rng)
        self.regularizer = Regularizer(regularizer, rng)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.encoder.named_parameters("encoder.")
        yield from self.decoder.named_parameters("decoder.")
        for name, p in self.regularizer.named_parameters():
            yield "quantizer." + name, p

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def astype(self, dtype) -> "VidTok":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    # -- pipeline ---------------------------------------------------------------------

    def encode(self, video) -> Tensor:
        """Pre-regularization latent, ``(B, n(+1), C_pre, h, w)``."""
        video = _to_tensor(video)
        if video.ndim != 5 or video.shape[2] != 3:
            raise ValueError(f"expected (B, T, 3, H, W) video, got {video.shape}")
        self.config.check_video_shape(video.shape[1], video.shape[3], video.shape[4])
        if self.config.causal:
            video = causal_pad(video, self.config.r_t)
        return self.encoder(video)

    def regularize(self, pre_latent: Tensor, train: bool = True, rng=None) -> QuantizeResult:
        result = self.regularizer(_channels_last(pre_latent), train=train, rng=rng)
        result.quantized = _channels_second(result.quantized)
        return result

    def decode(self, latent) -> Tensor:
        latent = _to_tensor(latent)
        if latent.ndim != 5 or latent.shape[2] != self.config.latent_channels:
            raise ValueError(f"expected (B, n, {self.config.latent_channels}, h, w) latent, got {latent.shape}")
        out = self.decoder(latent)
        if self.config.causal:
            out = causal_trim(out, self.config.r_t)
        return out

    def forward(self, video, train: bool = True, rng=None) -> tuple[Tensor, QuantizeResult]:
        result = self.regularize(self.encode(video), train=train, rng=rng)
        return self.decode(result.quantized), result

    __call__ = forward

    def reconstruct(self, video) -> np.ndarray:
        """Evaluation round trip, output clamped to [-1, 1]."""
        with ad.no_grad():
            recon, _ = self.forward(video, train=False)
        return np.clip(recon.data, -1.0, 1.0)

    def tokenize(self, video) -> np.ndarray:
        with ad.no_grad():
            result = self.regularize(self.encode(video), train=False)
        if result.indices is None:
            raise ValueError("continuous regularizer produces no tokens")
        return result.indices

    def detokenize(self, indices) -> np.ndarray:
        values = self.regularizer.unindex(indices).astype(ad.get_default_dtype())
        latent = np.transpose(values, (0, 1, 4, 2, 3))
        with ad.no_grad():
            out = self.decode(latent)
        return np.clip(out.data, -1.0, 1.0)

    def trace(self, video_shape) -> tuple[int, tuple]:
        T, C, H, W = video_shape
        self.config.check_video_shape(T, H, W)
        if self.config.causal:
            T += self.config.r_t - 1
        enc_macs, pre = self.encoder.trace((T, C, H, W))
        lat = (pre[0], self.reg_config.channels, pre[2], pre[3])
        dec_macs, out = self.decoder.trace(lat)
        return enc_macs + dec_macs, out


# -- cost accounting ------------------------------------------------------------------


def _default_reg(cfg: ModelConfig, regularizer: RegularizerConfig | None) -> RegularizerConfig:
    return regularizer if regularizer is not None else RegularizerConfig.kl(cfg.latent_channels)


def count_params(cfg: ModelConfig, regularizer: RegularizerConfig | None = None) -> int:
    model = VidTok(cfg, _default_reg(cfg, regularizer))
    return sum(p.size for p in model.parameters().values())


def count_flops(cfg: ModelConfig, input_shape, regularizer: RegularizerConfig | None = None) -> int:
    """2 x multiply-accumulates of one encode + decode of a single clip ``(T, 3, H, W)``.

    Convolutions and the blend in temporal sampling modules are counted;
    normalization, activations and pooling are not.
    """
    model = VidTok(cfg, _default_reg(cfg, regularizer))
    macs, _ = model.trace(tuple(input_shape))
    return 2 * macs


# -- checkpoints ---------------------------------------------------------------------

CHECKPOINT_MAGIC = b"VTCK"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(model: VidTok, meta: dict | None = None) -> bytes:
    """Serialize parameters and configs.

    Layout: magic ``VTCK``, u16 version, u32 header length, UTF-8 JSON header
    (sorted keys), then each tensor's little-endian bytes in header order.
    """
    entries, blobs, offset = [], [], 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype=p.data.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "model": model.config.to_dict(),
        "regularizer": model.reg_config.to_dict(),
        "tensors": entries,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def save_checkpoint(model: VidTok, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model, meta))
    return path


def load_checkpoint(path_or_bytes) -> tuple[VidTok, dict]:
    """Rebuild a model from a checkpoint; returns ``(model, meta)``."""
    raw = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 10 + hlen
    header = json.loads(raw[10:start].decode())
    model = VidTok(ModelConfig.from_dict(header["model"]), RegularizerConfig.from_dict(header["regularizer"]))
    params = model.parameters()
    names = {e["name"] for e in header["tensors"]}
    if names != set(params):
        raise ValueError("checkpoint tensors do not match the model layout")
    for e in header["tensors"]:
        lo = start + e["offset"]
        blob = raw[lo : lo + e["nbytes"]]
        if len(blob) != e["nbytes"]:
            raise ValueError(f"checkpoint truncated in tensor {e['name']}")
        arr = np.frombuffer(blob, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        p = params[e["name"]]
        p.data = arr.astype(arr.dtype.newbyteorder("="))
        p.zero_grad()
    return model, header["meta"]


def param_digest(model: VidTok, prefix: str = "") -> str:
    """SHA-256 over the bytes of every parameter whose name starts with ``prefix``."""
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
