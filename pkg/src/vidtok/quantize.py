"""Latent regularizers: KL (continuous), VQ, LFQ and FSQ.

All quantizers take latents with channels on the last axis, ``(..., d)``, and
return a :class:`QuantizeResult`.  Rounding and selection use straight-through
gradients: the backward pass treats them as the identity.

FSQ maps each channel through ``half * tanh(z)`` with ``half = (L - 1) / 2``
and rounds onto the lattice ``{-half, ..., half}`` (shifted by one half for
even ``L``), ties away from zero.  With every ``L = 2`` this is exactly LFQ:
the sign of each channel, with ``sign(0) = -1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, round_half_away

KINDS = ("kl", "vq", "lfq", "fsq")

#: Named level decompositions for the codebook sizes used in the ablations.
PRESETS = {
    "fsq-125": ("fsq", (5, 5, 5)),
    "fsq-4096": ("fsq", (8, 8, 8, 8)),
    "fsq-32768": ("fsq", (8, 8, 8, 8, 8)),
    "fsq-262144": ("fsq", (8, 8, 8, 8, 8, 8)),
    "lfq-262144": ("lfq", 18),
}


@dataclass(frozen=True)
class RegularizerConfig:
    kind: str
    latent_channels: int = 4
    levels: tuple[int, ...] = ()
    codebook_size: int = 0
    beta: float = 0.25
    entropy_weight: float = 0.1
    commitment_weight: float = 0.25
    kl_weight: float = 1e-6
    entropy_temperature: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if self.kind == "fsq":
            if not self.levels:
                raise ValueError("FSQ needs at least one level")
            if min(self.levels) < 2:
                raise ValueError(f"FSQ levels must all be >= 2, got {self.levels}")
            object.__setattr__(self, "latent_channels", len(self.levels))
        elif self.kind == "lfq":
            object.__setattr__(self, "levels", (2,) * self.latent_channels)
        elif self.kind == "vq" and self.codebook_size < 1:
            raise ValueError("VQ needs a non-empty codebook")
        if self.latent_channels < 1:
            raise ValueError("latent_channels must be positive")
        if self.entropy_temperature <= 0:
            raise ValueError("entropy temperature must be positive")

    @classmethod
    def kl(cls, channels: int, **kw) -> "RegularizerConfig":
        return cls("kl", latent_channels=channels, **kw)

    @classmethod
    def vq(cls, codebook_size: int, channels: int, beta: float = 0.25, **kw) -> "RegularizerConfig":
        return cls("vq", latent_channels=channels, codebook_size=codebook_size, beta=beta, **kw)

    @classmethod
    def lfq(cls, bits: int, **kw) -> "RegularizerConfig":
        return cls("lfq", latent_channels=bits, **kw)

    @classmethod
    def fsq(cls, levels, **kw) -> "RegularizerConfig":
        return cls("fsq", levels=tuple(levels), **kw)

    @classmethod
    def preset(cls, name: str, **kw) -> "RegularizerConfig":
        kind, arg = PRESETS[name]
        return cls.fsq(arg, **kw) if kind == "fsq" else cls.lfq(arg, **kw)

    @property
    def discrete(self) -> bool:
        return self.kind != "kl"

    @property
    def channels(self) -> int:
        """Channel count of the regularized latent."""
        return self.latent_channels

    @property
    def pre_channels(self) -> int:
        """Channel count the encoder must emit (mean and log-variance for KL)."""
        return 2 * self.latent_channels if self.kind == "kl" else self.latent_channels

    @property
    def size(self) -> int:
        if self.kind == "vq":
            return self.codebook_size
        if self.kind in ("fsq", "lfq"):
            return codebook_size(self.levels)
        return 0

    @property
    def token_levels(self) -> tuple[int, ...]:
        """Per-channel radices used when serializing indices."""
        if self.kind == "vq":
            return (self.codebook_size,)
        if self.kind == "kl":
            raise ValueError("continuous regularizer has no token alphabet")
        return self.levels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegularizerConfig":
        d = dict(d)
        d["levels"] = tuple(d.get("levels", ()))
        return cls(**d)


@dataclass
class QuantizeResult:
    quantized: Tensor
    indices: np.ndarray | None
    reg_loss: Tensor
    usage: np.ndarray | None = None
    terms: dict = field(default_factory=dict)


def codebook_size(levels) -> int:
    return int(np.prod([int(v) for v in levels], dtype=np.int64))


def _halves(levels) -> np.ndarray:
    return (np.asarray(levels, dtype=np.float64) - 1.0) / 2.0


def _radix_strides(levels) -> np.ndarray:
    return np.concatenate([[1], np.cumprod(levels[:-1], dtype=np.int64)]).astype(np.int64)


def _check_channels(z: Tensor, d: int):
    if z.shape[-1] != d:
        raise ValueError(f"latent has {z.shape[-1]} channels, quantizer expects {d}")


def _usage(indices: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(indices.reshape(-1), minlength=size).astype(np.int64)


def _zero(like: Tensor) -> Tensor:
    return Tensor(0.0, dtype=like.dtype)


# -- FSQ ----------------------------------------------------------------------


def fsq_bound(z: Tensor, levels) -> Tensor:
    return ad.scale(ad.tanh(z), _halves(levels).astype(z.dtype))


def fsq_round(bounded: np.ndarray, levels) -> np.ndarray:
    """Snap bounded values onto the FSQ lattice (integers for odd L, half-integers for even L)."""
    levels = np.asarray(levels)
    even = levels % 2 == 0
    return np.where(even, round_half_away(bounded - 0.5) + 0.5, round_half_away(bounded))


def fsq_digits(lattice: np.ndarray, levels) -> np.ndarray:
    digits = np.rint(lattice + _halves(levels)).astype(np.int64)
    return np.clip(digits, 0, np.asarray(levels) - 1)


def fsq_index(values: np.ndarray, levels) -> np.ndarray:
    """Combined index of FSQ output values; channel 0 is the least significant digit."""
    lattice = np.asarray(values, dtype=np.float64) * _halves(levels)
    return fsq_digits(lattice, levels) @ _radix_strides(levels)


def fsq_unindex(indices, levels) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    digits = (indices[..., None] // _radix_strides(levels)) % levels
    half = _halves(levels)
    return (digits - half) * (1.0 / half)


def fsq_project(values: np.ndarray, levels) -> np.ndarray:
    """Quantize values that are already in the bounded output range [-1, 1]."""
    half = _halves(levels)
    return fsq_round(np.asarray(values, dtype=np.float64) * half, levels) * (1.0 / half)


def fsq_quantize(z: Tensor, levels, entropy_weight: float = 0.0, commitment_weight: float = 0.0, temperature: float = 0.1) -> QuantizeResult:
    levels = tuple(int(v) for v in levels)
    if min(levels) < 2:
        raise ValueError(f"FSQ levels must all be >= 2, got {levels}")
    _check_channels(z, len(levels))
    half = _halves(levels).astype(z.dtype)
    bounded = fsq_bound(z, levels)
    lattice = fsq_round(bounded.data, levels).astype(z.dtype)
    values = ad.scale(ad.straight_through(bounded, lattice), 1.0 / half)
    indices = fsq_digits(lattice, levels) @ _radix_strides(levels)

    loss = _zero(z)
    terms = {}
    if entropy_weight:
        terms["entropy"] = entropy_penalty(bounded, levels, temperature)
        loss = loss + ad.scale(terms["entropy"], entropy_weight)
    if commitment_weight:
        terms["commitment"] = ad.mean(ad.square(ad.scale(bounded, 1.0 / half) - ad.detach(values)))
        loss = loss + ad.scale(terms["commitment"], commitment_weight)
    return QuantizeResult(values, indices, loss, _usage(indices, codebook_size(levels)), terms)


# -- LFQ ----------------------------------------------------------------------


def lfq_quantize(z: Tensor, d: int, entropy_weight: float = 0.0, commitment_weight: float = 0.0, temperature: float = 0.1) -> QuantizeResult:
    _check_channels(z, d)
    signs = np.where(z.data > 0, 1.0, -1.0).astype(z.dtype)
    values = ad.straight_through(z, signs)
    bits = (signs > 0).astype(np.int64)
    indices = bits @ (np.int64(1) << np.arange(d, dtype=np.int64))

    loss = _zero(z)
    terms = {}
    if entropy_weight:
        terms["entropy"] = entropy_penalty(z, (2,) * d, temperature, spacing=2.0)
        loss = loss + ad.scale(terms["entropy"], entropy_weight)
    if commitment_weight:
        terms["commitment"] = ad.mean(ad.square(z - ad.detach(values)))
        loss = loss + ad.scale(terms["commitment"], commitment_weight)
    return QuantizeResult(values, indices, loss, _usage(indices, 1 << d), terms)


def lfq_unindex(indices, d: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    bits = (indices[..., None] >> np.arange(d, dtype=np.int64)) & 1
    return bits * 2.0 - 1.0


# -- VQ -----------------------------------------------------------------------


def nearest_code(vectors: np.ndarray, codebook: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Index of the nearest codebook row under squared Euclidean distance; ties go to the lowest index."""
    vectors = vectors.reshape(-1, codebook.shape[1])
    out = np.empty(vectors.shape[0], dtype=np.int64)
    for start in range(0, vectors.shape[0], chunk):
        block = vectors[start : start + chunk]
        dist = ((block[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
        out[start : start + chunk] = np.argmin(dist, axis=1)
    return out


def vq_quantize(z: Tensor, codebook: Tensor, beta: float = 0.25) -> QuantizeResult:
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    _check_channels(z, codebook.shape[1])
    lead = z.shape[:-1]
    indices = nearest_code(z.data, codebook.data).reshape(lead)
    chosen = ad.take(codebook, indices, axis=0)
    quantized = ad.straight_through(z, chosen.data)
    codebook_term = ad.mean(ad.square(ad.detach(z) - chosen))
    commit_term = ad.mean(ad.square(z - ad.detach(chosen)))
    loss = codebook_term + ad.scale(commit_term, beta)
    terms = {"codebook": codebook_term, "commitment": commit_term}
    return QuantizeResult(quantized, indices, loss, _usage(indices, codebook.shape[0]), terms)


def vq_unindex(indices, codebook: np.ndarray) -> np.ndarray:
    return np.asarray(codebook)[np.asarray(indices, dtype=np.int64)]


# -- KL -----------------------------------------------------------------------


def kl_regularize(pre_latent: Tensor, rng: np.random.Generator | int | None = None, sample: bool = True):
    """Split into mean / log-variance halves and sample ``z``.

    Returns ``(z, kl_loss)``.  The loss sums over every non-batch element and
    averages over the leading (batch) axis.  With ``sample=False`` the mean is
    returned directly.
    """
    c2 = pre_latent.shape[-1]
    if c2 % 2:
        raise ValueError(f"KL regularizer needs an even channel count, got {c2}")
    c = c2 // 2
    mu = pre_latent[..., :c]
    logvar = pre_latent[..., c:]
    if sample:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        eps = rng.standard_normal(mu.shape).astype(pre_latent.dtype)
        z = mu + ad.exp(ad.scale(logvar, 0.5)) * Tensor(eps, dtype=pre_latent.dtype)
    else:
        z = mu
    per_elem = ad.add_const(ad.square(mu) + ad.exp(logvar) - logvar, -1.0)
    batch = pre_latent.shape[0] if pre_latent.ndim > 1 else 1
    kl = ad.scale(ad.tensor_sum(per_elem), 0.5 / batch)
    return z, kl


# -- entropy penalty ------------------------------------------------------------


def entropy_penalty(bounded: Tensor, levels, temperature: float = 0.1, spacing: float = 1.0) -> Tensor:
    """Mean per-sample assignment entropy minus entropy of the batch-average assignment.

    Soft assignments use ``p_i(k) ~ exp(-(b_i - level_k)^2 / temperature)``
    over the lattice points of channel ``i`` (multiplied by ``spacing``).  The
    result lies in ``[-sum ln L_i, sum ln L_i]``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    levels = tuple(int(v) for v in levels)
    _check_channels(bounded, len(levels))
    flat = ad.reshape(bounded, (-1, len(levels)))
    n = flat.shape[0]
    total = _zero(bounded)
    for i, L in enumerate(levels):
        points = (np.arange(L) - (L - 1) / 2.0) * spacing
        col = ad.repeat(flat[:, i : i + 1], L, axis=1)
        logits = ad.scale(ad.square(ad.add_const(col, -points)), -1.0 / temperature)
        logp = ad.log_softmax(logits, axis=1)
        per_sample = ad.neg(ad.tensor_sum(ad.exp(logp) * logp)) * (1.0 / n)
        log_avg = ad.add_const(ad.logsumexp(logp, axis=0), -math.log(n))
        avg_entropy = ad.neg(ad.tensor_sum(ad.exp(log_avg) * log_avg))
        total = total + per_sample - avg_entropy
    return total


# -- usage bookkeeping ----------------------------------------------------------


def utilization_rate(counts) -> float:
    """Fraction of codebook entries used at least once."""
    counts = np.asarray(counts)
    if counts.size == 0:
        return 0.0
    return float(np.count_nonzero(counts) / counts.size)


class UsageCounter:
    """Accumulates per-code counts over an evaluation pass."""

    def __init__(self, size: int):
        self.counts = np.zeros(size, dtype=np.int64)

    def update(self, indices) -> None:
        self.counts += np.bincount(np.asarray(indices).reshape(-1), minlength=self.counts.size)

    @property
    def rate(self) -> float:
        return utilization_rate(self.counts)


class Regularizer:
    """The latent regularizer of a tokenizer, owning the VQ codebook when there is one."""

    def __init__(self, config: RegularizerConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.codebook: Tensor | None = None
        if config.kind == "vq":
            rng = rng if rng is not None else np.random.default_rng(0)
            init = rng.uniform(-1.0, 1.0, size=(config.codebook_size, config.latent_channels))
            self.codebook = ad.parameter(init, name="codebook")

    def named_parameters(self):
        if self.codebook is not None:
            yield "codebook", self.codebook

    def __call__(self, z: Tensor, train: bool = True, rng=None) -> QuantizeResult:
        cfg = self.config
        if cfg.kind == "fsq":
            return fsq_quantize(z, cfg.levels, cfg.entropy_weight, cfg.commitment_weight, cfg.entropy_temperature)
        if cfg.kind == "lfq":
            return lfq_quantize(z, cfg.latent_channels, cfg.entropy_weight, cfg.commitment_weight, cfg.entropy_temperature)
        if cfg.kind == "vq":
            return vq_quantize(z, self.codebook, cfg.beta)
        latent, kl = kl_regularize(z, rng, sample=train)
        return QuantizeResult(latent, None, ad.scale(kl, cfg.kl_weight), None, {"kl": kl})

    def unindex(self, indices) -> np.ndarray:
        cfg = self.config
        if cfg.kind == "fsq":
            return fsq_unindex(indices, cfg.levels)
        if cfg.kind == "lfq":
            return lfq_unindex(indices, cfg.latent_channels)
        if cfg.kind == "vq":
            return vq_unindex(indices, self.codebook.data)
        raise ValueError("continuous regularizer has no indices")
