"""Binary formats: token streams, raw 8-bit video and continuous latents.

All integers are little-endian.

Token stream (``VTOK``)::

    4s  magic "VTOK"
    u16 version
    u16 d                 number of channels
    d x u32               levels L_1 .. L_d
    u32 n, u32 h, u32 w   grid size
    u8  causal, u8 r_t, u8 r_s
    payload               per token (raster order over n, h, w), per channel i,
                          the digit k_i in ceil(log2 L_i) bits, least significant
                          bit first; bits fill each byte from its low end and
                          the last byte is zero-padded

Raw video (``RVID``): magic, u16 version, u32 frames, u32 height, u32 width,
u8 channels, u8 bit depth (8), then frame-major planar samples.

Latent container (``VLAT``): magic, u16 version, u8 ndim, ndim x u32 dims,
u8 causal, u8 r_t, u8 r_s, then float32 samples.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TOKEN_MAGIC = b"VTOK"
VIDEO_MAGIC = b"RVID"
LATENT_MAGIC = b"VLAT"
VERSION = 1


class CodecError(ValueError):
    """Malformed, truncated or inconsistent stream."""


class RegularizerMismatch(CodecError):
    """The checkpoint's regularizer cannot produce or consume the requested stream."""


def bits_per_channel(levels) -> list[int]:
    return [max(1, math.ceil(math.log2(int(L)))) for L in levels]


def payload_bits(shape, levels) -> int:
    n, h, w = shape
    return n * h * w * sum(bits_per_channel(levels))


def _strides(levels) -> np.ndarray:
    return np.concatenate([[1], np.cumprod(levels[:-1], dtype=np.int64)]).astype(np.int64)


@dataclass
class TokenStream:
    grid: np.ndarray  # (n, h, w) combined indices
    levels: tuple[int, ...]
    causal: bool = True
    r_t: int = 1
    r_s: int = 1

    @property
    def codebook_size(self) -> int:
        return int(np.prod(self.levels, dtype=np.int64))


def _read(fmt: str, raw: bytes, offset: int):
    size = struct.calcsize(fmt)
    if offset + size > len(raw):
        raise CodecError("stream truncated in header")
    return struct.unpack_from(fmt, raw, offset), offset + size


def pack_tokens(grid, levels, causal: bool = True, r_t: int = 1, r_s: int = 1) -> bytes:
    grid = np.asarray(grid)
    levels = tuple(int(L) for L in levels)
    if grid.ndim != 3:
        raise CodecError(f"token grid must be (n, h, w), got shape {grid.shape}")
    if not levels or min(levels) < 2:
        raise CodecError(f"invalid levels {levels}")
    size = int(np.prod(levels, dtype=np.int64))
    flat = grid.reshape(-1).astype(np.int64)
    if flat.size and (flat.min() < 0 or flat.max() >= size):
        raise CodecError(f"token index out of range [0, {size})")
    header = TOKEN_MAGIC + struct.pack(f"<HH{len(levels)}I", VERSION, len(levels), *levels)
    header += struct.pack("<IIIBBB", *grid.shape, int(bool(causal)), r_t, r_s)
    if flat.size == 0:
        return header
    digits = (flat[:, None] // _strides(levels)) % np.asarray(levels)
    columns = []
    for i, nb in enumerate(bits_per_channel(levels)):
        columns.append((digits[:, i : i + 1] >> np.arange(nb)) & 1)
    bits = np.concatenate(columns, axis=1).astype(np.uint8).reshape(-1)
    return header + np.packbits(bits, bitorder="little").tobytes()


def unpack_tokens(raw: bytes) -> TokenStream:
    raw = bytes(raw)
    if raw[:4] != TOKEN_MAGIC:
        raise CodecError("bad magic, not a token stream")
    (version, d), off = _read("<HH", raw, 4)
    if version != VERSION:
        raise CodecError(f"unsupported token stream version {version}")
    if d == 0:
        raise CodecError("token stream declares no channels")
    levels, off = _read(f"<{d}I", raw, off)
    (n, h, w, causal, r_t, r_s), off = _read("<IIIBBB", raw, off)
    if min(levels) < 2:
        raise CodecError(f"invalid levels {levels}")
    nbits = payload_bits((n, h, w), levels)
    expected = (nbits + 7) // 8
    payload = raw[off:]
    if len(payload) != expected:
        raise CodecError(f"payload has {len(payload)} bytes, header implies {expected}")
    count = n * h * w
    if count == 0:
        return TokenStream(np.zeros((n, h, w), dtype=np.int64), tuple(levels), bool(causal), r_t, r_s)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little", count=nbits)
    if np.any(np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")[nbits:]):
        raise CodecError("non-zero padding bits")
    bits = bits.reshape(count, -1).astype(np.int64)
    digits = np.empty((count, d), dtype=np.int64)
    col = 0
    for i, nb in enumerate(bits_per_channel(levels)):
        digits[:, i] = bits[:, col : col + nb] @ (np.int64(1) << np.arange(nb, dtype=np.int64))
        col += nb
    if np.any(digits >= np.asarray(levels)):
        raise CodecError("channel digit out of range for its level count")
    grid = (digits @ _strides(levels)).reshape(n, h, w)
    return TokenStream(grid, tuple(levels), bool(causal), r_t, r_s)


# -- raw video ------------------------------------------------------------------------


def to_bytes(video) -> np.ndarray:
    """[-1, 1] samples to 8-bit: byte = round(255 * (v + 1) / 2)."""
    v = np.clip(np.asarray(video, dtype=np.float64), -1.0, 1.0)
    return np.rint((v + 1.0) * 127.5).astype(np.uint8)


def from_bytes(samples) -> np.ndarray:
    """8-bit samples to [-1, 1]: v = 2 * byte / 255 - 1."""
    return (2.0 * np.asarray(samples, dtype=np.float32) / 255.0 - 1.0).astype(np.float32)


def write_raw_video(path, frames) -> None:
    """Write ``(T, C, H, W)`` uint8 frames."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise CodecError("raw video must be a (T, C, H, W) uint8 array")
    T, C, H, W = frames.shape
    header = VIDEO_MAGIC + struct.pack("<HIIIBB", VERSION, T, H, W, C, 8)
    Path(path).write_bytes(header + np.ascontiguousarray(frames).tobytes())


def read_raw_video(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != VIDEO_MAGIC:
        raise CodecError("bad magic, not a raw video")
    (version, T, H, W, C, depth), off = _read("<HIIIBB", raw, 4)
    if version != VERSION:
        raise CodecError(f"unsupported raw video version {version}")
    if depth != 8:
        raise CodecError(f"unsupported bit depth {depth}")
    if len(raw) - off != T * C * H * W:
        raise CodecError(f"payload has {len(raw) - off} bytes, header implies {T * C * H * W}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(T, C, H, W).copy()


# -- continuous latents ---------------------------------------------------------------


def pack_latent(latent, causal: bool = True, r_t: int = 1, r_s: int = 1) -> bytes:
    arr = np.ascontiguousarray(latent, dtype="<f4")
    header = LATENT_MAGIC + struct.pack(f"<HB{arr.ndim}I", VERSION, arr.ndim, *arr.shape)
    header += struct.pack("<BBB", int(bool(causal)), r_t, r_s)
    return header + arr.tobytes()


def unpack_latent(raw: bytes) -> tuple[np.ndarray, dict]:
    if raw[:4] != LATENT_MAGIC:
        raise CodecError("bad magic, not a latent container")
    (version, ndim), off = _read("<HB", raw, 4)
    if version != VERSION:
        raise CodecError(f"unsupported latent container version {version}")
    shape, off = _read(f"<{ndim}I", raw, off)
    (causal, r_t, r_s), off = _read("<BBB", raw, off)
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - off != 4 * count:
        raise CodecError(f"payload has {len(raw) - off} bytes, header implies {4 * count}")
    arr = np.frombuffer(raw, dtype="<f4", offset=off).reshape(shape).astype(np.float32)
    return arr, {"causal": bool(causal), "r_t": r_t, "r_s": r_s}


# -- end-to-end ---------------------------------------------------------------------


def _load_model(checkpoint):
    from .model import VidTok, load_checkpoint

    if isinstance(checkpoint, VidTok):
        return checkpoint
    return load_checkpoint(checkpoint)[0]


def encode_file(video_path, checkpoint, out_path, output: str = "auto") -> Path:
    """Tokenize a raw video file.

    ``output`` is ``"tokens"``, ``"latent"`` or ``"auto"`` (tokens for discrete
    regularizers, a latent container for KL).
    """
    from . import autodiff as ad

    model = _load_model(checkpoint)
    cfg, reg = model.config, model.reg_config
    if output == "auto":
        output = "tokens" if reg.discrete else "latent"
    if output == "tokens" and not reg.discrete:
        raise RegularizerMismatch("checkpoint has a continuous (KL) regularizer; it cannot emit tokens")
    if output not in ("tokens", "latent"):
        raise ValueError(f"unknown output kind {output!r}")
    frames = read_raw_video(video_path)
    if frames.shape[1] != 3:
        raise CodecError(f"expected 3 channels, got {frames.shape[1]}")
    video = from_bytes(frames)[None]
    cfg.check_video_shape(frames.shape[0], frames.shape[2], frames.shape[3])
    if output == "tokens":
        grid = model.tokenize(video)[0]
        blob = pack_tokens(grid, reg.token_levels, cfg.causal, cfg.r_t, cfg.r_s)
    else:
        with ad.no_grad():
            result = model.regularize(model.encode(video), train=False)
        blob = pack_latent(result.quantized.data[0], cfg.causal, cfg.r_t, cfg.r_s)
    out_path = Path(out_path)
    out_path.write_bytes(blob)
    return out_path


def decode_file(stream_path, checkpoint, out_path) -> Path:
    """Decode a token stream or latent container back to a raw video file."""
    model = _load_model(checkpoint)
    cfg, reg = model.config, model.reg_config
    raw = Path(stream_path).read_bytes()
    if raw[:4] == TOKEN_MAGIC:
        stream = unpack_tokens(raw)
        if not reg.discrete or stream.levels != reg.token_levels:
            raise RegularizerMismatch(f"stream levels {stream.levels} do not match the checkpoint regularizer")
        info = {"causal": stream.causal, "r_t": stream.r_t, "r_s": stream.r_s}
        if stream.grid.size == 0:
            raise CodecError("empty token grid")
        video = model.detokenize(stream.grid[None])[0]
    elif raw[:4] == LATENT_MAGIC:
        latent, info = unpack_latent(raw)
        if latent.ndim != 4 or latent.shape[1] != reg.channels:
            raise RegularizerMismatch(f"latent shape {latent.shape} does not match the checkpoint")
        from . import autodiff as ad

        with ad.no_grad():
            video = np.clip(model.decode(latent[None]).data[0], -1.0, 1.0)
    else:
        raise CodecError("unrecognized stream magic")
    if (info["causal"], info["r_t"], info["r_s"]) != (cfg.causal, cfg.r_t, cfg.r_s):
        raise RegularizerMismatch("stream compression settings differ from the checkpoint")
    out_path = Path(out_path)
    write_raw_video(out_path, to_bytes(video))
    return out_path
