"""Procedural training clips: anti-aliased rectangles and discs moving over a flat background.

Objects move with constant velocity (bouncing off the borders) on a timeline
sampled at ``source_fps``; the returned clip keeps every ``stride``-th source
frame, so a lower ``sample_fps`` means larger motion between returned frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class SynthConfig:
    resolution: int = 64
    clip_length: int = 17
    source_fps: int = 24
    sample_fps: int = 24
    objects: tuple[int, int] = (1, 3)
    speed: tuple[float, float] = (0.2, 1.0)  # pixels per source frame
    size: tuple[float, float] = (0.12, 0.3)  # half-extent as a fraction of the resolution
    seed: int = 0

    def __post_init__(self):
        if self.sample_fps > self.source_fps:
            raise ValueError("sample_fps cannot exceed source_fps")
        if self.source_fps % self.sample_fps:
            raise ValueError("source_fps must be an integer multiple of sample_fps")
        if self.clip_length < 1 or self.resolution < 1:
            raise ValueError("clip_length and resolution must be positive")

    @property
    def stride(self) -> int:
        return self.source_fps // self.sample_fps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("objects", "speed", "size"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _reflect(p: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.full_like(p, (lo + hi) / 2)
    q = np.mod(p - lo, 2 * span)
    return lo + np.where(q > span, 2 * span - q, q)


def render_clip(cfg: SynthConfig, rng: np.random.Generator):
    """One clip ``(T, 3, R, R)`` in [-1, 1] plus object centres ``(objects, T, 2)`` as (x, y)."""
    R, T = cfg.resolution, cfg.clip_length
    source_times = np.arange(T) * cfg.stride
    background = rng.uniform(-1.0, -0.4, size=3)
    frames = np.broadcast_to(background[None, :, None, None], (T, 3, R, R)).copy()
    coords = np.arange(R) + 0.5
    ys, xs = coords[:, None], coords[None, :]

    count = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
    centres = []
    for _ in range(count):
        circle = bool(rng.integers(2))
        half = rng.uniform(*cfg.size, size=2) * R
        if circle:
            half[:] = half[0]
        color = rng.uniform(-0.2, 1.0, size=3)
        start = np.array([rng.uniform(half[0], R - half[0]), rng.uniform(half[1], R - half[1])])
        angle = rng.uniform(0, 2 * np.pi)
        velocity = rng.uniform(*cfg.speed) * np.array([np.cos(angle), np.sin(angle)])
        raw = start[None, :] + velocity[None, :] * source_times[:, None]
        pos = np.stack([_reflect(raw[:, 0], half[0], R - half[0]), _reflect(raw[:, 1], half[1], R - half[1])], axis=1)
        centres.append(pos)
        for t in range(T):
            dx, dy = xs - pos[t, 0], ys - pos[t, 1]
            if circle:
                cover = np.clip(half[0] - np.sqrt(dx * dx + dy * dy) + 0.5, 0.0, 1.0)
            else:
                cover = np.clip(half[0] - np.abs(dx) + 0.5, 0.0, 1.0) * np.clip(half[1] - np.abs(dy) + 0.5, 0.0, 1.0)
            frames[t] = frames[t] * (1.0 - cover) + color[:, None, None] * cover
    return frames.astype(np.float32), np.array(centres)


def synth_batch(cfg: SynthConfig, batch_size: int = 1, index: int = 0) -> np.ndarray:
    """Batch ``(B, T, 3, R, R)``; identical for identical ``(cfg, batch_size, index)``."""
    rng = np.random.default_rng([cfg.seed, index])
    return np.stack([render_clip(cfg, rng)[0] for _ in range(batch_size)])
