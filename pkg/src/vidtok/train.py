"""Loss assembly, Adam and the two-stage training procedure.

Stage 1 trains every parameter.  Stage 2 starts from a stage-1 checkpoint and
updates only the decoder, so the encoder (and with it the latent space) is
bit-identical before and after fine-tuning.
"""

from __future__ import annotations

import csv
import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .model import VidTok, checkpoint_bytes, load_checkpoint
from .quantize import UsageCounter, utilization_rate
from .synth import SynthConfig, synth_batch

logger = logging.getLogger(__name__)

CURVE_FIELDS = ("step", "loss", "reconstruction", "regularization", "perceptual", "adversarial", "utilization")


def zero_loss(x: Tensor, xhat: Tensor) -> Tensor:
    """Placeholder perceptual / adversarial provider."""
    return Tensor(0.0, dtype=xhat.dtype)


@dataclass
class LossWeights:
    reconstruction: float = 1.0
    perceptual: float = 0.0
    adversarial: float = 0.0
    distance: str = "l1"  # or "l2"


def loss_terms(x, xhat: Tensor, reg_loss: Tensor, weights: LossWeights | None = None,
               perceptual: Callable = zero_loss, adversarial: Callable = zero_loss) -> dict[str, Tensor]:
    weights = weights or LossWeights()
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=xhat.dtype)
    if x.shape != xhat.shape:
        raise ValueError(f"reconstruction shape {xhat.shape} != input shape {x.shape}")
    diff = xhat - x
    if weights.distance == "l1":
        rec = ad.mean(ad.absolute(diff))
    elif weights.distance == "l2":
        rec = ad.mean(ad.square(diff))
    else:
        raise ValueError(f"unknown distance {weights.distance!r}")
    terms = {
        "reconstruction": rec,
        "regularization": reg_loss,
        "perceptual": perceptual(x, xhat),
        "adversarial": adversarial(x, xhat),
    }
    terms["loss"] = (
        ad.scale(rec, weights.reconstruction)
        + reg_loss
        + ad.scale(terms["perceptual"], weights.perceptual)
        + ad.scale(terms["adversarial"], weights.adversarial)
    )
    return terms


def total_loss(x, xhat: Tensor, reg_loss: Tensor, weights: LossWeights | None = None,
               perceptual: Callable = zero_loss, adversarial: Callable = zero_loss) -> Tensor:
    return loss_terms(x, xhat, reg_loss, weights, perceptual, adversarial)["loss"]


# -- optimizer ----------------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              frozen: Iterable[str] = ()) -> AdamState:
    """One bias-corrected Adam update of every non-frozen parameter, in place."""
    frozen = set(frozen)
    for name, g in grads.items():
        if name not in frozen and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)
    return state


# -- training loop ------------------------------------------------------------------------


@dataclass
class TrainConfig:
    stage: int = 1
    learning_rate: float = 1e-3
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    frozen: tuple[str, ...] = ()
    log_every: int = 10
    deterministic: bool = True

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def frozen_names(self, names: Iterable[str]) -> set[str]:
        """Explicitly frozen names, plus everything outside the decoder in stage 2."""
        names = list(names)
        out = {n for n in names if n in self.frozen}
        if self.stage == 2:
            out |= {n for n in names if not n.startswith("decoder.")}
        return out


@dataclass
class StageResult:
    model: VidTok
    curve: list[dict]
    checkpoint: bytes
    frozen: set[str]


def _batch_source(data, batch_size: int) -> Callable[[int], np.ndarray]:
    if isinstance(data, SynthConfig):
        return lambda step: synth_batch(data, batch_size, step)
    if callable(data):
        return data
    raise TypeError("data must be a SynthConfig or a callable step -> batch")


def _prefetch(source: Callable[[int], np.ndarray], steps: int, depth: int = 2):
    q: queue.Queue = queue.Queue(maxsize=depth)

    def worker():
        for step in range(steps):
            q.put(source(step))

    threading.Thread(target=worker, daemon=True).start()
    for _ in range(steps):
        yield q.get()


def run_stage(cfg: TrainConfig, data, model: VidTok | None = None, checkpoint=None,
              out_path=None, curve_path=None) -> StageResult:
    """Train one stage and return the final model, loss curve and checkpoint bytes.

    ``checkpoint`` (path or bytes) is required for stage 2 and optional for
    stage 1, where it replaces ``model``.
    """
    if checkpoint is not None:
        if not isinstance(checkpoint, (bytes, bytearray)) and not Path(checkpoint).exists():
            raise FileNotFoundError(f"checkpoint {checkpoint} not found")
        model, _ = load_checkpoint(checkpoint)
    elif cfg.stage == 2:
        raise ValueError("stage 2 needs a stage 1 checkpoint")
    if model is None:
        raise ValueError("stage 1 needs a model or a checkpoint")

    params = model.parameters()
    frozen = cfg.frozen_names(params)
    for name in frozen:
        params[name].requires_grad = False
    source = _batch_source(data, cfg.batch_size)
    batches = (source(s) for s in range(cfg.steps)) if cfg.deterministic else _prefetch(source, cfg.steps)
    state = AdamState()
    noise = np.random.default_rng(cfg.seed)
    curve = []
    try:
        with ad.deterministic(cfg.deterministic):
            for step, batch in enumerate(batches):
                model.zero_grad()
                recon, result = model.forward(batch, train=True, rng=noise)
                terms = loss_terms(batch, recon, result.reg_loss, cfg.weights)
                loss = terms["loss"]
                if not np.isfinite(loss.item()):
                    raise NonFiniteError(f"non-finite loss at step {step}")
                loss.backward()
                grads = {n: p.grad for n, p in params.items() if n not in frozen}
                adam_step(params, grads, state, cfg.learning_rate, frozen)
                if step % cfg.log_every == 0 or step == cfg.steps - 1:
                    row = {k: terms[k].item() for k in CURVE_FIELDS[1:6]}
                    row["step"] = step
                    row["utilization"] = utilization_rate(result.usage) if result.usage is not None else float("nan")
                    curve.append(row)
                    logger.info("stage %d step %d loss %.5f", cfg.stage, step, row["loss"])
    finally:
        for name in frozen:
            params[name].requires_grad = True
            params[name].zero_grad()

    blob = checkpoint_bytes(model, {"stage": cfg.stage, "steps": cfg.steps, "seed": cfg.seed})
    if out_path is not None:
        Path(out_path).write_bytes(blob)
    if curve_path is not None:
        write_curve(curve, curve_path)
    return StageResult(model, curve, blob, frozen)


def write_curve(curve: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for row in curve:
            writer.writerow({k: row[k] for k in CURVE_FIELDS})


def evaluate(model: VidTok, batches: Iterable[np.ndarray], weights: LossWeights | None = None) -> dict:
    """Mean reconstruction loss and codebook utilization over an evaluation pass."""
    weights = weights or LossWeights()
    counter = UsageCounter(model.reg_config.size) if model.reg_config.discrete else None
    losses = []
    with ad.no_grad():
        for batch in batches:
            recon, result = model.forward(batch, train=False)
            losses.append(loss_terms(batch, recon, result.reg_loss, weights)["reconstruction"].item())
            if counter is not None:
                counter.update(result.indices)
    return {
        "reconstruction": float(np.mean(losses)),
        "utilization": counter.rate if counter is not None else float("nan"),
        "usage": counter.counts if counter is not None else None,
    }
