"""Desk-scale causal video tokenizer with KL, VQ, LFQ and FSQ latents."""

from .autodiff import Tensor
from .model import ALPHA, ModelConfig, Variant, VidTok, count_flops, count_params, load_checkpoint, save_checkpoint
from .quantize import RegularizerConfig, fsq_quantize, lfq_quantize, utilization_rate, vq_quantize

__version__ = "0.1.0"
