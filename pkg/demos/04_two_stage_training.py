"""
Pre-train small, then fine-tune the decoder
===========================================

Stage 1 trains everything on low-resolution clips.  Stage 2 loads that
checkpoint, freezes every parameter outside the decoder and trains on
clips of twice the resolution.  Because the encoder never moves, tokens
produced before and after stage 2 are identical.

    python demos/04_two_stage_training.py --steps 200
"""

import argparse

import numpy as np

from vidtok.model import ModelConfig, VidTok, param_digest
from vidtok.quantize import RegularizerConfig
from vidtok.synth import SynthConfig, synth_batch
from vidtok.train import TrainConfig, evaluate, run_stage

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=200)
args = parser.parse_args()

cfg = ModelConfig(causal=True, r_t=2, r_s=4, latent_channels=3, base_channels=8,
                  channel_multipliers=(1, 2), blocks_per_stage=1)
model = VidTok(cfg, RegularizerConfig.fsq((5, 5, 5)), seed=0)

low = SynthConfig(resolution=16, clip_length=9, seed=0)
high = SynthConfig(resolution=32, clip_length=9, seed=1)
held_out = [synth_batch(SynthConfig(resolution=32, clip_length=9, seed=99), 4, i) for i in range(2)]

print(f"before training, 32px eval loss {evaluate(model, held_out)['reconstruction']:.4f}")
stage1 = run_stage(TrainConfig(stage=1, steps=args.steps), low, model=model)
print(f"after stage 1,   32px eval loss {evaluate(stage1.model, held_out)['reconstruction']:.4f}")

tokens_before = stage1.model.tokenize(held_out[0])
encoder_before = param_digest(stage1.model, "encoder.")

stage2 = run_stage(TrainConfig(stage=2, steps=args.steps // 2), high, checkpoint=stage1.checkpoint)
print(f"after stage 2,   32px eval loss {evaluate(stage2.model, held_out)['reconstruction']:.4f}")
print(f"frozen parameters: {len(stage2.frozen)} of {len(stage2.model.parameters())}")
print("encoder unchanged:", param_digest(stage2.model, "encoder.") == encoder_before)
print("tokens unchanged: ", np.array_equal(stage2.model.tokenize(held_out[0]), tokens_before))
