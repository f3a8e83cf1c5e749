"""
Training on sparser frames
==========================

The synthetic generator renders motion on a 24 fps timeline and keeps every
``stride``-th frame.  Sampling at 3 fps makes objects move eight times
further between consecutive frames, so the tokenizer sees much more motion
per clip.  Here two identical models train on 24 fps and 3 fps data and are
evaluated on both.

The outcome at this scale depends on the step budget; treat it as an
experiment to run, not a fixed result.

    python demos/05_frame_rate.py --steps 300
"""

import argparse

from vidtok.model import ModelConfig, VidTok
from vidtok.quantize import RegularizerConfig
from vidtok.synth import SynthConfig, synth_batch
from vidtok.train import TrainConfig, evaluate, run_stage

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=300)
args = parser.parse_args()

cfg = ModelConfig(causal=True, r_t=2, r_s=4, latent_channels=4, base_channels=8,
                  channel_multipliers=(1, 2), blocks_per_stage=1)


def clips(fps, seed):
    return SynthConfig(resolution=16, clip_length=9, source_fps=24, sample_fps=fps, seed=seed)


tests = {fps: [synth_batch(clips(fps, 99), 8, i) for i in range(2)] for fps in (24, 3)}
print(f"{'trained at':<12}{'eval 24 fps':>12}{'eval 3 fps':>12}")
for fps in (24, 3):
    model = VidTok(cfg, RegularizerConfig.kl(4), seed=0)
    trained = run_stage(TrainConfig(stage=1, steps=args.steps), clips(fps, 0), model=model).model
    scores = [evaluate(trained, tests[f])["reconstruction"] for f in (24, 3)]
    print(f"{fps:>6} fps  {scores[0]:>12.4f}{scores[1]:>12.4f}")
