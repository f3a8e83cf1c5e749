"""
What each architecture variant costs
====================================

Four layouts share one trunk and differ in how they resample:

* Fully3D: strided 3D convolutions everywhere
* DecoupledNoBlend: 2D spatial convolutions, parameter-free average / repeat in time
* DecoupledBlend: as above, blended with a learned 1D temporal convolution
* Fully2D: every trunk convolution is 2D

Counts are for a 17 x 64 x 64 clip with 4x temporal and 8x spatial compression.
"""

from vidtok.model import ModelConfig, Variant, count_flops, count_params

base = dict(causal=True, r_t=4, r_s=8, latent_channels=4, base_channels=32,
            channel_multipliers=(1, 2, 2), blocks_per_stage=1)
shape = (17, 3, 64, 64)

print(f"{'variant':<18}{'params':>12}{'GFLOPs':>10}")
for variant in Variant:
    cfg = ModelConfig(**base, variant=variant)
    print(f"{variant.value:<18}{count_params(cfg):>12,}{count_flops(cfg, shape) / 1e9:>10.2f}")

# %%
# Latent grids follow from the ratios alone.  A causal model keeps the first
# frame as its own token slice, so 17 frames give 1 + 16 / r_t latent frames.

for causal, frames in ((True, 17), (False, 16)):
    for r_t in (2, 4):
        cfg = ModelConfig(causal=causal, r_t=r_t, r_s=8)
        print(f"causal={causal!s:<5} r_t={r_t}: {frames}x256x256 -> {cfg.latent_shape(frames, 256, 256)}")
