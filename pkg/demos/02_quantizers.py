"""
Four ways to regularize a latent
================================

FSQ bounds each channel with tanh and rounds it onto a fixed grid, LFQ keeps
only the sign, VQ snaps whole vectors to a learned codebook and KL samples a
Gaussian.  The first three give integer tokens.
"""

import numpy as np

from vidtok.autodiff import Tensor
from vidtok.quantize import (
    RegularizerConfig,
    fsq_quantize,
    fsq_unindex,
    kl_regularize,
    lfq_quantize,
    utilization_rate,
    vq_quantize,
)

rng = np.random.default_rng(0)

# %%
# One channel with five levels: the bound is 2 tanh(z), rounded to an
# integer in [-2, 2] and divided by 2.

res = fsq_quantize(Tensor([[0.31], [-1.4], [3.0]]), (5,))
print("FSQ values", res.quantized.data.ravel(), "digits", res.indices)

# %%
# The implicit codebook is the product of the level counts.  Indices and
# values are interchangeable.

for name in ("fsq-125", "fsq-32768", "fsq-262144", "lfq-262144"):
    print(f"{name:>11}: {RegularizerConfig.preset(name).size:,} codes")
every = np.arange(125)
grid = fsq_unindex(every, (5, 5, 5))
print("first codes of (5, 5, 5):", grid[:3].tolist())

# %%
# LFQ is FSQ with two levels per channel.

z = rng.normal(size=(10_000, 8))
same = np.array_equal(lfq_quantize(Tensor(z), 8).indices, fsq_quantize(Tensor(z), (2,) * 8).indices)
print("LFQ matches FSQ(2, ..., 2):", same)

# %%
# Utilization of a fixed grid on Gaussian latents is near total.  A VQ
# codebook that starts uniformly in [-1, 1] and never moves is a different
# story when the latents are off-centre, which is how collapse starts.

z = rng.standard_normal((10_000, 3))
print(f"FSQ(5,5,5) utilization: {utilization_rate(fsq_quantize(Tensor(z), (5, 5, 5)).usage):.3f}")
book = Tensor(rng.uniform(-1, 1, size=(125, 3)))
shifted = Tensor(0.3 * z + 1.5)
print(f"VQ-125 utilization on shifted latents: {utilization_rate(vq_quantize(shifted, book).usage):.3f}")

# %%
# KL: half the channels are means, half log-variances.

pre = Tensor(np.concatenate([rng.normal(size=(4, 2)), np.zeros((4, 2))], axis=1))
zk, kl = kl_regularize(pre, rng=1)
print(f"KL sample shape {zk.shape}, penalty {kl.item():.4f}")
