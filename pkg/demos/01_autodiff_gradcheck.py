"""
Checking the tape against finite differences
============================================

The tokenizer trains on a small reverse-mode engine built on numpy.  Every
operation records a closure that maps the output gradient to input
gradients; ``backward`` walks the graph in reverse topological order.

This script builds a two-layer causal video convnet by hand and compares
the tape gradient of every weight with central differences at 64-bit.
"""

import numpy as np

from vidtok import autodiff as ad
from vidtok.autodiff import Tensor

rng = np.random.default_rng(0)

with ad.precision(np.float64):
    video = Tensor(rng.uniform(-1, 1, size=(1, 5, 3, 6, 6)))
    w1 = Tensor(rng.normal(scale=0.3, size=(4, 3, 3, 3, 3)), requires_grad=True)
    b1 = Tensor(np.zeros(4), requires_grad=True)
    w2 = Tensor(rng.normal(scale=0.3, size=(3, 4, 3)), requires_grad=True)
    gamma = Tensor(np.ones(4), requires_grad=True)

    def loss():
        h = ad.conv3d(video, w1, b1, time_padding="causal_time")
        h = ad.silu(ad.layer_norm(h, gamma, None, axes=(2,)))
        out = ad.conv1d_temporal(h, w2, causal=True)
        return ad.mean(ad.absolute(out - video))

    value = loss()
    value.backward()
    print(f"loss {value.item():.6f}, graph has {len(ad.topological_order(value))} nodes")

    for name, p in [("w1", w1), ("b1", b1), ("w2", w2), ("gamma", gamma)]:
        numeric = ad.numeric_grad(loss, p, eps=1e-6)
        print(f"{name:>6}: {p.size:4d} entries, relative error {ad.relative_error(p.grad, numeric):.2e}")

# %%
# Causal padding puts all k - 1 temporal taps in the past, so output frame
# t never reads an input frame after t.  A quick probe:

with ad.precision(np.float64), ad.no_grad():
    base = ad.conv3d(video, w1, b1, time_padding="causal_time").data
    bumped = video.data.copy()
    bumped[:, 3] += 1.0
    moved = ad.conv3d(Tensor(bumped), w1, b1, time_padding="causal_time").data
print("frames changed by bumping frame 3:", np.flatnonzero(np.abs(moved - base).reshape(5, -1).max(axis=1) > 0))
