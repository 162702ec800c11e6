"""
Deformed windows and point attention
====================================

A walk through one block on random features: base window, predicted
offsets, bilinear samples, then softmax weights over the samples.
"""

import numpy as np

from dyskernel.attention import DSBlock, contributing_taps, dsb_forward, participation_ratio
from dyskernel.autodiff import Tensor
from dyskernel.params import ParamStore
from dyskernel.sampling import BaseWindow, bilinear_weights

rng = np.random.default_rng(0)

# a 3x3 base window; taps are stored as (dx, dy)
window = BaseWindow.square(3)
print("taps:", window.offsets.astype(int).tolist())

# one block with 8 channels split over 2 heads
ps = ParamStore()
block = DSBlock(ps, "demo", 8, 2, window, rng)
f_a = rng.standard_normal((1, 8, 10, 10))
f_b = rng.standard_normal((1, 8, 10, 10))

# the offset head starts at zero, so the first pass samples the plain lattice
trace = []
out = dsb_forward(Tensor(f_a), Tensor(f_b), block, trace=trace)
print("output shape:", out.shape)
print("max |offset| at init:", float(np.abs(trace[0].offsets.data).max()))

# nudge the offset head and look at one pixel's sample points
ps["demo.offset.conv2.w"].data[...] = rng.normal(0, 0.05, ps["demo.offset.conv2.w"].shape)
trace = []
dsb_forward(Tensor(f_a), Tensor(f_b), block, trace=trace)
pts = trace[0].coords.data[0, :, :, 5, 5]
print("sample points around (5, 5):")
for x, y in pts:
    print(f"  x={x:6.3f} y={y:6.3f}")

# bilinear weights of a single off-grid point always sum to one
w = bilinear_weights(tuple(pts[0]), 10, 10)
print("neighbour weights:", [(r, c, round(v, 4)) for r, c, v in w], "sum", sum(v for *_, v in w))

# attention: each head holds a distribution over the 9 taps
rho = trace[0].rho.data
print("rho sums (first head, a few pixels):", rho[0, 0].sum(axis=0)[:2, :3].round(12))
print("taps above 1e-3 per pixel (mean):", contributing_taps(rho).mean())
print("participation ratio (mean):", participation_ratio(rho).mean().round(3), "of", window.size)

# uniform attention plus identity projections reduces the block to a box filter
ps2 = ParamStore()
ident = DSBlock(ps2, "id", 8, 2, window, rng, identity=True)
box = dsb_forward(Tensor(f_a), Tensor(f_b), ident, uniform=True).data
ref = sum(f_b[:, :, 1 + dy:9 + dy, 1 + dx:9 + dx] for dx, dy in window.offsets.astype(int)) / 9
print("static reduction error:", float(np.abs(box[:, :, 1:9, 1:9] - ref).max()))
