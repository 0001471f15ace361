"""
Tokenization, wavelength encoding, and dual masking
===================================================

A cube becomes a grid of 9 x 9 x 8 patches; each patch is one token.
Tokens carry three additive signals: a linear projection of the patch,
a learned spatial position vector, and a sinusoidal encoding of the
patch group's mean wavelength. Masking then hides whole spatial cells
and whole spectral groups at once.
"""

import numpy as np

from hsimae import hsidata, masking, tokenizer

cube = hsidata.gen_synthetic(36, 36, 32, n_classes=3, seed=1)
normed, _ = hsidata.normalize(cube)

grid = tokenizer.partition(normed)
print(f"grid: P={grid.P} Q={grid.Q} K={grid.K} -> {grid.n_tokens} tokens "
      f"of length {tokenizer.PATCH_LEN}")
print("cropped (rows, cols, bands):", grid.cropped)

# Every spectral group of 8 bands gets one representative wavelength.
meta = tokenizer.spectral_meta(normed.wavelengths, grid.K)
print("group mean wavelengths:", np.round(meta.lambdas, 3))

# The wavelength encoding is an interleaved sin/cos stack whose squared
# norm is d/2 by the sin^2 + cos^2 identity -- for every wavelength.
for lam in meta.lambdas:
    enc = tokenizer.spec_enc(lam, 64)
    print(f"  lambda {lam:.3f} um: ||enc||^2 = {enc @ enc:.12f}")

# Dual masking: half the spatial cells and half the spectral groups.
# A token survives only if both its cell and its group survive, so a
# 50/50 draw leaves about a quarter of the tokens visible.
plan = masking.sample_mask_plan(grid.P, grid.Q, grid.K, 0.5, 0.5, seed=3)
print(f"masked cells {len(plan.masked_spatial)}/{grid.P * grid.Q}, "
      f"masked groups {len(plan.masked_spectral)}/{grid.K}")
print(f"visible tokens {len(plan.visible)}/{grid.n_tokens} "
      f"({100 * len(plan.visible) / grid.n_tokens:.0f}%)")

# The voxel mask marks exactly the voxels of masked tokens; the masked
# MSE term of the training loss averages over these and nothing else.
vox = masking.voxel_mask(plan, *grid.cropped_values.shape)
print("masked voxels:", int(vox.sum()), "=",
      len(plan.masked_tokens), "x", tokenizer.PATCH_LEN)

# Plans serialize, so a reconstruction can be replayed exactly.
replay = masking.MaskPlan.from_json(plan.to_json())
print("round-tripped plan identical:", replay.visible == plan.visible)
