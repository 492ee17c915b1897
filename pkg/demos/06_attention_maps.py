#!/usr/bin/env python3
"""Raw attention-matrix export.

Runs one forward pass with attention collection enabled and writes every
encoder self-attention, decoder self-attention, and decoder cross-attention
matrix to CSV under demos/output/attention.  Each row of every matrix is a
probability distribution (sums to 1).
"""
import os

import numpy as np

from setpose import (ModelConfig, SceneConfig, forward, generate_scene,
                     init_parameters, make_default_catalog)

out_dir = os.path.join(os.path.dirname(__file__), "output", "attention")
os.makedirs(out_dir, exist_ok=True)

catalog = make_default_catalog(seed=0)
image, annotation = generate_scene(catalog, 7, SceneConfig())
cfg = ModelConfig(n_classes=catalog.n_classes, seed=0)
store = init_parameters(cfg)
out = forward(image, store, cfg, return_attn=True)

groups = [("enc_self", out.enc_attn),
          ("dec_self", out.dec_self_attn),
          ("dec_cross", out.dec_cross_attn)]
count = 0
for prefix, mats in groups:
    for layer, mat in enumerate(mats):
        for head in range(mat.shape[0]):
            path = os.path.join(out_dir, f"{prefix}_l{layer}_h{head}.csv")
            np.savetxt(path, mat[head], delimiter=",")
            count += 1
    shape = mats[0].shape
    print(f"{prefix}: {len(mats)} layers of {shape[0]} heads, "
          f"matrices {shape[1]}x{shape[2]}, row sums "
          f"{mats[0].sum(-1).min():.6f}..{mats[0].sum(-1).max():.6f}")

print(f"\nwrote {count} matrices to {out_dir}")
print("decoder cross-attention of slot 0 over the feature grid:")
print(out.dec_cross_attn[-1][0, 0].round(3))
