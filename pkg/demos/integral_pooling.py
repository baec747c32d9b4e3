"""Average pooling over arbitrary windows with a summed-area table.

Builds the integral image of a random feature map, pools a handful of windows
in constant time and compares against plain slicing. Then assembles the
two-level pyramid descriptor used by the scorers.
"""
import time

import numpy as np

from deepproposal.featmap import (CellBox, FeatureMap, assemble_features, avg_pool,
                                  build_integral, dense_pool, pyramid_descriptor)

rng = np.random.default_rng(0)
fm = FeatureMap(layer_id=5, scale_id=0, stride=16.0,
                data=rng.standard_normal((64, 36, 52)).astype(np.float32))
ii = build_integral(fm)
print("map", fm.data.shape, "-> integral", ii.table.shape, ii.table.dtype)

for box in (CellBox(0, 0, 1, 1), CellBox(3, 4, 20, 17), CellBox(0, 0, 52, 36)):
    fast = avg_pool(ii, box)
    slow = fm.data[:, box.ay:box.by, box.ax:box.bx].astype(np.float64).mean(axis=(1, 2))
    print(f"{box}: max abs diff {np.abs(fast - slow).max():.2e}")

# every 8x6 placement at once
t = time.perf_counter()
means = dense_pool(ii, 8, 6)
print("dense 8x6 pooling", means.shape, f"{1e3 * (time.perf_counter() - t):.1f} ms")

desc = pyramid_descriptor(ii, CellBox(3, 4, 20, 17), levels=(0, 1))
feat = assemble_features(desc, w=17 * 16.0, h=13 * 16.0)
print("pyramid descriptor length", len(desc.values), "-> with size block", len(feat.values))
print("size block", np.round(feat.values[-3:], 4))
