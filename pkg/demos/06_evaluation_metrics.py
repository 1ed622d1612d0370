"""The four evaluation metrics on constructed cases.

PSNR and SSIM score fidelity against an expected render, the diversity score
measures spread across a sample set, and IoC measures how much of a
conditioning component's area the generated foreground covers.
"""

import numpy as np

from designdiff import default_schema, render_design, sample_design
from designdiff.metrics import diversity_score, ioc, psnr, ssim

schema = default_schema()
a = render_design(sample_design(1, schema), schema)
b = render_design(sample_design(2, schema), schema)

print("identical images:  psnr =", psnr(a, a), "db (capped), ssim =", ssim(a, a))
print(f"different designs: psnr = {psnr(a, b):.2f} db, ssim = {ssim(a, b):.3f}")

# Exact PSNR anchors: MSE 1.0 -> 0 db, MSE 0.01 -> 20 db.
black, white = np.zeros((8, 8, 3)), np.ones((8, 8, 3))
print("all-black vs all-white:", psnr(black, white), "db")
print("uniform +0.1 error:    ", psnr(black, np.full((8, 8, 3), 0.1)), "db")

# Diversity: mean pairwise cosine distance of feature representations.
renders = [render_design(sample_design(i, schema), schema) for i in range(6)]
flat = lambda im: im.pixels.ravel()  # noqa: E731 - demo feature fn
print(f"\ndiversity over 6 distinct designs: {diversity_score(renders, flat):.4f}")
print(f"diversity over 6 copies:           {diversity_score([a] * 6, flat):.4f}")

# IoC: fraction of the component mask covered by generated foreground.
mask = np.zeros((64, 64), dtype=bool)
mask[20:30, 20:40] = True
covered = np.ones((64, 64, 3))
covered[20:25, 20:40] = 0.2  # foreground over the top half of the mask
print(f"\nIoC with half the mask covered: {ioc(mask, covered):.2f}")
print(f"IoC of a real render against its own saddle area: ", end="")
design = sample_design(5, schema)
from designdiff.assembly import assemble, build_synthetic_library, masks_by_category
from designdiff.synthetic import graph_from_design

library = build_synthetic_library()
graph = graph_from_design(design, schema)
result = assemble(graph, library, schema.canvas_size)
saddle_mask = masks_by_category(result, graph, library)["saddle"]
print(f"{ioc(saddle_mask, render_design(design, schema)):.2f}")
