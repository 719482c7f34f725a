"""How a candidate view is scored: depth-blended render uncertainty plus extras.

Run: python demos/04_view_scoring.py
"""
# %%
import numpy as np

from splatnbv import ScoreWeights, blend, blend_reweighted, score_variant, total_score
from splatnbv.scoring import VARIANTS

rng = np.random.default_rng(0)
depth = rng.uniform(1.5, 3.5, (16, 16))
R = rng.uniform(0, 0.3, (16, 16))
D = rng.uniform(0, 0.2, (16, 16))
scale = 2 * np.sqrt(3)

# %% the pieces
print("blend             ", blend(depth, R, depth_scale=scale))
print("blend, squared    ", blend(depth, R, "squared", depth_scale=scale))
print("reweighted by 1-D ", blend_reweighted(depth, R, D, depth_scale=scale))
print("same with D = 0   ", blend_reweighted(depth, R, np.zeros_like(D), depth_scale=scale))

# %% total score and the ablation variants
w = ScoreWeights(1.0, 0.1, 0.1)
print(total_score(depth, R, D, w, depth_scale=scale))
for v in VARIANTS:
    print(f"{v:18s} {score_variant(depth, R, D, w, v, depth_scale=scale).total:.4f}")

# %% a region that is both far and uncertain wins over a near one
near, far = R.copy(), R.copy()
near[:4, :4] += 0.5
far[-4:, -4:] += 0.5
d = depth.copy()
d[:4, :4], d[-4:, -4:] = 1.5, 3.5
print("near bump", total_score(d, near, D, w, depth_scale=scale).total,
      "far bump", total_score(d, far, D, w, depth_scale=scale).total)
