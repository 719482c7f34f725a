"""Compare the three uncertainty predictors on a half-trained reconstruction.

The oracle knows the ground truth; the heuristic and the ridge model only see
the rendered image and depth. Run: python demos/03_uncertainty_maps.py
"""
# %%
import numpy as np

from splatnbv import HeuristicPredictor, OptimConfig, OraclePredictor, fit_predictor, \
    generate_synthetic_scene, render, sample_sphere_viewpoints
from splatnbv.optim import TrainState, fit, init_scene
from splatnbv.uncertainty import build_training_set

SIZE, SCALE = 32, 2 * np.sqrt(3)
opt = OptimConfig(total_iters=400)

# %% training data: partial fits of two scenes, labelled by the oracle
data = []
for seed in (10, 11):
    gt = generate_synthetic_scene(seed, 150, "occluded-cavity")
    hold = sample_sphere_viewpoints(4, 2.5, seed=seed + 1, width=SIZE, height=SIZE).cameras
    data += build_training_set(gt, [3, 8], hold, seed, radius=2.5, n_init=100,
                               optim_config=opt, depth_scale=SCALE)
trained = fit_predictor(data, SCALE)
w = trained.model_r.weights
top = np.argsort(-np.abs(w))[:6]
print("largest ridge weights for R:",
      ", ".join(f"{trained.model_r.feature_names[i]} {w[i]:+.3f}" for i in top))

# %% a fresh scene, fitted from 4 views
gt = generate_synthetic_scene(3, 150, "occluded-cavity")
cams = sample_sphere_viewpoints(24, 2.5, seed=3, width=SIZE, height=SIZE).cameras
state = TrainState(init_scene((1, 1, 1), 100, 3), rng_seed=3)
for cam in cams[:4]:
    state.add_view(cam, render(gt, cam)[0].pixels)
state = fit(state, opt, opt.total_iters)

oracle, heuristic = OraclePredictor(gt, SCALE), HeuristicPredictor(SCALE)
rows = []
for cam in cams[4:]:
    img, dep = render(state.scene, cam)
    r_o, _ = oracle(img, dep, cam)
    r_h, _ = heuristic(img, dep, cam)
    r_t, _ = trained(img, dep, cam)
    rows.append((r_o.ravel(), r_h.ravel(), r_t.ravel()))

o, h, t = (np.concatenate(c) for c in zip(*rows))
print(f"pixel correlation with oracle R: heuristic {np.corrcoef(o, h)[0, 1]:.3f}, "
      f"ridge {np.corrcoef(o, t)[0, 1]:.3f}")
