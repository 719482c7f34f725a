"""Fit Gaussians to posed images of a ground-truth scene and watch the error fall.

Run: python demos/02_fit_scene.py
"""
# %%
import numpy as np

from splatnbv import OptimConfig, TrainState, fit, generate_synthetic_scene, init_scene, psnr, \
    render, sample_sphere_viewpoints

gt = generate_synthetic_scene(1, 40, "blob-cluster")
views = sample_sphere_viewpoints(12, 3.0, seed=1, width=48, height=48).cameras
held_out = sample_sphere_viewpoints(6, 3.0, seed=99, width=48, height=48).cameras

state = TrainState(init_scene((1, 1, 1), 80, seed=1), rng_seed=1)
for cam in views:
    state.add_view(cam, render(gt, cam)[0].pixels)

cfg = OptimConfig(total_iters=1500)


def test_psnr(scene):
    return np.mean([psnr(render(scene, c)[0].pixels, render(gt, c)[0].pixels) for c in held_out])


# %% fit in chunks; fit() is resumable, so this equals one long call
for stop in (0, 100, 300, 700, 1500):
    state = fit(state, cfg, stop)
    loss = f"{state.loss_history[-1]:.4f}" if state.loss_history else "   -  "
    print(f"iter {stop:5d}  loss {loss}  held-out PSNR {test_psnr(state.scene):.2f} dB")

# %% the position step size decays over the run
print("lr_mean at 0, 750, 1500:", [f"{cfg.lr_mean_at(i):.1e}" for i in (0, 750, 1500)])
