import numpy as np

from conftest import random_camera, random_scene
from splatnbv.optim import PARAMS, OptimConfig, TrainState, loss_gradients
from splatnbv.render import project, render, render_backward

H = 1e-4


def fd_check(f, scene, grads, h=H, rtol=1e-3, atol=1e-6):
    """Central differences for every scalar parameter; returns (n_pass, n_total)."""
    ok = total = 0
    for k in PARAMS:
        base = np.array(getattr(scene, k))
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += h
            minus[idx] -= h
            fd = (f(scene.replace(**{k: plus})) - f(scene.replace(**{k: minus}))) / (2 * h)
            a = grads[k][idx]
            err = abs(a - fd)
            ok += err <= atol or err <= rtol * max(abs(a), abs(fd))
            total += 1
    return ok, total


def one_view_problem(rng, n, lam):
    scene = random_scene(rng, n)
    cam = random_camera(rng)
    gt = render(random_scene(rng, n), cam)[0].pixels
    cfg = OptimConfig(lambda_ssim=lam)

    def loss(s):
        st = TrainState(s)
        st.add_view(cam, gt)
        return loss_gradients(st, config=cfg)[0]

    st = TrainState(scene)
    st.add_view(cam, gt)
    return scene, loss, loss_gradients(st, config=cfg)[1]


def test_single_gaussian_l1_all_parameters(rng):
    for _ in range(5):
        scene, loss, grads = one_view_problem(rng, 1, 0.0)
        ok, total = fd_check(loss, scene, grads)
        assert ok == total


def test_five_gaussians_mixed_loss(rng):
    ok = total = 0
    for _ in range(5):
        scene, loss, grads = one_view_problem(rng, 5, 0.2)
        a, b = fd_check(loss, scene, grads)
        ok, total = ok + a, total + b
    assert ok / total >= 0.95


def test_depth_and_accum_cotangents(rng):
    scene = random_scene(rng, 4)
    cam = random_camera(rng)
    wd = rng.normal(size=(cam.height, cam.width))
    wa = rng.normal(size=(cam.height, cam.width))
    wc = rng.normal(size=(cam.height, cam.width, 3))

    def f(s):
        img, dep = render(s, cam)
        return np.sum(wc * img.pixels) + np.sum(wd * dep.depth) + np.sum(wa * img.accum_alpha)

    grads = render_backward(scene, cam, project(scene, cam), wc, wd, wa)
    ok, total = fd_check(f, scene, grads)
    assert ok / total >= 0.95


def test_zero_gradient_at_exact_fit(rng):
    scene = random_scene(rng, 3)
    cam = random_camera(rng)
    st = TrainState(scene)
    st.add_view(cam, render(scene, cam)[0].pixels)
    loss, grads = loss_gradients(st, config=OptimConfig(lambda_ssim=0.2))
    assert loss == 0.0
    assert max(np.linalg.norm(g) for g in grads.values()) < 1e-8
