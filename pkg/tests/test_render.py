import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import naive_render, random_camera, random_scene
from splatnbv.errors import NonFiniteError
from splatnbv.render import (RenderConfig, project, project_gaussian, read_ppm, read_raw, render,
                             write_ppm, write_raw)
from splatnbv.scene import Camera, Gaussian3D, Scene, generate_synthetic_scene, \
    intrinsics_from_fov, look_at


def axis_camera(width=16, height=16, z=0.0):
    """Camera at the origin looking down +z (identity pose)."""
    return Camera(*intrinsics_from_fov(width, height, 60.0), width, height, np.eye(3),
                  np.array([0.0, 0.0, z]))


def test_isotropic_on_axis_closed_form():
    cam = axis_camera(32, 32)
    d, s = 4.0, 0.2
    g = Gaussian3D((0, 0, d), (s, s, s), (1, 0, 0, 0), (1, 1, 1), 0.5)
    sp = project_gaussian(g, cam, RenderConfig(eps_cov=0.0))
    want = np.diag([(cam.fx * s / d) ** 2, (cam.fy * s / d) ** 2])
    np.testing.assert_allclose(sp.cov2d, want, rtol=1e-6)


def test_behind_camera_is_culled():
    g = Gaussian3D((0, 0, -2), (0.1, 0.1, 0.1), (1, 0, 0, 0), (1, 1, 1), 0.5)
    assert project_gaussian(g, axis_camera()) is None


def test_cov2d_matches_finite_difference_jacobian(rng):
    for _ in range(10):
        scene = random_scene(rng, 1)
        cam = random_camera(rng, 32, 32)
        proj = project(scene, cam)
        p = cam.rotation @ scene.means[0] + cam.translation

        def pi(q):
            return np.array([cam.fx * q[0] / q[2] + cam.cx, cam.fy * q[1] / q[2] + cam.cy])

        h = 1e-6
        J = np.stack([(pi(p + h * e) - pi(p - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
        want = J @ cam.rotation @ scene.covariances()[0] @ cam.rotation.T @ J.T + 0.3 * np.eye(2)
        np.testing.assert_allclose(proj.cov2d[0], want, rtol=1e-4, atol=1e-8)


def test_single_gaussian_at_its_mean():
    cam = axis_camera(17, 17)
    bg = np.array([0.2, 0.3, 0.4])
    c = np.array([0.9, 0.1, 0.5])
    scene = Scene.from_gaussians([Gaussian3D((0, 0, 3), (0.1, 0.1, 0.1), (1, 0, 0, 0), c, 0.6)],
                                 background=bg)
    img, dep = render(scene, cam)
    # cx = cy = 8 so the mean lands exactly on pixel (8, 8)
    np.testing.assert_allclose(img.pixels[8, 8], 0.6 * c + 0.4 * bg, atol=1e-12)
    assert dep.depth[8, 8] == pytest.approx(0.6 * 3.0, abs=1e-12)


def test_empty_scene_is_background():
    bg = np.array([0.1, 0.2, 0.3])
    scene = Scene(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                  np.zeros(0), bg)
    img, dep = render(scene, axis_camera())
    assert np.all(img.pixels == bg)
    assert np.all(img.accum_alpha == 0) and np.all(dep.depth == 0)


def test_two_overlapping_splats():
    cam = axis_camera(17, 17)
    c1, c2, bg = np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, 1.0])
    scene = Scene.from_gaussians([
        Gaussian3D((0, 0, 5), (0.1, 0.1, 0.1), (1, 0, 0, 0), c2, 0.5),
        Gaussian3D((0, 0, 2), (0.1, 0.1, 0.1), (1, 0, 0, 0), c1, 0.5)], background=bg)
    img, dep = render(scene, cam)
    np.testing.assert_allclose(img.pixels[8, 8], 0.5 * c1 + 0.25 * c2 + 0.25 * bg, atol=1e-12)
    assert dep.depth[8, 8] == pytest.approx(0.5 * 2 + 0.25 * 5, abs=1e-12)


def test_matches_naive_reference(rng):
    for _ in range(10):
        scene = random_scene(rng, int(rng.integers(1, 11)))
        cam = random_camera(rng)
        img, dep = render(scene, cam)
        rgb, depth, acc = naive_render(scene, cam)
        assert np.max(np.abs(img.pixels - rgb)) < 1e-6
        assert np.max(np.abs(dep.depth - depth)) < 1e-6
        assert np.max(np.abs(img.accum_alpha - acc)) < 1e-6


def test_tiling_is_exact_on_large_image(rng):
    # 40x40 spans several tiles with a ragged last one
    scene = random_scene(rng, 8)
    cam = random_camera(rng, 40, 37)
    img, _ = render(scene, cam, RenderConfig(t_min=0.0))
    rgb, _, _ = naive_render(scene, cam)
    assert np.max(np.abs(img.pixels - rgb)) < 1e-12


def test_white_on_black_luminance_equals_accum(rng):
    scene = random_scene(rng, 6, background=(0, 0, 0))
    scene = scene.replace(colors=np.ones((6, 3)))
    img, _ = render(scene, random_camera(rng, 24, 24))
    np.testing.assert_array_equal(img.pixels[..., 0], img.accum_alpha)
    assert np.all((img.accum_alpha >= 0) & (img.accum_alpha <= 1))


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    scene = random_scene(r, 7)
    cam = random_camera(r)
    perm = r.permutation(7)
    shuffled = Scene(scene.means[perm], scene.scales[perm], scene.quats[perm],
                     scene.colors[perm], scene.opacities[perm], scene.background)
    a, da = render(scene, cam)
    b, db = render(shuffled, cam)
    assert np.array_equal(a.pixels, b.pixels) and np.array_equal(da.depth, db.depth)


def test_resolution_consistency():
    scene = generate_synthetic_scene(5, 40, "blob-cluster")
    R, t = look_at(np.array([3.5, 1.0, 1.5]), np.zeros(3))
    lo = Camera(*intrinsics_from_fov(32, 32, 50.0), 32, 32, R, t)
    hi = lo.with_resolution(64, 64)
    a = render(scene, lo)[0].pixels
    b = render(scene, hi)[0].pixels
    down = b.reshape(32, 2, 32, 2, 3).mean(axis=(1, 3))
    assert np.mean(np.abs(a - down)) < 0.05


def test_non_finite_parameter_names_gaussian():
    scene = generate_synthetic_scene(0, 4, "blob-cluster")
    means = scene.means.copy()
    means[2, 1] = np.nan
    with pytest.raises(NonFiniteError, match="Gaussian 2 .*mean"):
        render(scene.replace(means=means), axis_camera(z=4.0))


def test_ppm_and_raw_round_trip(tmp_path, rng):
    img = rng.uniform(0, 1, (5, 7, 3))
    write_ppm(tmp_path / "a.ppm", img)
    assert np.max(np.abs(read_ppm(tmp_path / "a.ppm") - img)) <= 0.5 / 255 + 1e-12
    write_raw(tmp_path / "a.f32", img)
    np.testing.assert_array_equal(read_raw(tmp_path / "a.f32"), img.astype(np.float32))
    write_raw(tmp_path / "d.f32", img[..., 0])
    assert read_raw(tmp_path / "d.f32").shape == (5, 7)
