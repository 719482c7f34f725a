import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from splatnbv.errors import ConfigError
from splatnbv.render import gaussian_visibility
from splatnbv.scene import (CAVITY_TAG, Camera, Gaussian3D, Scene, ViewpointSet,
                            generate_synthetic_scene, interpolate_path, load_scene,
                            load_viewpoints, look_at, quat_to_rotmat, rotmat_to_quat,
                            sample_sphere_viewpoints, save_json)

LAYOUTS = ["blob-cluster", "textured-box", "occluded-cavity"]


def test_single_gaussian_inside_bounds():
    s = generate_synthetic_scene(7, 1, "blob-cluster", bounds=(1, 2, 0.5))
    assert len(s) == 1
    assert np.all(np.abs(s.means) <= np.array([1, 2, 0.5]))


@pytest.mark.parametrize("layout", LAYOUTS)
def test_generation_is_deterministic(layout):
    a = generate_synthetic_scene(11, 120, layout)
    b = generate_synthetic_scene(11, 120, layout)
    assert a == b
    assert a.to_dict() == b.to_dict()
    assert len(a) == 120
    assert np.all(np.abs(a.means) <= 1.0)
    assert generate_synthetic_scene(12, 120, layout) != a


def test_bad_layout_and_bounds():
    with pytest.raises(ConfigError):
        generate_synthetic_scene(0, 10, "teapot")
    with pytest.raises(ConfigError):
        generate_synthetic_scene(0, 10, bounds=(1, -1, 1))
    with pytest.raises(ConfigError):
        generate_synthetic_scene(0, 0)


def test_cavity_is_hidden_from_a_quarter_of_the_sphere():
    scene = generate_synthetic_scene(3, 200, "occluded-cavity")
    cav = scene.tags == CAVITY_TAG
    assert cav.sum() > 0
    views = sample_sphere_viewpoints(64, 4.0, seed=0)
    hidden = 0
    for cam in views.cameras:
        seen = gaussian_visibility(scene, cam)[cav] >= 0.1
        hidden += seen.mean() < 0.5
    assert hidden / 64 >= 0.25


def test_scene_json_round_trip(tmp_path):
    s = generate_synthetic_scene(2, 30, "textured-box", background=(0.1, 0.2, 0.3))
    save_json(s, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    assert back == s
    assert np.array_equal(back.means, s.means) and np.array_equal(back.tags, s.tags)
    g = back.gaussians[0]
    assert set(s.to_dict()["gaussians"][0]) == {"mean", "scales", "rotation_quat_wxyz", "color",
                                                "opacity", "tag"}
    assert isinstance(g, Gaussian3D)


def test_scene_is_immutable():
    s = generate_synthetic_scene(0, 5)
    with pytest.raises(ValueError):
        s.means[0, 0] = 1.0


def test_gaussian_validation():
    with pytest.raises(ValueError):
        Gaussian3D((0, 0, 0), (0.1, -0.1, 0.1), (1, 0, 0, 0), (1, 1, 1), 0.5)
    with pytest.raises(ValueError):
        Gaussian3D((0, 0, 0), (0.1, 0.1, 0.1), (1, 0, 0, 0), (1, 1, 1), 1.5)


@given(st.integers(0, 2**32 - 1))
def test_quaternion_round_trip(seed):
    q = np.random.default_rng(seed).normal(size=4)
    q /= np.linalg.norm(q)
    R = quat_to_rotmat(q[None])[0]
    want = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
    np.testing.assert_allclose(R, want, atol=1e-12)
    q2 = rotmat_to_quat(R)
    assert q2[0] >= 0
    np.testing.assert_allclose(q2, q * np.sign(q[0]), atol=1e-9)


def test_single_viewpoint_looks_at_center():
    c = np.array([0.3, -0.2, 0.5])
    cam = sample_sphere_viewpoints(1, 2.0, center=c)[0]
    want = (c - cam.center) / np.linalg.norm(c - cam.center)
    np.testing.assert_allclose(cam.forward, want, atol=1e-12)
    assert np.linalg.norm(cam.center - c) == pytest.approx(2.0, abs=1e-12)


def test_lattice_distinct_and_even():
    views = sample_sphere_viewpoints(256, 3.0, seed=5)
    dirs = np.stack([c.center for c in views.cameras]) / 3.0
    cos = np.clip(dirs @ dirs.T, -1, 1)
    np.fill_diagonal(cos, -1)
    assert np.arccos(cos.max()) > 0
    d64 = np.stack([c.center for c in sample_sphere_viewpoints(64, 1.0).cameras])
    nn = []
    for i in range(64):
        ang = [math.acos(min(1.0, max(-1.0, float(d64[i] @ d64[j])))) for j in range(64) if j != i]
        nn.append(min(ang))
    assert np.std(nn) / np.mean(nn) < 0.5


def test_viewpoints_deterministic_and_frame_center():
    a = sample_sphere_viewpoints(16, 4.0, seed=3)
    b = sample_sphere_viewpoints(16, 4.0, seed=3)
    assert all(x.same_pose(y) for x, y in zip(a.cameras, b.cameras))
    for cam in a.cameras:
        p = cam.rotation @ np.zeros(3) + cam.translation
        u = cam.fx * p[0] / p[2] + cam.cx
        v = cam.fy * p[1] / p[2] + cam.cy
        assert p[2] > 0 and 0 <= u <= cam.width - 1 and 0 <= v <= cam.height - 1


def test_look_at_pole_fallback():
    R, t = look_at(np.array([0.0, 0.0, 3.0]), np.zeros(3))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(R[2], [0, 0, -1], atol=1e-12)


def test_viewpoint_set_round_trip(tmp_path):
    v = sample_sphere_viewpoints(5, 2.0, seed=1)
    v.selected_mask[2] = True
    save_json(v, tmp_path / "v.json")
    back = load_viewpoints(tmp_path / "v.json")
    assert back.selected_mask.tolist() == v.selected_mask.tolist()
    assert all(x.same_pose(y) for x, y in zip(back.cameras, v.cameras))


def _cams():
    views = sample_sphere_viewpoints(10, 3.0, seed=2).cameras
    return views[3], views[6]


def test_path_identity_and_endpoints():
    a, b = _cams()
    same = interpolate_path(a, a, 5)
    assert len(same) == 5 and all(c.same_pose(a, atol=1e-12) for c in same)
    ab = interpolate_path(a, b, 2)
    assert ab[0] is a and ab[1] is b


def test_path_slerp_midpoint():
    R0 = np.eye(3)
    R90 = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    a = Camera(30.0, 30.0, 7.5, 7.5, 16, 16, R0, np.zeros(3))
    b = Camera(30.0, 30.0, 7.5, 7.5, 16, 16, R90, np.zeros(3))
    mid = interpolate_path(a, b, 3)[1]
    np.testing.assert_allclose(mid.rotation, Rotation.from_euler("z", 45, degrees=True)
                               .as_matrix(), atol=1e-12)


@given(st.integers(2, 9))
def test_path_reversal(k):
    a, b = _cams()
    fwd = interpolate_path(a, b, k)
    back = interpolate_path(b, a, k)[::-1]
    assert all(x.same_pose(y, atol=1e-9) for x, y in zip(fwd, back))


def test_path_needs_shared_intrinsics():
    a, b = _cams()
    with pytest.raises(ValueError):
        interpolate_path(a, b.with_resolution(32, 32), 3)
    with pytest.raises(ConfigError):
        interpolate_path(a, b, 1)


def test_with_resolution_keeps_fov():
    a, _ = _cams()
    hi = a.with_resolution(128, 128)
    assert hi.fov_deg == pytest.approx(a.fov_deg)
    assert hi.cx == pytest.approx(63.5)


def test_scene_replace_checks_shapes():
    s = generate_synthetic_scene(0, 3)
    with pytest.raises(ValueError):
        s.replace(tags=np.zeros(2, dtype=int))
    assert isinstance(s.replace(colors=np.zeros((3, 3))), Scene)
    assert isinstance(ViewpointSet([]).selected_mask, np.ndarray)
