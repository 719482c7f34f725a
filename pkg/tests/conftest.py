import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.spatial.transform import Rotation

from splatnbv.render import DEFAULT_RENDER
from splatnbv.scene import Camera, Scene, intrinsics_from_fov, look_at

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def random_scene(rng, n, *, spread=0.6, scale=(0.05, 0.4), opacity=(0.05, 0.99),
                 background=None):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    bg = rng.uniform(0, 1, 3) if background is None else np.asarray(background, dtype=float)
    return Scene(rng.uniform(-spread, spread, (n, 3)), rng.uniform(*scale, (n, 3)), q,
                 rng.uniform(0, 1, (n, 3)), rng.uniform(*opacity, n), bg)


def random_camera(rng, width=16, height=16, radius=3.0, fov=50.0):
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    R, t = look_at(radius * d, rng.normal(scale=0.1, size=3))
    return Camera(*intrinsics_from_fov(width, height, fov), width, height, R, t)


def naive_render(scene, cam, cfg=DEFAULT_RENDER):
    """Per-pixel compositing straight from the splat definition.

    No tiling, no early termination; projection recomputed with scipy rotations
    and an explicitly written perspective Jacobian.
    """
    H, W = cam.height, cam.width
    splats = []
    for i in range(len(scene)):
        w, x, y, z = scene.quats[i]
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        cov = R @ np.diag(scene.scales[i] ** 2) @ R.T
        p = cam.rotation @ scene.means[i] + cam.translation
        if p[2] <= cfg.near:
            continue
        J = np.array([[cam.fx / p[2], 0.0, -cam.fx * p[0] / p[2] ** 2],
                      [0.0, cam.fy / p[2], -cam.fy * p[1] / p[2] ** 2]])
        c2 = J @ cam.rotation @ cov @ cam.rotation.T @ J.T + cfg.eps_cov * np.eye(2)
        mu = np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])
        rad = cfg.extent_sigma * np.sqrt(np.linalg.eigvalsh(c2)[-1])
        splats.append((p[2], mu, np.linalg.inv(c2), rad, scene.colors[i], scene.opacities[i]))
    splats.sort(key=lambda s: s[0])
    rgb = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    acc = np.zeros((H, W))
    for r in range(H):
        for c in range(W):
            T = 1.0
            col = np.zeros(3)
            d = 0.0
            for z, mu, A, rad, color, o in splats:
                delta = np.array([c, r], dtype=float) - mu
                if np.max(np.abs(delta)) > rad:
                    continue
                a = min(cfg.alpha_max, o * np.exp(-0.5 * delta @ A @ delta))
                col += T * a * color
                d += T * a * z
                T *= 1.0 - a
            rgb[r, c] = col + T * scene.background
            depth[r, c] = d
            acc[r, c] = 1.0 - T
    return rgb, depth, acc


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed again at the end of the session
ACCEPTANCE_LINES = []


def record_acceptance(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
