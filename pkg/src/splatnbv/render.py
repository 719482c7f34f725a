"""Forward splatting renderer: EWA projection plus front-to-back compositing.

Color and depth per pixel are

    R(u, v) = sum_i c_i a_i prod_{n<i} (1 - a_n)  +  T_final * background
    D(u, v) = sum_i z_i a_i prod_{n<i} (1 - a_n)

with splats sorted by camera-space depth. The projection's analytic
backward pass lives here too so the optimizer can chain through it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _raster
from .errors import NonFiniteError
from .scene import Scene, quat_to_rotmat


@dataclass(frozen=True)
class RenderConfig:
    alpha_max: float = 0.99
    t_min: float = 1e-4
    eps_cov: float = 0.3  # px^2 added to the 2D covariance diagonal
    near: float = 0.01
    extent_sigma: float = 3.0  # splat support half-width in std-devs of the major axis
    normalize_depth: bool = False  # divide D by accumulated alpha


DEFAULT_RENDER = RenderConfig()


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    base_opacity: float


@dataclass
class RenderedImage:
    pixels: np.ndarray  # (H, W, 3)
    accum_alpha: np.ndarray  # (H, W)


@dataclass
class DepthMap:
    depth: np.ndarray  # (H, W)
    accum_alpha: np.ndarray


@dataclass
class Projection:
    """All Gaussians of a scene projected into one camera (arrays indexed like the scene)."""

    p_cam: np.ndarray
    J: np.ndarray
    cov3d: np.ndarray
    rotmats: np.ndarray
    cov2d: np.ndarray
    mean2d: np.ndarray
    conic: np.ndarray  # inverse 2D covariance as (a, b, c) of [[a, b], [b, c]]
    radius: np.ndarray
    valid: np.ndarray
    order: np.ndarray  # valid indices sorted front to back
    tile_ptr: np.ndarray = None
    tile_ids: np.ndarray = None


def check_finite(scene):
    for name in ("means", "scales", "quats", "colors", "opacities"):
        arr = getattr(scene, name)
        bad = ~np.isfinite(arr.reshape(len(scene), -1 if len(scene) else 0)).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NonFiniteError(f"Gaussian {i} has a non-finite {name[:-1]}")


def project(scene: Scene, cam, cfg: RenderConfig = DEFAULT_RENDER) -> Projection:
    W = cam.rotation
    p_cam = scene.means @ W.T + cam.translation
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    front = z > cfg.near
    zs = np.where(front, z, 1.0)
    n = len(scene)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * x / zs**2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * y / zs**2
    rotmats = quat_to_rotmat(scene.quats)
    cov3d = np.einsum("nij,nj,nkj->nik", rotmats, scene.scales**2, rotmats)
    T = np.einsum("nij,jk->nik", J, W)
    cov2d = np.einsum("nij,njk,nlk->nil", T, cov3d, T)
    cov2d[:, 0, 0] += cfg.eps_cov
    cov2d[:, 1, 1] += cfg.eps_cov
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = cfg.extent_sigma * np.sqrt(lam_max)
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)
    onscreen = ((mean2d[:, 0] + radius >= 0) & (mean2d[:, 0] - radius <= cam.width - 1)
                & (mean2d[:, 1] + radius >= 0) & (mean2d[:, 1] - radius <= cam.height - 1))
    valid = front & onscreen & (det > 0)
    idx = np.flatnonzero(valid)
    # canonical front-to-back order: depth first, then parameters, so list order never matters
    keys = (scene.colors[idx, 2], scene.colors[idx, 1], scene.colors[idx, 0],
            scene.opacities[idx], mean2d[idx, 1], mean2d[idx, 0], z[idx])
    order = idx[np.lexsort(keys)]
    ptr, ids = _raster.bin_tiles(mean2d, radius, order, cam.height, cam.width)
    return Projection(p_cam, J, cov3d, rotmats, cov2d, mean2d, conic, radius, valid, order,
                      ptr, ids)


def project_gaussian(g, cam, cfg: RenderConfig = DEFAULT_RENDER):
    """Project one Gaussian; returns ``None`` when it is culled."""
    proj = project(Scene.from_gaussians([g]), cam, cfg)
    if not proj.valid[0]:
        return None
    return Splat2D(proj.mean2d[0].copy(), proj.cov2d[0].copy(), float(proj.p_cam[0, 2]),
                   np.asarray(g.color, dtype=np.float64), float(g.opacity))


def _rasterize(scene, cam, proj, cfg):
    return _raster.raster_forward(
        proj.mean2d, proj.conic, proj.p_cam[:, 2].copy(), np.ascontiguousarray(scene.colors),
        np.ascontiguousarray(scene.opacities), proj.radius, proj.tile_ptr, proj.tile_ids,
        cam.height, cam.width, np.ascontiguousarray(scene.background), cfg.alpha_max, cfg.t_min)


def render(scene: Scene, cam, cfg: RenderConfig = DEFAULT_RENDER, proj: Projection | None = None):
    """Render color and depth; returns ``(RenderedImage, DepthMap)``."""
    check_finite(scene)
    if proj is None:
        proj = project(scene, cam, cfg)
    rgb, depth, accum = _rasterize(scene, cam, proj, cfg)
    if cfg.normalize_depth:
        depth = np.where(accum > 0, depth / np.maximum(accum, 1e-12), 0.0)
    return RenderedImage(rgb, accum), DepthMap(depth, accum)


def render_backward(scene, cam, proj, g_color, g_depth=None, g_accum=None,
                    cfg: RenderConfig = DEFAULT_RENDER):
    """Chain image-space gradients back to scene parameters.

    Returns a dict of arrays shaped like the scene fields: ``means``, ``scales``,
    ``quats`` (tangent to the unit sphere at the stored quaternion), ``colors``,
    ``opacities``. Depth normalization is not differentiated.
    """
    H, Wd = cam.height, cam.width
    if g_depth is None:
        g_depth = np.zeros((H, Wd))
    if g_accum is None:
        g_accum = np.zeros((H, Wd))
    gm2, gcon, gz, gcol, gop = _raster.raster_backward(
        proj.mean2d, proj.conic, proj.p_cam[:, 2].copy(), np.ascontiguousarray(scene.colors),
        np.ascontiguousarray(scene.opacities), proj.radius, proj.tile_ptr, proj.tile_ids, H, Wd,
        np.ascontiguousarray(scene.background), cfg.alpha_max, cfg.t_min,
        np.ascontiguousarray(g_color, dtype=np.float64),
        np.ascontiguousarray(g_depth, dtype=np.float64),
        np.ascontiguousarray(g_accum, dtype=np.float64))
    return _projection_backward(scene, cam, proj, gm2, gcon, gz, gcol, gop)


def _projection_backward(scene, cam, proj, gm2, gcon, gz, gcol, gop):
    Wr = cam.rotation
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    zs = np.where(proj.valid, z, 1.0)
    A = np.empty((len(scene), 2, 2))
    A[:, 0, 0], A[:, 0, 1], A[:, 1, 0], A[:, 1, 1] = (proj.conic[:, 0], proj.conic[:, 1],
                                                      proj.conic[:, 1], proj.conic[:, 2])
    # conic (a, b, c) with b counted twice in the quadratic form
    GA = np.empty_like(A)
    GA[:, 0, 0] = gcon[:, 0]
    GA[:, 0, 1] = GA[:, 1, 0] = 0.5 * gcon[:, 1]
    GA[:, 1, 1] = gcon[:, 2]
    Gcov2 = -A @ GA @ A
    T = proj.J @ Wr
    GT = 2.0 * Gcov2 @ T @ proj.cov3d
    Gcov3 = np.transpose(T, (0, 2, 1)) @ Gcov2 @ T
    GJ = GT @ Wr.T
    gp = np.zeros((len(scene), 3))
    fx, fy = cam.fx, cam.fy
    gp[:, 0] = gm2[:, 0] * fx / zs - GJ[:, 0, 2] * fx / zs**2
    gp[:, 1] = gm2[:, 1] * fy / zs - GJ[:, 1, 2] * fy / zs**2
    gp[:, 2] = (gz - gm2[:, 0] * fx * x / zs**2 - gm2[:, 1] * fy * y / zs**2
                - GJ[:, 0, 0] * fx / zs**2 + GJ[:, 0, 2] * 2 * fx * x / zs**3
                - GJ[:, 1, 1] * fy / zs**2 + GJ[:, 1, 2] * 2 * fy * y / zs**3)
    gp[~proj.valid] = 0.0
    g_means = gp @ Wr

    # cov3d = (R S)(R S)^T
    Rm = proj.rotmats
    s = scene.scales
    Mq = Rm * s[:, None, :]
    GMq = 2.0 * Gcov3 @ Mq
    g_scales = np.einsum("nij,nij->nj", GMq, Rm)
    GR = GMq * s[:, None, :]
    g_quats = _rotmat_backward(scene.quats, GR)
    return {"means": g_means, "scales": g_scales, "quats": g_quats, "colors": gcol,
            "opacities": gop}


def _rotmat_backward(q_raw, GR):
    """Gradient w.r.t. raw quaternions of L(R(q / |q|)) given dL/dR."""
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q = q_raw / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    G = GR
    gw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2]
              - y * G[:, 2, 0] + x * G[:, 2, 1])
    gx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1]
              - w * G[:, 1, 2] + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    gy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0]
              + z * G[:, 1, 2] - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    gz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0]
              - 2 * z * G[:, 1, 1] + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    gq = np.stack([gw, gx, gy, gz], axis=1)
    gq = gq - np.sum(gq * q, axis=1, keepdims=True) * q
    return gq / norm


def gaussian_visibility(scene, cam, cfg: RenderConfig = DEFAULT_RENDER):
    """Fraction of each Gaussian's unoccluded footprint that survives compositing.

    1 means nothing in front of it; 0 means fully hidden or culled.
    """
    proj = project(scene, cam, cfg)
    wsum, asum = _raster.raster_weights(proj.mean2d, proj.conic,
                                        np.ascontiguousarray(scene.opacities), proj.radius,
                                        proj.tile_ptr, proj.tile_ids, cam.height, cam.width,
                                        cfg.alpha_max, cfg.t_min)
    return np.where(asum > 0, wsum / np.where(asum > 0, asum, 1.0), 0.0)


# --- image files ------------------------------------------------------------

_RAW_MAGIC = b"SPLF"


def write_ppm(path, image):
    """8-bit binary PPM (P6) of an (H, W, 3) image in [0, 1]."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    pix = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8)
    return pix.reshape(h, w, 3).astype(np.float64) / 255.0


def write_raw(path, image):
    """Lossless float32 dump.

    Layout (little-endian): 4-byte magic ``SPLF``, uint32 width, uint32 height,
    uint32 channels, then float32 samples stored channel-planar (all of channel
    0 row-major, then channel 1, ...).
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    h, w, ch = a.shape
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC + struct.pack("<III", w, h, ch))
        f.write(np.transpose(a, (2, 0, 1)).astype("<f4").tobytes())


def read_raw(path):
    data = Path(path).read_bytes()
    if data[:4] != _RAW_MAGIC:
        raise ValueError(f"{path}: bad raw image header")
    w, h, ch = struct.unpack("<III", data[4:16])
    planes = np.frombuffer(data[16:], dtype="<f4")
    if planes.size != w * h * ch:
        raise ValueError(f"{path}: truncated raw image")
    a = planes.reshape(ch, h, w).transpose(1, 2, 0).astype(np.float64)
    return a[:, :, 0] if ch == 1 else a
