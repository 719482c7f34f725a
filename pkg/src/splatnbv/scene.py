"""Scene primitives, procedural ground-truth scenes and viewpoint sampling.

A :class:`Scene` stores its Gaussians as parallel arrays (the layout the
renderer and optimizer work on); :class:`Gaussian3D` is the per-primitive
view used for construction and validation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import ConfigError

LAYOUTS = ("blob-cluster", "textured-box", "occluded-cavity")

CAVITY_TAG = 1


def quat_to_rotmat(q):
    """Rotation matrices from wxyz quaternions, shape (..., 4) -> (..., 3, 3).

    Quaternions are normalized first.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R):
    """wxyz quaternion (w >= 0) of a rotation matrix."""
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    return q if w >= 0 else -q


@dataclass(frozen=True)
class Gaussian3D:
    mean: np.ndarray
    scales: np.ndarray
    rotation: np.ndarray  # wxyz
    color: np.ndarray
    opacity: float

    def __post_init__(self):
        for name in ("mean", "scales", "rotation", "color"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.mean.shape != (3,) or self.scales.shape != (3,) or self.color.shape != (3,):
            raise ValueError("mean, scales and color must be 3-vectors")
        if self.rotation.shape != (4,):
            raise ValueError("rotation must be a wxyz quaternion")
        if not np.all(np.isfinite(self.scales)) or np.any(self.scales <= 0):
            raise ValueError(f"scales must be positive and finite, got {self.scales}")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must have unit norm")
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise ValueError("color components must lie in [0, 1]")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie in (0, 1)")

    @property
    def covariance(self):
        R = quat_to_rotmat(self.rotation)
        return R @ np.diag(self.scales**2) @ R.T


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Scene:
    """Ordered collection of Gaussians stored as parallel arrays.

    ``tags`` is an integer label per Gaussian (0 = plain, ``CAVITY_TAG`` marks
    cavity interior in generated scenes). It never affects rendering.
    """

    means: np.ndarray
    scales: np.ndarray
    quats: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tags: np.ndarray | None = None

    def __post_init__(self):
        n = len(np.asarray(self.means).reshape(-1, 3))
        object.__setattr__(self, "means", _frozen(np.reshape(self.means, (n, 3))))
        object.__setattr__(self, "scales", _frozen(np.reshape(self.scales, (n, 3))))
        object.__setattr__(self, "quats", _frozen(np.reshape(self.quats, (n, 4))))
        object.__setattr__(self, "colors", _frozen(np.reshape(self.colors, (n, 3))))
        object.__setattr__(self, "opacities", _frozen(np.reshape(self.opacities, (n,))))
        object.__setattr__(self, "background", _frozen(self.background))
        tags = np.zeros(n, dtype=np.int64) if self.tags is None else self.tags
        object.__setattr__(self, "tags", _frozen(tags, np.int64))
        if self.tags.shape != (n,):
            raise ValueError("tags must have one entry per Gaussian")

    def __len__(self):
        return len(self.means)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("means", "scales", "quats", "colors", "opacities", "background", "tags")
        )

    @classmethod
    def from_gaussians(cls, gaussians, background=(0.0, 0.0, 0.0), tags=None):
        gaussians = list(gaussians)
        return cls(
            means=np.array([g.mean for g in gaussians]).reshape(-1, 3),
            scales=np.array([g.scales for g in gaussians]).reshape(-1, 3),
            quats=np.array([g.rotation for g in gaussians]).reshape(-1, 4),
            colors=np.array([g.color for g in gaussians]).reshape(-1, 3),
            opacities=np.array([g.opacity for g in gaussians]),
            background=background,
            tags=tags,
        )

    @property
    def gaussians(self):
        return [
            Gaussian3D(self.means[i], self.scales[i], self.quats[i], self.colors[i],
                       float(self.opacities[i]))
            for i in range(len(self))
        ]

    def replace(self, **changes):
        fields = dict(means=self.means, scales=self.scales, quats=self.quats,
                      colors=self.colors, opacities=self.opacities,
                      background=self.background, tags=self.tags)
        fields.update(changes)
        return Scene(**fields)

    def covariances(self):
        R = quat_to_rotmat(self.quats)
        return R @ (self.scales[:, :, None] ** 2 * np.transpose(R, (0, 2, 1)))

    def to_dict(self):
        out = {
            "gaussians": [
                {
                    "mean": self.means[i].tolist(),
                    "scales": self.scales[i].tolist(),
                    "rotation_quat_wxyz": self.quats[i].tolist(),
                    "color": self.colors[i].tolist(),
                    "opacity": float(self.opacities[i]),
                    "tag": int(self.tags[i]),
                }
                for i in range(len(self))
            ],
            "background_color": self.background.tolist(),
        }
        return out

    @classmethod
    def from_dict(cls, d):
        gs = d["gaussians"]
        return cls(
            means=np.array([g["mean"] for g in gs], dtype=np.float64).reshape(-1, 3),
            scales=np.array([g["scales"] for g in gs], dtype=np.float64).reshape(-1, 3),
            quats=np.array([g["rotation_quat_wxyz"] for g in gs], dtype=np.float64).reshape(-1, 4),
            colors=np.array([g["color"] for g in gs], dtype=np.float64).reshape(-1, 3),
            opacities=np.array([g["opacity"] for g in gs], dtype=np.float64),
            background=np.array(d.get("background_color", [0.0, 0.0, 0.0])),
            tags=np.array([g.get("tag", 0) for g in gs], dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with a world-to-camera pose (OpenCV axes: x right, y down, z forward).

    Pixel ``(row, col)`` is sampled at image-plane coordinates ``(u, v) = (col, row)``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        R = self.rotation
        if R.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")

    @property
    def center(self):
        return -self.rotation.T @ self.translation

    @property
    def fov_deg(self):
        return math.degrees(2 * math.atan(0.5 * self.width / self.fx))

    @property
    def forward(self):
        return self.rotation[2].copy()

    def same_intrinsics(self, other):
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height) == (
            other.fx, other.fy, other.cx, other.cy, other.width, other.height)

    def same_pose(self, other, atol=0.0):
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def with_resolution(self, width, height):
        """Same field of view at a new image size, keeping pixel-center sampling consistent."""
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5,
                      (self.cy + 0.5) * sy - 0.5, width, height, self.rotation, self.translation)

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), np.array(d["rotation"]),
                   np.array(d["translation"]))


def intrinsics_from_fov(width, height, fov_deg):
    """(fx, fy, cx, cy) for a horizontal field of view, principal point at the image center."""
    fx = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return fx, fx, (width - 1) / 2.0, (height - 1) / 2.0


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World-to-camera (R, t) for a camera at ``eye`` looking at ``target``.

    Falls back to +y as up vector when the viewing direction is parallel to ``up``.
    """
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f /= np.linalg.norm(f)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-9:
        r = np.cross(f, (0.0, 1.0, 0.0))
    r /= np.linalg.norm(r)
    d = np.cross(f, r)
    R = np.stack([r, d, f])
    return R, -R @ eye


@dataclass(eq=False)
class ViewpointSet:
    cameras: list
    selected_mask: np.ndarray = None

    def __post_init__(self):
        if self.selected_mask is None:
            self.selected_mask = np.zeros(len(self.cameras), dtype=bool)
        self.selected_mask = np.asarray(self.selected_mask, dtype=bool)

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    def to_dict(self):
        return {"cameras": [c.to_dict() for c in self.cameras],
                "selected_mask": self.selected_mask.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls([Camera.from_dict(c) for c in d["cameras"]], np.array(d["selected_mask"]))


def sample_sphere_viewpoints(n, radius, center=(0.0, 0.0, 0.0), seed=0, width=64,
                             height=64, fov_deg=50.0):
    """Cameras on a Fibonacci sphere lattice, all looking at ``center``.

    Index 0 sits nearest the +z pole; the lattice longitude is rotated by a
    seeded random offset so different seeds give disjoint pose sets.
    """
    if n < 1:
        raise ConfigError("need at least one viewpoint")
    if radius <= 0:
        raise ConfigError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    offset = np.random.default_rng(seed).uniform(0.0, 2 * math.pi)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    fx, fy, cx, cy = intrinsics_from_fov(width, height, fov_deg)
    cams = []
    for i in range(n):
        z = 1.0 - (2 * i + 1) / n
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        theta = offset + golden * i
        eye = center + radius * np.array([rho * math.cos(theta), rho * math.sin(theta), z])
        R, t = look_at(eye, center)
        cams.append(Camera(fx, fy, cx, cy, width, height, R, t))
    return ViewpointSet(cams)


def interpolate_path(a, b, k):
    """k poses from ``a`` to ``b``: linear in camera center, slerp in orientation."""
    if k < 2:
        raise ConfigError("a path needs at least 2 poses")
    if not a.same_intrinsics(b):
        raise ValueError("path endpoints must share intrinsics")
    rots = Rotation.from_matrix(np.stack([a.rotation, b.rotation]))
    slerp = Slerp([0.0, 1.0], rots)
    ca, cb = a.center, b.center
    out = [a]
    for s in np.linspace(0.0, 1.0, k)[1:-1]:
        R = slerp([s]).as_matrix()[0]
        c = (1 - s) * ca + s * cb
        out.append(Camera(a.fx, a.fy, a.cx, a.cy, a.width, a.height, R, -R @ c))
    out.append(b)
    return out


# --- procedural scenes ------------------------------------------------------

def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def _face_quat(normal_axis):
    """Quaternion rotating the local z axis onto world axis ``normal_axis``."""
    return {0: np.array([math.sqrt(0.5), 0.0, math.sqrt(0.5), 0.0]),
            1: np.array([math.sqrt(0.5), -math.sqrt(0.5), 0.0, 0.0]),
            2: np.array([1.0, 0.0, 0.0, 0.0])}[normal_axis]


def _blob_cluster(rng, n, bounds):
    means = np.clip(rng.normal(scale=0.4, size=(n, 3)) * bounds, -bounds, bounds)
    size = float(np.mean(bounds))
    scales = size * np.exp(rng.uniform(np.log(0.08), np.log(0.35), size=(n, 3)))
    colors = rng.uniform(0.05, 0.95, size=(n, 3))
    opac = rng.uniform(0.6, 0.95, size=n)
    return means, scales, _random_quats(rng, n), colors, opac, np.zeros(n, dtype=np.int64)


def _surface_points(rng, n, half, faces):
    """Uniform points on the listed faces (axis, sign) of an axis-aligned box."""
    areas = np.array([np.prod(np.delete(2 * half, ax)) for ax, _ in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = rng.uniform(-half, half, size=(n, 3))
    axes = np.array([faces[w][0] for w in which])
    signs = np.array([faces[w][1] for w in which])
    pts[np.arange(n), axes] = signs * half[axes]
    return pts, axes


def _checker(pts, cell, c0, c1):
    k = np.floor(pts / cell).astype(np.int64).sum(axis=1) % 2
    return np.where(k[:, None] == 0, c0, c1)


def _textured_box(rng, n, bounds):
    half = 0.6 * bounds
    faces = [(ax, s) for ax in range(3) for s in (-1, 1)]
    pts, axes = _surface_points(rng, n, half, faces)
    spacing = math.sqrt(2 * np.sum(4 * half * np.roll(half, 1)) / max(n, 1))
    scales = np.full((n, 3), 0.6 * spacing)
    scales[:, 2] = 0.02 * float(np.mean(bounds))
    quats = np.stack([_face_quat(a) for a in axes])
    colors = _checker(pts, 0.5 * float(np.mean(half)), np.array([0.9, 0.8, 0.2]),
                      np.array([0.15, 0.3, 0.8]))
    colors = np.clip(colors + rng.uniform(-0.05, 0.05, size=colors.shape), 0, 1)
    return pts, scales, quats, colors, np.full(n, 0.9), np.zeros(n, dtype=np.int64)


def _occluded_cavity(rng, n, bounds):
    """Box shell open through a window in its +x face, with tagged interior content.

    A third of the Gaussians line the inside of the back wall, floor and side
    walls; they can only be seen through the window.
    """
    half = 0.7 * bounds
    n_in = max(1, n // 3)
    n_shell = n - n_in
    faces = [(0, -1), (1, -1), (1, 1), (2, -1), (2, 1), (0, 1)]
    pts = np.empty((0, 3))
    axes = np.empty(0, dtype=np.int64)
    window = 0.7
    # rejection-sample shell points so the +x face keeps a square window
    while len(pts) < n_shell:
        p, a = _surface_points(rng, 2 * n_shell, half, faces)
        keep = ~((a == 0) & (p[:, 0] > 0) & (np.abs(p[:, 1]) < window * half[1])
                 & (np.abs(p[:, 2]) < window * half[2]))
        pts = np.concatenate([pts, p[keep]])
        axes = np.concatenate([axes, a[keep]])
    pts, axes = pts[:n_shell], axes[:n_shell]
    area = sum(np.prod(np.delete(2 * half, ax)) for ax, _ in faces)
    spacing = math.sqrt(area / max(n_shell, 1))
    s_shell = np.full((n_shell, 3), 0.75 * spacing)
    s_shell[:, 2] = 0.03 * float(np.mean(bounds))
    q_shell = np.stack([_face_quat(a) for a in axes])
    c_shell = _checker(pts, 0.7 * float(np.mean(half)), np.array([0.75, 0.75, 0.7]),
                       np.array([0.45, 0.5, 0.55]))
    c_shell = np.clip(c_shell + rng.uniform(-0.04, 0.04, size=c_shell.shape), 0, 1)

    inner = 0.85 * half
    p_in, a_in = _surface_points(rng, n_in, inner, [(0, -1), (2, -1), (1, -1), (1, 1)])
    in_area = 4 * (inner[1] * inner[2] + inner[0] * inner[1] + 2 * inner[0] * inner[2])
    s_in = np.full((n_in, 3), 0.7 * math.sqrt(in_area / n_in))
    s_in[:, 2] = 0.03 * float(np.mean(bounds))
    q_in = np.stack([_face_quat(a) for a in a_in])
    hue = rng.uniform(0, 1, size=n_in)
    c_in = np.stack([0.5 + 0.45 * np.cos(2 * np.pi * (hue + k / 3)) for k in range(3)], axis=1)

    means = np.concatenate([pts, p_in])
    scales = np.concatenate([s_shell, s_in])
    quats = np.concatenate([q_shell, q_in])
    colors = np.concatenate([c_shell, c_in])
    opac = np.full(n, 0.95)
    tags = np.concatenate([np.zeros(n_shell, dtype=np.int64), np.full(n_in, CAVITY_TAG)])
    return means, scales, quats, colors, opac, tags


_GENERATORS = {
    "blob-cluster": _blob_cluster,
    "textured-box": _textured_box,
    "occluded-cavity": _occluded_cavity,
}


def generate_synthetic_scene(seed, n_gaussians, layout="blob-cluster", bounds=(1.0, 1.0, 1.0),
                             background=(0.0, 0.0, 0.0)):
    """Deterministic procedural ground-truth scene inside the box ``[-bounds, bounds]``."""
    if layout not in _GENERATORS:
        raise ConfigError(f"unknown scene layout {layout!r}; expected one of {LAYOUTS}")
    bounds = np.asarray(bounds, dtype=np.float64)
    if n_gaussians < 1:
        raise ConfigError("n_gaussians must be >= 1")
    if bounds.shape != (3,) or np.any(bounds <= 0):
        raise ConfigError("bounds must be a positive 3-vector")
    rng = np.random.default_rng(seed)
    means, scales, quats, colors, opac, tags = _GENERATORS[layout](rng, n_gaussians, bounds)
    return Scene(means, scales, quats, colors, opac, np.asarray(background, dtype=np.float64), tags)


def scene_diameter(bounds):
    return float(2.0 * np.linalg.norm(np.asarray(bounds, dtype=np.float64)))


def save_json(obj, path):
    """Write a Scene or ViewpointSet as JSON (floats at full repr precision)."""
    Path(path).write_text(json.dumps(obj.to_dict(), indent=1))


def load_scene(path):
    return Scene.from_dict(json.loads(Path(path).read_text()))


def load_viewpoints(path):
    return ViewpointSet.from_dict(json.loads(Path(path).read_text()))
