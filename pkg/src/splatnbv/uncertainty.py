"""Per-pixel render uncertainty (R) and depth uncertainty (D) maps.

Maps are plain ``(H, W)`` float arrays with values in [0, 1]. Three predictor
kinds share one call signature, ``predictor(rendered, depth, cam) -> (R, D)``:

* :class:`OraclePredictor` compares against ground-truth renders (simulation only),
* :class:`HeuristicPredictor` uses hand-built image statistics,
* :class:`TrainedPredictor` applies two per-pixel ridge regressors fitted on
  oracle labels.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .optim import OptimConfig, TrainState, fit, init_scene
from .render import DEFAULT_RENDER, RenderedImage, read_raw, render, write_raw
from .scene import sample_sphere_viewpoints
from .ssim import ssim_map

log = logging.getLogger(__name__)

# soft-saturation scales and mixing weights of the heuristic predictor
VAR_SCALE = 0.01
LAP_SCALE = 0.05
DEPTH_GRAD_SCALE = 0.05
R_WEIGHTS = (0.35, 0.35, 0.30)  # color variance, laplacian energy, coverage
D_WEIGHTS = (0.60, 0.40)  # depth gradient, coverage

BASE_FEATURES = ("color_var", "laplacian_energy", "uncovered", "depth_grad",
                 "mean_r", "mean_g", "mean_b", "depth",
                 "partial_cover", "color_std", "laplacian_rms", "depth_grad_sqrt")
# the oracle label is a windowed statistic, so every base feature is also
# offered blurred at the SSIM window width and at a wider context scale
CONTEXT_SIGMAS = (1.5, 4.0)
FEATURE_NAMES = BASE_FEATURES + tuple(f"{n}@{s:g}" for s in CONTEXT_SIGMAS for n in BASE_FEATURES)

__all__ = [
    "ssim_map", "oracle_uncertainty", "depth_error_label", "heuristic_uncertainty",
    "pixel_features", "PatchRegressorModel", "train_patch_regressor", "predict",
    "build_training_set", "OraclePredictor", "HeuristicPredictor", "TrainedPredictor",
]


def _pixels(x):
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


def _depth(x):
    return np.asarray(getattr(x, "depth", x), dtype=np.float64)


def oracle_uncertainty(rendered, gt):
    """``(1 - SSIM) / 2`` per pixel: 0 where the render matches, 1 for anti-correlation."""
    return np.clip((1.0 - ssim_map(_pixels(rendered), _pixels(gt))) / 2.0, 0.0, 1.0)


def depth_error_label(rendered_depth, gt_depth, depth_scale):
    """Absolute depth error in units of ``depth_scale``, clipped to [0, 1]."""
    r, g = _depth(rendered_depth), _depth(gt_depth)
    if r.shape != g.shape:
        raise ValueError(f"depth shapes differ: {r.shape} vs {g.shape}")
    return np.clip(np.abs(r - g) / depth_scale, 0.0, 1.0)


def _color_var(img):
    m = ndimage.uniform_filter(img, size=(3, 3, 1), mode="nearest")
    m2 = ndimage.uniform_filter(img * img, size=(3, 3, 1), mode="nearest")
    return np.maximum(m2 - m * m, 0.0).mean(axis=2), m


def _lap_energy(img):
    lap = np.stack([ndimage.laplace(img[:, :, c], mode="nearest") for c in range(img.shape[2])],
                   axis=2)
    return (lap * lap).mean(axis=2)


def _depth_grad(d):
    if min(d.shape) < 2:
        return np.zeros_like(d)
    gy, gx = np.gradient(d)
    return np.hypot(gx, gy)


def pixel_features(rendered, depth, depth_scale):
    """(H, W, F) stack of the features in ``FEATURE_NAMES``; the first four feed the heuristic."""
    img = _pixels(rendered)
    acc = np.asarray(rendered.accum_alpha, dtype=np.float64)
    dn = _depth(depth) / depth_scale
    var, mean = _color_var(img)
    lap = _lap_energy(img)
    grad = _depth_grad(dn)
    base = np.stack([var, lap, 1.0 - acc, grad, mean[:, :, 0], mean[:, :, 1], mean[:, :, 2], dn,
                     acc * (1.0 - acc), np.sqrt(var), np.sqrt(lap), np.sqrt(grad)], axis=2)
    ctx = [ndimage.gaussian_filter(base, (s, s, 0), mode="nearest") for s in CONTEXT_SIGMAS]
    return np.concatenate([base, *ctx], axis=2)


def heuristic_uncertainty(rendered, depth, depth_scale=1.0):
    """Ground-truth-free (R, D) from local image statistics.

    Each feature passes through a fixed ``tanh`` saturation before mixing, so
    the output never depends on per-image normalization.
    """
    f = pixel_features(rendered, depth, depth_scale)
    uncovered = f[:, :, 2]
    wv, wl, wc = R_WEIGHTS
    R = (wv * np.tanh(f[:, :, 0] / VAR_SCALE) + wl * np.tanh(f[:, :, 1] / LAP_SCALE)
         + wc * uncovered)
    wg, wc2 = D_WEIGHTS
    D = wg * np.tanh(f[:, :, 3] / DEPTH_GRAD_SCALE) + wc2 * uncovered
    return np.clip(R, 0.0, 1.0), np.clip(D, 0.0, 1.0)


# --- learned per-pixel regressor ---------------------------------------------

@dataclass
class PatchRegressorModel:
    feature_names: list
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if not (len(self.feature_names) == len(self.weights) == len(self.mean) == len(self.std)):
            raise ValueError("feature count does not match weights/normalization")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("model weights must be finite")

    def apply(self, feats):
        z = (feats - self.mean) / self.std
        return np.clip(z @ self.weights + self.bias, 0.0, 1.0)

    def to_dict(self):
        return {"feature_names": list(self.feature_names), "weights": self.weights.tolist(),
                "bias": float(self.bias),
                "normalization": {"mean": self.mean.tolist(), "std": self.std.tolist()}}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["feature_names"]), d["weights"], float(d["bias"]),
                   d["normalization"]["mean"], d["normalization"]["std"])


def _ridge(X, y, lam):
    """Closed-form ridge on standardized features; the intercept is not penalized."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    Z = (X - mean) / std
    ym = float(y.mean())
    A = Z.T @ Z
    b = Z.T @ (y - ym)
    while True:
        M = A + lam * np.eye(A.shape[0])
        if np.linalg.cond(M) < 1e12:
            break
        warnings.warn(f"near-singular normal matrix; raising ridge penalty above {lam:g}",
                      RuntimeWarning, stacklevel=3)
        lam *= 10.0
    w = np.linalg.solve(M, b)
    return w, ym, mean, std


def train_patch_regressor(features, labels, lam=1e-3, feature_names=FEATURE_NAMES):
    """Fit one ridge model mapping per-pixel features (..., F) to labels (...)."""
    X = np.asarray(features, dtype=np.float64).reshape(-1, len(feature_names))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    w, b, mean, std = _ridge(X, y, lam)
    return PatchRegressorModel(list(feature_names), w, b, mean, std)


@dataclass
class Sample:
    rendered: np.ndarray
    accum_alpha: np.ndarray
    depth: np.ndarray
    oracle_r: np.ndarray
    oracle_d: np.ndarray
    n_train_views: int = 0


def _sample_features(s, depth_scale):
    return pixel_features(RenderedImage(s.rendered, s.accum_alpha), s.depth, depth_scale)


def fit_predictor(dataset, depth_scale, lam=1e-3):
    """Train the R and D regressors on a list of :class:`Sample`; returns a TrainedPredictor."""
    if not dataset:
        raise ValueError("empty dataset")
    feats = np.concatenate([_sample_features(s, depth_scale).reshape(-1, len(FEATURE_NAMES))
                            for s in dataset])
    r = np.concatenate([s.oracle_r.reshape(-1) for s in dataset])
    d = np.concatenate([s.oracle_d.reshape(-1) for s in dataset])
    return TrainedPredictor(train_patch_regressor(feats, r, lam),
                            train_patch_regressor(feats, d, lam), depth_scale)


def predict(models, rendered, depth, depth_scale):
    """(R, D) from a ``(model_r, model_d)`` pair."""
    f = pixel_features(rendered, depth, depth_scale)
    return models[0].apply(f), models[1].apply(f)


def build_training_set(gt_scene, train_view_counts, holdout_views, seed, *, bounds=(1, 1, 1),
                       radius=4.0, n_init=100, optim_config=None, render_cfg=DEFAULT_RENDER,
                       depth_scale=None):
    """Oracle-labelled samples from reconstructions of varying quality.

    For every count, a fresh model is fitted from that many sphere views, then
    each holdout view is rendered and paired with its oracle R and D labels.
    """
    if any(c < 2 for c in train_view_counts):
        raise ValueError("training view counts must be >= 2")
    holdout_views = list(holdout_views)
    if not holdout_views:
        return []
    bounds = np.asarray(bounds, dtype=np.float64)
    if depth_scale is None:
        depth_scale = float(2 * np.linalg.norm(bounds))
    optim_config = optim_config or OptimConfig(total_iters=1500)
    cam0 = holdout_views[0]
    gt_holdout = [render(gt_scene, c, render_cfg) for c in holdout_views]
    out = []
    for j, count in enumerate(train_view_counts):
        views = sample_sphere_viewpoints(count, radius, seed=seed * 1000 + j, width=cam0.width,
                                         height=cam0.height, fov_deg=cam0.fov_deg)
        state = TrainState(init_scene(bounds, n_init, seed * 1000 + j,
                                      background=gt_scene.background), rng_seed=seed * 1000 + j)
        for cam in views.cameras:
            state.add_view(cam, render(gt_scene, cam, render_cfg)[0].pixels)
        state = fit(state, optim_config, optim_config.total_iters)
        for cam, (gimg, gdep) in zip(holdout_views, gt_holdout):
            img, dep = render(state.scene, cam, render_cfg)
            out.append(Sample(img.pixels, img.accum_alpha, dep.depth,
                              oracle_uncertainty(img, gimg),
                              depth_error_label(dep, gdep, depth_scale), count))
    return out


def save_dataset(dataset, directory):
    """float32 raw dumps per array plus ``index.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = []
    for i, s in enumerate(dataset):
        entry = {"n_train_views": s.n_train_views}
        for name in ("rendered", "accum_alpha", "depth", "oracle_r", "oracle_d"):
            fn = f"{i:05d}_{name}.f32"
            write_raw(d / fn, getattr(s, name))
            entry[name] = fn
        index.append(entry)
    (d / "index.json").write_text(json.dumps(index, indent=1))


def load_dataset(directory):
    d = Path(directory)
    index = json.loads((d / "index.json").read_text())
    return [Sample(*(read_raw(d / e[n]) for n in ("rendered", "accum_alpha", "depth",
                                                  "oracle_r", "oracle_d")),
                   n_train_views=e["n_train_views"]) for e in index]


# --- predictors ----------------------------------------------------------------

def _pose_key(cam):
    return (cam.rotation.tobytes(), cam.translation.tobytes(), cam.fx, cam.fy, cam.cx, cam.cy,
            cam.width, cam.height)


@dataclass
class OraclePredictor:
    """Uncertainty from ground truth: SSIM-based R, normalized depth error D."""

    gt_scene: object
    depth_scale: float
    render_cfg: object = DEFAULT_RENDER
    _cache: dict = field(default_factory=dict, repr=False)

    def ground_truth(self, cam):
        key = _pose_key(cam)
        if key not in self._cache:
            self._cache[key] = render(self.gt_scene, cam, self.render_cfg)
        return self._cache[key]

    def __call__(self, rendered, depth, cam):
        gimg, gdep = self.ground_truth(cam)
        return oracle_uncertainty(rendered, gimg), depth_error_label(depth, gdep, self.depth_scale)


@dataclass
class HeuristicPredictor:
    depth_scale: float = 1.0

    def __call__(self, rendered, depth, cam=None):
        return heuristic_uncertainty(rendered, depth, self.depth_scale)


@dataclass
class TrainedPredictor:
    model_r: PatchRegressorModel
    model_d: PatchRegressorModel
    depth_scale: float = 1.0

    def __call__(self, rendered, depth, cam=None):
        return predict((self.model_r, self.model_d), rendered, depth, self.depth_scale)

    def to_dict(self):
        return {"render_uncertainty": self.model_r.to_dict(),
                "depth_uncertainty": self.model_d.to_dict(), "depth_scale": self.depth_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(PatchRegressorModel.from_dict(d["render_uncertainty"]),
                   PatchRegressorModel.from_dict(d["depth_uncertainty"]), float(d["depth_scale"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))
