"""Gradient-descent fitting of a Gaussian scene to posed images.

Parameters are optimized directly (no activation functions) with Adam and
re-projected onto their constraint sets after every step: scales floored at
``s_min``, opacity clipped to ``[eps, 1 - eps]``, colors to ``[0, 1]``,
quaternions renormalized.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, NonFiniteError
from .render import DEFAULT_RENDER, RenderConfig, project, render, render_backward
from .scene import Scene, load_scene, save_json
from .ssim import ssim_and_grad

log = logging.getLogger(__name__)

PARAMS = ("means", "scales", "quats", "colors", "opacities")


@dataclass(frozen=True)
class DensifyConfig:
    enabled: bool = False
    interval: int = 500
    grad_threshold: float = 2e-4
    prune_opacity: float = 0.02
    max_gaussians: int = 4000


@dataclass(frozen=True)
class OptimConfig:
    lr_mean: float = 0.01
    lr_mean_final: float = 1e-4  # position lr decays log-linearly to this at total_iters
    lr_scales: float = 0.005
    lr_rotation: float = 0.01
    lr_color: float = 0.025
    lr_opacity: float = 0.025
    total_iters: int = 3000
    lambda_ssim: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    s_min: float = 1e-3
    opacity_eps: float = 1e-3
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    render: RenderConfig = DEFAULT_RENDER
    divergence_factor: float = 10.0
    divergence_patience: int = 200

    def __post_init__(self):
        for name in ("lr_mean", "lr_scales", "lr_rotation", "lr_color", "lr_opacity"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise ConfigError("lambda_ssim must lie in [0, 1]")
        if not 0 < self.lr_mean_final <= self.lr_mean:
            raise ConfigError("lr_mean_final must lie in (0, lr_mean]")
        if self.total_iters < 0:
            raise ConfigError("total_iters must be >= 0")

    @property
    def learning_rates(self):
        return {"means": self.lr_mean, "scales": self.lr_scales, "quats": self.lr_rotation,
                "colors": self.lr_color, "opacities": self.lr_opacity}

    def lr_mean_at(self, iteration):
        if self.total_iters == 0:
            return self.lr_mean
        f = min(iteration / self.total_iters, 1.0)
        return self.lr_mean * (self.lr_mean_final / self.lr_mean) ** f

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        if "densify" in d and isinstance(d["densify"], dict):
            d["densify"] = DensifyConfig(**d["densify"])
        if "render" in d and isinstance(d["render"], dict):
            d["render"] = RenderConfig(**d["render"])
        return cls(**d)

    def hash(self):
        return config_hash(self.to_dict())


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainState:
    scene: Scene
    iteration: int = 0
    active_views: list = field(default_factory=list)  # (Camera, gt image) pairs
    rng_seed: int = 0
    moments: dict | None = None  # Adam first/second moments per parameter
    adam_step: int = 0
    initial_loss: float | None = None
    loss_history: list = field(default_factory=list)

    def add_view(self, cam, gt):
        self.active_views.append((cam, np.asarray(gt, dtype=np.float64)))

    def copy(self):
        moments = None if self.moments is None else {k: v.copy() for k, v in self.moments.items()}
        return dataclasses.replace(self, active_views=list(self.active_views), moments=moments,
                                   loss_history=list(self.loss_history))


def _check_dims(img, gt):
    if img.shape != gt.shape:
        raise ValueError(f"image shapes differ: {img.shape} vs {gt.shape}")


def photometric_loss(rendered, gt, lambda_ssim=0.2):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)``.

    ``rendered`` may be an array or a RenderedImage.
    """
    img = getattr(rendered, "pixels", rendered)
    img = np.asarray(img, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_dims(img, gt)
    return _loss_and_image_grad(img, gt, lambda_ssim)[0]


def _loss_and_image_grad(img, gt, lam):
    diff = img - gt
    l1 = float(np.mean(np.abs(diff)))
    g = (1.0 - lam) * np.sign(diff) / diff.size
    loss = (1.0 - lam) * l1
    if lam > 0:
        s, gs = ssim_and_grad(img, gt)
        loss += lam * (1.0 - s)
        g = g - lam * gs
    return loss, g


def _view_loss_grad(scene, cam, gt, config):
    proj = project(scene, cam, config.render)
    img, _ = render(scene, cam, config.render, proj=proj)
    _check_dims(img.pixels, gt)
    loss, g_img = _loss_and_image_grad(img.pixels, gt, config.lambda_ssim)
    grads = render_backward(scene, cam, proj, g_img, cfg=config.render)
    return loss, grads


def loss_gradients(state, view_batch=None, config=None):
    """Mean loss and per-parameter gradients over ``view_batch`` (indices into active views).

    Returns ``(loss, grads)`` with ``grads`` keyed like the scene fields.
    """
    config = config or OptimConfig()
    if view_batch is None:
        view_batch = range(len(state.active_views))
    view_batch = list(view_batch)
    if not view_batch:
        raise ValueError("empty view batch")
    total = {k: np.zeros_like(getattr(state.scene, k)) for k in PARAMS}
    loss = 0.0
    for i in view_batch:
        cam, gt = state.active_views[i]
        li, gi = _view_loss_grad(state.scene, cam, gt, config)
        loss += li
        for k in PARAMS:
            total[k] += gi[k]
    n = len(view_batch)
    for k in PARAMS:
        total[k] /= n
        if not np.all(np.isfinite(total[k])):
            bad = int(np.flatnonzero(~np.isfinite(total[k]).reshape(len(state.scene), -1)
                                     .all(axis=1))[0])
            raise NonFiniteError(f"non-finite gradient for {k} of Gaussian {bad}")
    return loss / n, total


def init_scene(bounds, n_init, seed, background=(0.0, 0.0, 0.0)):
    """Uniform random gray Gaussians filling the box ``[-bounds, bounds]``."""
    if n_init < 1:
        raise ConfigError("n_init must be >= 1")
    bounds = np.asarray(bounds, dtype=np.float64)
    rng = np.random.default_rng(seed)
    means = rng.uniform(-bounds, bounds, size=(n_init, 3))
    scale = 2.0 * np.linalg.norm(bounds) / n_init ** (1.0 / 3.0) / 4.0
    return Scene(means=means, scales=np.full((n_init, 3), scale),
                 quats=np.tile([1.0, 0.0, 0.0, 0.0], (n_init, 1)),
                 colors=np.full((n_init, 3), 0.5), opacities=np.full(n_init, 0.1),
                 background=np.asarray(background, dtype=np.float64))


def _project_constraints(p, config):
    p["scales"] = np.maximum(p["scales"], config.s_min)
    p["opacities"] = np.clip(p["opacities"], config.opacity_eps, 1.0 - config.opacity_eps)
    p["colors"] = np.clip(p["colors"], 0.0, 1.0)
    p["quats"] = p["quats"] / np.linalg.norm(p["quats"], axis=1, keepdims=True)
    return p


def _step_view(seed, iteration, n_views):
    return int(np.random.default_rng([seed, iteration]).integers(n_views))


def _densify(params, moments, grad_accum, n_accum, config, rng):
    dc = config.densify
    avg = grad_accum / max(n_accum, 1)
    keep = params["opacities"] >= dc.prune_opacity
    if keep.sum() == 0:
        keep[np.argmax(params["opacities"])] = True
    clone = keep & (avg > dc.grad_threshold)
    room = dc.max_gaussians - int(keep.sum())
    if room <= 0:
        clone[:] = False
    elif clone.sum() > room:
        clone[np.flatnonzero(clone)[room:]] = False
    ci = np.flatnonzero(clone)
    jitter = rng.normal(size=(len(ci), 3)) * params["scales"][ci]
    for k in PARAMS:
        extra = params[k][ci].copy()
        if k == "means":
            extra = extra + jitter
        params[k] = np.concatenate([params[k][keep], extra])
        for m in ("m", "v"):
            key = f"{m}_{k}"
            moments[key] = np.concatenate([moments[key][keep], np.zeros_like(extra)])
    return params, moments, keep, len(ci)


def fit(state: TrainState, config: OptimConfig, until_iter: int) -> TrainState:
    """Run Adam steps (one seeded random active view per step) up to ``until_iter``."""
    if until_iter <= state.iteration:
        return state
    if not state.active_views:
        raise ValueError("fit needs at least one active view")
    state = state.copy()
    params = {k: np.array(getattr(state.scene, k)) for k in PARAMS}
    tags = np.array(state.scene.tags)
    if state.moments is None:
        state.moments = {f"{m}_{k}": np.zeros_like(params[k]) for k in PARAMS for m in ("m", "v")}
    moments = state.moments
    lrs = config.learning_rates
    b1, b2 = config.beta1, config.beta2
    grad_accum = np.zeros(len(params["means"]))
    n_accum = 0
    over = 0
    densify_rng = np.random.default_rng([state.rng_seed, 0xD3])
    while state.iteration < until_iter:
        scene = state.scene.replace(**params, tags=tags)
        v = _step_view(state.rng_seed, state.iteration, len(state.active_views))
        cam, gt = state.active_views[v]
        loss, grads = _view_loss_grad(scene, cam, gt, config)
        for k in PARAMS:
            if not np.all(np.isfinite(grads[k])):
                raise NonFiniteError(f"non-finite gradient for {k} at iteration {state.iteration}")
        if state.initial_loss is None:
            state.initial_loss = loss
        state.loss_history.append(loss)
        over = over + 1 if loss > config.divergence_factor * state.initial_loss else 0
        if over >= config.divergence_patience:
            raise DivergenceError(
                f"loss {loss:.4g} above {config.divergence_factor}x initial "
                f"{state.initial_loss:.4g} for {over} steps (iteration {state.iteration})")
        state.adam_step += 1
        t = state.adam_step
        lrs["means"] = config.lr_mean_at(state.iteration)
        for k in PARAMS:
            g = grads[k]
            m = moments[f"m_{k}"]
            s = moments[f"v_{k}"]
            m *= b1
            m += (1 - b1) * g
            s *= b2
            s += (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = s / (1 - b2**t)
            params[k] = params[k] - lrs[k] * mhat / (np.sqrt(vhat) + config.adam_eps)
        params = _project_constraints(params, config)
        state.iteration += 1
        if config.densify.enabled:
            grad_accum += np.linalg.norm(grads["means"], axis=1)
            n_accum += 1
            if state.iteration % config.densify.interval == 0:
                params, moments, keep, n_new = _densify(params, moments, grad_accum, n_accum,
                                                        config, densify_rng)
                tags = np.concatenate([tags[keep], np.zeros(n_new, dtype=np.int64)])
                grad_accum = np.zeros(len(params["means"]))
                n_accum = 0
    state.moments = moments
    state.scene = state.scene.replace(**params, tags=tags)
    return state


def save_checkpoint(path_stem, state, config):
    """Write ``<stem>.json`` (scene) and ``<stem>.meta.json`` (iteration, seed, config hash)."""
    stem = Path(path_stem)
    save_json(state.scene, stem.with_suffix(".json"))
    meta = {"iteration": state.iteration, "seed": state.rng_seed, "config_hash": config.hash()}
    stem.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1))


def load_checkpoint(path_stem):
    stem = Path(path_stem)
    try:
        scene = load_scene(stem.with_suffix(".json"))
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"unreadable checkpoint {stem}: {exc}") from exc
    return scene, meta
