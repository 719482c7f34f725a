"""Scalar view scores from depth and uncertainty maps.

    l_blend   = sum D * R
    l_blend*  = sum D * R * (1 - Du)
    l         = l_blend + lambda0 * l_blend* + lambda1 * sum R + lambda2 * sum Du

with D the composited depth (optionally divided by ``depth_scale``), R the
render uncertainty and Du the depth uncertainty. Sums are raw sums over
pixels, computed with ``np.sum`` on C-ordered arrays so results are
bit-reproducible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

VARIANTS = ("full", "no_depth_uq", "no_depth_blending", "depth_squared")


@dataclass(frozen=True)
class ScoreWeights:
    lambda0: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 0.1

    def __post_init__(self):
        for v in (self.lambda0, self.lambda1, self.lambda2):
            if not np.isfinite(v) or v < 0:
                raise ConfigError("score weights must be finite and non-negative")

    def scaled(self, c):
        return ScoreWeights(self.lambda0 * c, self.lambda1 * c, self.lambda2 * c)


@dataclass(frozen=True)
class ViewScore:
    l_blend: float
    l_blend_star: float
    sum_R: float
    sum_D: float
    total: float
    view_id: int = -1


def _maps(depth, *maps):
    d = np.ascontiguousarray(getattr(depth, "depth", depth), dtype=np.float64)
    out = [np.ascontiguousarray(m, dtype=np.float64) for m in maps]
    for m in out:
        if m.shape != d.shape:
            raise ValueError(f"map shapes differ: {d.shape} vs {m.shape}")
    if np.any(d < 0):
        raise ValueError("depth must be non-negative")
    return d, out


def _weights(d, mode, depth_scale):
    if depth_scale is not None:
        d = d / depth_scale
    if mode == "linear":
        return d
    if mode == "squared":
        return d * d
    raise ConfigError(f"unknown blend mode {mode!r}")


def blend(depth, r, mode="linear", depth_scale=None):
    """Depth-weighted sum of render uncertainty."""
    d, (r,) = _maps(depth, r)
    return float(np.sum(_weights(d, mode, depth_scale) * r))


def blend_reweighted(depth, r, d_unc, mode="linear", depth_scale=None):
    """Depth-weighted render uncertainty discounted by ``1 - d_unc``."""
    d, (r, du) = _maps(depth, r, d_unc)
    return float(np.sum(_weights(d, mode, depth_scale) * r * (1.0 - du)))


def total_score(depth, r, d_unc, w: ScoreWeights = ScoreWeights(), mode="linear",
                depth_scale=None, view_id=-1):
    lb = blend(depth, r, mode, depth_scale)
    lbs = blend_reweighted(depth, r, d_unc, mode, depth_scale)
    _, (r, du) = _maps(depth, r, d_unc)
    sr = float(np.sum(r))
    sd = float(np.sum(du))
    total = lb + w.lambda0 * lbs + w.lambda1 * sr + w.lambda2 * sd
    return ViewScore(lb, lbs, sr, sd, total, view_id)


def score_variant(depth, r, d_unc, w: ScoreWeights, variant="full", depth_scale=None,
                  view_id=-1):
    """Total score with one ablation applied.

    ``no_depth_uq`` treats the depth uncertainty as zero everywhere,
    ``no_depth_blending`` keeps only the two global sums (lambda1 forced to at
    least 1 when zero), ``depth_squared`` weights by squared depth.
    """
    if variant == "full":
        return total_score(depth, r, d_unc, w, "linear", depth_scale, view_id)
    if variant == "no_depth_uq":
        return total_score(depth, r, np.zeros_like(r), w, "linear", depth_scale, view_id)
    if variant == "depth_squared":
        return total_score(depth, r, d_unc, w, "squared", depth_scale, view_id)
    if variant == "no_depth_blending":
        _, (r, du) = _maps(depth, r, d_unc)
        lam1 = w.lambda1 if w.lambda1 > 0 else 1.0
        sr, sd = float(np.sum(r)), float(np.sum(du))
        return ViewScore(0.0, 0.0, sr, sd, lam1 * sr + w.lambda2 * sd, view_id)
    raise ConfigError(f"unknown scoring variant {variant!r}; expected one of {VARIANTS}")


SCORE_CSV_HEADER = ["round", "view_id", "l_blend", "l_blend_star", "sum_R", "sum_D", "total",
                    "selected_flag"]


def write_score_csv(path, rounds):
    """``rounds``: iterable of ``(round, scores, selected_view)``, scores a list of ViewScore."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCORE_CSV_HEADER)
        for rnd, scores, selected in rounds:
            for s in scores:
                w.writerow([rnd, s.view_id, repr(s.l_blend), repr(s.l_blend_star), repr(s.sum_R),
                            repr(s.sum_D), repr(s.total), int(s.view_id == selected)])
