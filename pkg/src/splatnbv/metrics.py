"""Image-quality metrics and the average / worst-5% reporting protocol."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .render import render
from .ssim import ssim_map

PSNR_IDENTICAL = math.inf  # reported when MSE == 0; serialized as "inf"


def psnr(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def ssim_scalar(a, b):
    return float(np.mean(ssim_map(a, b)))


def worst_count(n):
    return max(1, math.ceil(0.05 * n))


def aggregate(values):
    """``{"avg", "worst5"}`` for a higher-is-better metric."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot aggregate an empty list")
    k = worst_count(v.size)
    return {"avg": float(np.mean(v)), "worst5": float(np.mean(np.sort(v)[:k]))}


@dataclass
class MetricReport:
    psnr: list
    ssim: list
    psnr_avg: float = 0.0
    psnr_worst5: float = 0.0
    ssim_avg: float = 0.0
    ssim_worst5: float = 0.0
    curve: list = field(default_factory=list)

    @classmethod
    def from_values(cls, psnrs, ssims, curve=()):
        p, s = aggregate(psnrs), aggregate(ssims)
        return cls(list(map(float, psnrs)), list(map(float, ssims)), p["avg"], p["worst5"],
                   s["avg"], s["worst5"], list(curve))

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def from_json(cls, path):
        return cls(**json.loads(Path(path).read_text()))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["view", "psnr_db", "ssim"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                w.writerow([i, repr(p), repr(s)])
            w.writerow(["avg", repr(self.psnr_avg), repr(self.ssim_avg)])
            w.writerow(["worst5", repr(self.psnr_worst5), repr(self.ssim_worst5)])


def evaluate_views(scene, test_views, render_cfg=None):
    """Per-view PSNR and SSIM of ``scene`` against ``(camera, gt_image)`` pairs."""
    if len(test_views) == 0:
        raise ValueError("no test views to evaluate")
    kw = {} if render_cfg is None else {"cfg": render_cfg}
    psnrs, ssims = [], []
    for cam, gt in test_views:
        img = render(scene, cam, **kw)[0].pixels
        psnrs.append(psnr(img, gt))
        ssims.append(ssim_scalar(img, gt))
    return MetricReport.from_values(psnrs, ssims)


def per_step_curve(run_log, test_views, render_cfg=None):
    """(round, psnr_avg, psnr_worst5) for every stored checkpoint of a run.

    ``run_log.checkpoints`` holds one scene per view addition plus the final
    one; a missing entry raises ``ValueError``.
    """
    n_expected = len(run_log.records) + 1
    if len(run_log.checkpoints) != n_expected or any(c is None for c in run_log.checkpoints):
        raise ValueError(f"run log needs {n_expected} checkpoints, "
                         f"has {len(run_log.checkpoints)}")
    points = []
    for r, scene in enumerate(run_log.checkpoints):
        rep = evaluate_views(scene, test_views, render_cfg)
        points.append((r, rep.psnr_avg, rep.psnr_worst5))
    return points


def write_curve_csv(path, points):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["round", "psnr_avg", "psnr_worst5"])
        for r, a, b in points:
            w.writerow([r, repr(float(a)), repr(float(b))])
