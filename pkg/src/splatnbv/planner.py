"""Active reconstruction loop: fit, score candidate views, capture the most uncertain one.

The schedule adds one view at each entry of ``add_iters``. Candidate scoring
is pure per view, so it may run on several threads; results are gathered in
candidate order and never depend on the worker count.
"""
from __future__ import annotations

import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SelectionError
from .metrics import MetricReport, evaluate_views
from .optim import OptimConfig, TrainState, fit, init_scene
from .render import DEFAULT_RENDER, render
from .scoring import VARIANTS, ScoreWeights, ViewScore, score_variant
from .uncertainty import oracle_uncertainty

REFERENCE_ADD_ITERS = (400, 900, 1500, 2200, 3000, 3900, 4900, 6000, 7200, 8500, 9900, 11400,
                       13000, 14700, 16500, 18400)
REFERENCE_TOTAL_ITERS = 30000


def stream_seed(seed, name):
    """Independent integer seed for a named random sub-stream of ``seed``."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class Schedule:
    add_iters: tuple = REFERENCE_ADD_ITERS
    n_initial: int = 4
    n_total: int = 20

    def __post_init__(self):
        object.__setattr__(self, "add_iters", tuple(int(i) for i in self.add_iters))
        if any(b <= a for a, b in zip(self.add_iters, self.add_iters[1:])):
            raise ConfigError("add_iters must be strictly increasing")
        if self.n_initial < 1:
            raise ConfigError("need at least one initial view")
        if self.n_initial + len(self.add_iters) != self.n_total:
            raise ConfigError("n_initial + len(add_iters) must equal n_total")

    def rescaled(self, total_iters):
        """Same cadence over ``total_iters`` instead of the reference 30000."""
        if total_iters == REFERENCE_TOTAL_ITERS:
            return self
        f = total_iters / REFERENCE_TOTAL_ITERS
        return Schedule(tuple(int(round(i * f)) for i in self.add_iters), self.n_initial,
                        self.n_total)

    def truncated(self, n_additions):
        return Schedule(self.add_iters[:n_additions], self.n_initial,
                        self.n_initial + min(n_additions, len(self.add_iters)))


@dataclass(frozen=True)
class Policy:
    """View-selection rule.

    kind ``random`` ignores scores; ``oracle_ssim`` ranks by mean oracle
    uncertainty against ground truth (``predictor`` must be an
    OraclePredictor); ``uq`` ranks by the weighted depth-blended score, with
    ``variant`` selecting an ablation.
    """

    kind: str
    predictor: object = None
    weights: ScoreWeights = ScoreWeights()
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "oracle_ssim", "uq"):
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown ablation variant {self.variant!r}")
        if self.kind != "random" and self.predictor is None:
            raise ConfigError(f"policy {self.kind!r} needs a predictor")

    @classmethod
    def random(cls, seed=0):
        return cls("random", seed=seed)

    @classmethod
    def oracle_ssim(cls, oracle):
        return cls("oracle_ssim", predictor=oracle)

    @classmethod
    def uq(cls, predictor, weights=ScoreWeights()):
        return cls("uq", predictor=predictor, weights=weights)

    @classmethod
    def uq_ablation(cls, variant, predictor, weights=ScoreWeights()):
        return cls("uq", predictor=predictor, weights=weights, variant=variant)

    @property
    def name(self):
        if self.kind == "uq" and self.variant != "full":
            return self.variant
        return self.kind


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def score_view(scene, cam, policy, depth_scale, render_cfg=DEFAULT_RENDER, view_id=-1):
    img, dep = render(scene, cam, render_cfg)
    if policy.kind == "oracle_ssim":
        gimg, _ = policy.predictor.ground_truth(cam)
        u = float(np.mean(oracle_uncertainty(img, gimg)))
        return ViewScore(0.0, 0.0, u, 0.0, u, view_id)
    R, D = policy.predictor(img, dep, cam)
    return score_variant(dep, R, D, policy.weights, policy.variant, depth_scale, view_id)


def score_candidates(scene, candidates, policy, depth_scale, *, exclude=(),
                     render_cfg=DEFAULT_RENDER, workers=1):
    """ViewScore for every candidate not in ``exclude`` (empty list for the random policy)."""
    skip = set(exclude)
    ids = [i for i in range(len(candidates)) if i not in skip]
    if policy.kind == "random":
        return []
    return _map(lambda i: score_view(scene, candidates[i], policy, depth_scale, render_cfg, i),
                ids, workers)


def argmax_view(scores):
    """View id of the highest total; ties go to the lowest view id."""
    best = None
    for s in sorted(scores, key=lambda s: s.view_id):
        if best is None or s.total > best.total:
            best = s
    return best.view_id


def select_next_view(state, candidates, policy, *, depth_scale=1.0, round_index=0,
                     render_cfg=DEFAULT_RENDER, workers=1, return_scores=False):
    """Index of the next candidate to capture (argmax of the policy's score)."""
    mask = np.asarray(candidates.selected_mask, dtype=bool)
    free = np.flatnonzero(~mask)
    if len(free) == 0:
        raise SelectionError("all candidates are already selected")
    if policy.kind == "random":
        rng = np.random.default_rng([policy.seed, round_index])
        idx, scores = int(free[rng.integers(len(free))]), []
    else:
        scores = score_candidates(_scene_of(state), candidates, policy, depth_scale,
                                  exclude=np.flatnonzero(mask).tolist(), render_cfg=render_cfg,
                                  workers=workers)
        idx = argmax_view(scores)
    return (idx, scores) if return_scores else idx


@dataclass
class RoundRecord:
    round: int
    iteration: int
    selected_view: int
    scores: list = field(default_factory=list)


@dataclass
class RunLog:
    policy: str
    initial_views: list
    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # scenes: one per addition, then final
    curve: list = field(default_factory=list)
    final: MetricReport | None = None
    total_iters: int = 0

    @property
    def selected_views(self):
        return [r.selected_view for r in self.records]

    def to_dict(self):
        return {
            "policy": self.policy,
            "initial_views": list(self.initial_views),
            "total_iters": self.total_iters,
            "records": [{"round": r.round, "iteration": r.iteration,
                         "selected_view": r.selected_view,
                         "scores": [s.__dict__ for s in r.scores]} for r in self.records],
            "curve": [list(p) for p in self.curve],
            "final": None if self.final is None else self.final.__dict__,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def from_dict(cls, d):
        log = cls(d["policy"], d["initial_views"], total_iters=d.get("total_iters", 0))
        log.records = [RoundRecord(r["round"], r["iteration"], r["selected_view"],
                                   [ViewScore(**s) for s in r["scores"]]) for r in d["records"]]
        log.curve = [tuple(p) for p in d["curve"]]
        log.final = None if d["final"] is None else MetricReport(**d["final"])
        return log

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_active_loop(gt_scene, candidates, schedule, policy, optim_config: OptimConfig,
                    test_views, *, bounds=(1.0, 1.0, 1.0), n_init=200, seed=0,
                    depth_scale=None, render_cfg=DEFAULT_RENDER, initial="lowest", workers=1):
    """Run one active reconstruction and evaluate it on ``test_views`` (cameras).

    Captured images are ground-truth renders at the chosen cameras. Returns a
    RunLog holding per-round scores, the scene checkpoint taken at every
    addition plus the final one, the PSNR curve and the final MetricReport.
    """
    candidates = type(candidates)(list(candidates.cameras))  # fresh selection mask
    if len(candidates) < schedule.n_total:
        raise ConfigError(f"need at least {schedule.n_total} candidates, got {len(candidates)}")
    for t in test_views:
        if any(t.same_pose(c) for c in candidates.cameras):
            raise ConfigError("test views must not coincide with candidate poses")
    bounds = np.asarray(bounds, dtype=np.float64)
    if depth_scale is None:
        depth_scale = float(2 * np.linalg.norm(bounds))
    if initial == "lowest":
        init_ids = list(range(schedule.n_initial))
    elif initial == "random":
        rng = np.random.default_rng(stream_seed(seed, "initial"))
        init_ids = sorted(int(i) for i in rng.choice(len(candidates), schedule.n_initial,
                                                     replace=False))
    else:
        raise ConfigError(f"unknown initial view rule {initial!r}")

    def capture(i):
        candidates.selected_mask[i] = True
        state.add_view(candidates[i], render(gt_scene, candidates[i], render_cfg)[0].pixels)

    state = TrainState(init_scene(bounds, n_init, stream_seed(seed, "init"), gt_scene.background),
                       rng_seed=stream_seed(seed, "optimizer"))
    for i in init_ids:
        capture(i)
    log = RunLog(policy.name, init_ids, total_iters=optim_config.total_iters)
    for rnd, it in enumerate(schedule.add_iters):
        try:
            state = fit(state, optim_config, it)
            idx, scores = select_next_view(state, candidates, policy, depth_scale=depth_scale,
                                           round_index=rnd, render_cfg=render_cfg,
                                           workers=workers, return_scores=True)
        except (ValueError, RuntimeError) as exc:
            raise type(exc)(f"round {rnd} (iteration {it}): {exc}") from exc
        log.checkpoints.append(state.scene)
        log.records.append(RoundRecord(rnd, state.iteration, idx, scores))
        capture(idx)
    state = fit(state, optim_config, optim_config.total_iters)
    log.checkpoints.append(state.scene)
    test_pairs = [(c, render(gt_scene, c, render_cfg)[0].pixels) for c in test_views]
    reports = [evaluate_views(s, test_pairs, render_cfg) for s in log.checkpoints]
    log.curve = [(r, rep.psnr_avg, rep.psnr_worst5) for r, rep in enumerate(reports)]
    log.final = reports[-1]
    log.final.curve = list(log.curve)
    return log


# --- path-level selection ---------------------------------------------------------

def _scene_of(state):
    return getattr(state, "scene", state)


def score_path(path, state, predictor, weights=ScoreWeights(), *, variant="full",
               depth_scale=1.0, render_cfg=DEFAULT_RENDER):
    """Mean per-frame total score along a camera path."""
    if len(path) == 0:
        raise ValueError("empty path")
    policy = Policy("uq", predictor=predictor, weights=weights, variant=variant)
    scene = _scene_of(state)
    totals = [score_view(scene, cam, policy, depth_scale, render_cfg).total for cam in path]
    return float(np.mean(totals))


def select_path(paths, state, predictor, weights=ScoreWeights(), **kw):
    """Index of the highest-scoring path; ties go to the lowest index."""
    if len(paths) == 0:
        raise SelectionError("no candidate paths")
    scores = [score_path(p, state, predictor, weights, **kw) for p in paths]
    return int(np.argmax(scores))
