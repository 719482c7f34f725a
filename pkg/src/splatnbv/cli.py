"""Command-line entry point: ``splatnbv <verb> [--config PATH] [--seed N] ...``.

Verbs: scene-gen, fit, active-run, ablate, eval, render, train-uq.

The config is one JSON document; every key has a default (see
``DEFAULT_CONFIG``) and unknown keys are rejected. All randomness comes from
the single top-level seed through named sub-streams.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .metrics import MetricReport, evaluate_views, write_curve_csv
from .optim import OptimConfig, TrainState, config_hash, fit, init_scene, load_checkpoint, \
    save_checkpoint
from .planner import Policy, RunLog, Schedule, run_active_loop, stream_seed
from .render import RenderConfig, render, write_ppm, write_raw
from .scene import Camera, ViewpointSet, generate_synthetic_scene, load_scene, \
    load_viewpoints, look_at, intrinsics_from_fov, sample_sphere_viewpoints, save_json, \
    scene_diameter
from .scoring import VARIANTS, ScoreWeights, write_score_csv
from .uncertainty import HeuristicPredictor, OraclePredictor, TrainedPredictor, \
    build_training_set, fit_predictor

DEFAULT_CONFIG = {
    "seed": 0,
    "resolution": [64, 64],
    "fov_deg": 50.0,
    "scene": {"n_gaussians": 300, "layout": "occluded-cavity", "bounds": [1.0, 1.0, 1.0],
              "background": [0.0, 0.0, 0.0]},
    "candidates": {"n": 256, "radius": 2.5},
    "test_views": {"n": 64, "radius": 2.5},
    "schedule": {"add_iters": None, "n_initial": 4, "n_total": 20, "initial": "lowest"},
    "policy": {"name": "uq", "predictor": "oracle", "variant": "full", "model": None},
    "weights": {"lambda0": 1.0, "lambda1": 0.1, "lambda2": 0.1},
    "optim": {"total_iters": 3000},
    "render": {},
    "n_init": 200,
    "fit": {"n_views": 12},
    "ablate": {"n_seeds": 5},
    "train_uq": {"n_scenes": 2, "view_counts": [4, 8, 16], "n_holdout": 8, "iters": 1500},
    "workers": 1,
}

POLICIES = ("random", "oracle_ssim", "uq", "blend_only")
PREDICTORS = ("oracle", "heuristic", "trained")


def _merge(base, over, where="config"):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(base[k], dict) and k not in ("optim", "render"):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be an object")
            out[k] = _merge(base[k], v, f"{where}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_resolution(text):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise ConfigError("resolution must be positive")
    return [w, h]


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment configuration; ``raw`` is the resolved JSON document."""

    raw: dict
    out: Path
    optim: OptimConfig
    render: RenderConfig
    weights: ScoreWeights
    schedule: Schedule

    @property
    def seed(self):
        return int(self.raw["seed"])

    @property
    def hash(self):
        return config_hash(self.raw)

    @property
    def bounds(self):
        return tuple(self.raw["scene"]["bounds"])

    @property
    def depth_scale(self):
        return scene_diameter(self.bounds)

    @classmethod
    def build(cls, raw, out):
        raw = _merge(DEFAULT_CONFIG, raw)
        if not isinstance(raw["seed"], int) or raw["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        w, h = raw["resolution"]
        if int(w) < 1 or int(h) < 1:
            raise ConfigError("resolution must be positive")
        if raw["scene"]["n_gaussians"] < 1:
            raise ConfigError("scene.n_gaussians must be >= 1")
        if any(b <= 0 for b in raw["scene"]["bounds"]):
            raise ConfigError("scene.bounds must be positive")
        pol = raw["policy"]
        if pol["name"] not in POLICIES:
            raise ConfigError(f"unknown policy {pol['name']!r}; expected one of {POLICIES}")
        if pol["predictor"] not in PREDICTORS:
            raise ConfigError(f"unknown predictor {pol['predictor']!r}")
        if pol["variant"] not in VARIANTS:
            raise ConfigError(f"unknown variant {pol['variant']!r}")
        if pol["predictor"] == "trained" and not pol["model"]:
            raise ConfigError("policy.model is required for the trained predictor")
        if pol["name"] == "oracle_ssim" and pol["predictor"] != "oracle":
            raise ConfigError("policy oracle_ssim needs predictor 'oracle'")
        optim_d = dict(raw["optim"])
        optim_d["render"] = RenderConfig(**raw["render"])
        optim = OptimConfig.from_dict(optim_d)
        sch = raw["schedule"]
        if sch["initial"] not in ("lowest", "random"):
            raise ConfigError("schedule.initial must be 'lowest' or 'random'")
        if sch["add_iters"] is None:
            schedule = Schedule(n_initial=sch["n_initial"], n_total=sch["n_total"])
            if sch["n_total"] - sch["n_initial"] != len(schedule.add_iters):
                raise ConfigError("n_total - n_initial must be 16 with the default schedule")
            schedule = schedule.rescaled(optim.total_iters)
        else:
            schedule = Schedule(tuple(sch["add_iters"]), sch["n_initial"], sch["n_total"])
        if schedule.add_iters and schedule.add_iters[-1] > optim.total_iters:
            raise ConfigError("schedule extends past optim.total_iters")
        if raw["candidates"]["n"] < schedule.n_total:
            raise ConfigError("fewer candidates than schedule.n_total")
        if raw["test_views"]["n"] < 1:
            raise ConfigError("need at least one test view")
        if raw["workers"] < 1:
            raise ConfigError("workers must be >= 1")
        return cls(raw, Path(out), optim, optim.render, ScoreWeights(**raw["weights"]), schedule)

    # --- derived objects ---------------------------------------------------------

    def gt_scene(self, seed=None):
        s = self.raw["scene"]
        seed = self.seed if seed is None else seed
        return generate_synthetic_scene(stream_seed(seed, "scene"), s["n_gaussians"], s["layout"],
                                        s["bounds"], s["background"])

    def _sphere(self, key, seed):
        w, h = self.raw["resolution"]
        c = self.raw[key]
        return sample_sphere_viewpoints(c["n"], c["radius"], seed=stream_seed(seed, key),
                                        width=w, height=h, fov_deg=self.raw["fov_deg"])

    def candidates(self, seed=None):
        return self._sphere("candidates", self.seed if seed is None else seed)

    def test_views(self, seed=None):
        return self._sphere("test_views", self.seed if seed is None else seed).cameras

    def predictor(self, gt):
        kind = self.raw["policy"]["predictor"]
        if kind == "oracle":
            return OraclePredictor(gt, self.depth_scale, self.render)
        if kind == "heuristic":
            return HeuristicPredictor(self.depth_scale)
        return TrainedPredictor.load(self.raw["policy"]["model"])

    def policy(self, gt, seed=None, variant=None):
        p = self.raw["policy"]
        seed = self.seed if seed is None else seed
        if p["name"] == "random":
            return Policy.random(stream_seed(seed, "policy"))
        if p["name"] == "oracle_ssim":
            return Policy.oracle_ssim(self.predictor(gt))
        w = ScoreWeights(0.0, 0.0, 0.0) if p["name"] == "blend_only" else self.weights
        return Policy.uq_ablation(variant or p["variant"], self.predictor(gt), w)


def canonical_views(width, height, radius=4.0, fov_deg=50.0):
    """Four fixed preview cameras: +x, +y, -x and an elevated diagonal."""
    intr = intrinsics_from_fov(width, height, fov_deg)
    eyes = [(radius, 0, 0), (0, radius, 0), (-radius, 0, 0),
            np.array([1.0, -1.0, 1.0]) * radius / np.sqrt(3)]
    cams = []
    for eye in eyes:
        R, t = look_at(np.asarray(eye, dtype=np.float64), np.zeros(3))
        cams.append(Camera(*intr, width, height, R, t))
    return cams


# --- output helpers -------------------------------------------------------------------

def _outdir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {p} is not writable: {exc}") from exc
    return p


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, verb, cfg: RunConfig, extra=None):
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    manifest = {"verb": verb, "config_hash": cfg.hash, "seed": cfg.seed, "config": cfg.raw,
                "files": {f: _sha(out / f) for f in files}}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def _save_views(cams, path):
    save_json(ViewpointSet(list(cams)), path)


# --- verbs ----------------------------------------------------------------------------

def cmd_scene_gen(cfg: RunConfig):
    out = _outdir(cfg.out)
    gt = cfg.gt_scene()
    save_json(gt, out / "scene.json")
    w, h = cfg.raw["resolution"]
    for i, cam in enumerate(canonical_views(w, h, cfg.raw["candidates"]["radius"],
                                            cfg.raw["fov_deg"])):
        write_ppm(out / f"preview_{i}.ppm", render(gt, cam, cfg.render)[0].pixels)
    write_manifest(out, "scene-gen", cfg)
    return gt


def cmd_fit(cfg: RunConfig):
    """Fit a fresh scene from the first ``fit.n_views`` candidates (no planning)."""
    out = _outdir(cfg.out)
    gt = cfg.gt_scene()
    cands = cfg.candidates()
    n = cfg.raw["fit"]["n_views"]
    if not 1 <= n <= len(cands):
        raise ConfigError("fit.n_views must be between 1 and the candidate count")
    state = TrainState(init_scene(cfg.bounds, cfg.raw["n_init"], stream_seed(cfg.seed, "init"),
                                  gt.background), rng_seed=stream_seed(cfg.seed, "optimizer"))
    for cam in cands.cameras[:n]:
        state.add_view(cam, render(gt, cam, cfg.render)[0].pixels)
    state = fit(state, cfg.optim, cfg.optim.total_iters)
    save_json(gt, out / "scene.json")
    save_checkpoint(out / "fitted", state, cfg.optim)
    test = [(c, render(gt, c, cfg.render)[0].pixels) for c in cfg.test_views()]
    report = evaluate_views(state.scene, test, cfg.render)
    train = evaluate_views(state.scene, state.active_views, cfg.render)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    with open(out / "loss.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["iteration", "loss"])
        for i, v in enumerate(state.loss_history):
            wr.writerow([i, repr(float(v))])
    write_manifest(out, "fit", cfg, {"train_psnr_avg": train.psnr_avg})
    return state, report


def _write_run(out, log: RunLog, cfg: RunConfig, gt, cands, tests):
    save_json(gt, out / "scene.json")
    _save_views(cands.cameras, out / "candidates.json")
    _save_views(tests, out / "test_views.json")
    log.to_json(out / "run_log.json")
    write_score_csv(out / "scores.csv",
                    [(r.round, r.scores, r.selected_view) for r in log.records])
    (out / "selected_views.txt").write_text(
        "".join(f"{v}\n" for v in log.initial_views + log.selected_views))
    ck = out / "checkpoints"
    ck.mkdir(exist_ok=True)
    iters = [r.iteration for r in log.records] + [cfg.optim.total_iters]
    for i, (scene, it) in enumerate(zip(log.checkpoints, iters)):
        state = TrainState(scene, iteration=it, rng_seed=stream_seed(cfg.seed, "optimizer"))
        save_checkpoint(ck / f"round_{i:02d}", state, cfg.optim)
    log.final.to_json(out / "report.json")
    log.final.to_csv(out / "report.csv")
    write_curve_csv(out / "curve.csv", log.curve)


def run_seed(cfg: RunConfig, seed, variant=None, policy=None):
    """One active run on the scene, candidates and test views derived from ``seed``.

    ``policy`` overrides the configured one (used to plug in an in-memory predictor).
    """
    gt = cfg.gt_scene(seed)
    cands = cfg.candidates(seed)
    tests = cfg.test_views(seed)
    policy = policy or cfg.policy(gt, seed, variant)
    log = run_active_loop(gt, cands, cfg.schedule, policy, cfg.optim,
                          tests, bounds=cfg.bounds, n_init=cfg.raw["n_init"], seed=seed,
                          depth_scale=cfg.depth_scale, render_cfg=cfg.render,
                          initial=cfg.raw["schedule"]["initial"], workers=cfg.raw["workers"])
    return log, gt, cands, tests


def cmd_active_run(cfg: RunConfig):
    out = _outdir(cfg.out)
    log, gt, cands, tests = run_seed(cfg, cfg.seed)
    _write_run(out, log, cfg, gt, cands, tests)
    write_manifest(out, "active-run", cfg)
    return log


ABLATION_COLUMNS = ["psnr_avg", "psnr_worst5", "ssim_avg", "ssim_worst5"]


def cmd_ablate(cfg: RunConfig):
    """Run every scoring variant over ``ablate.n_seeds`` shared seeds."""
    out = _outdir(cfg.out)
    if cfg.raw["policy"]["name"] != "uq":
        raise ConfigError("ablate needs policy.name 'uq'")
    seeds = [cfg.seed + k for k in range(cfg.raw["ablate"]["n_seeds"])]
    if not seeds:
        raise ConfigError("ablate.n_seeds must be >= 1")
    rows = {}
    with open(out / "ablation_runs.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["variant", "seed", *ABLATION_COLUMNS, "selected_views"])
        for v in VARIANTS:
            reports = []
            for s in seeds:
                log = run_seed(cfg, s, v)[0]
                rep = log.final
                reports.append(rep)
                wr.writerow([v, s, *(repr(getattr(rep, c)) for c in ABLATION_COLUMNS),
                             " ".join(map(str, log.initial_views + log.selected_views))])
            rows[v] = [float(np.mean([getattr(r, c) for r in reports])) for c in ABLATION_COLUMNS]
    with open(out / "ablation.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["variant", *ABLATION_COLUMNS])
        for v in VARIANTS:
            wr.writerow([v, *(repr(x) for x in rows[v])])
    write_manifest(out, "ablate", cfg, {"seeds": seeds})
    return rows


def cmd_eval(run_dir, test_views_path=None, render_cfg=None):
    """Recompute the final report and curve of a run from its checkpoints."""
    run = Path(run_dir)
    for name in ("scene.json", "report.json", "test_views.json"):
        if not (run / name).is_file():
            raise FileNotFoundError(f"missing run artifact {run / name}")
    if render_cfg is None:
        manifest = run / "manifest.json"
        raw = json.loads(manifest.read_text())["config"] if manifest.is_file() else {}
        render_cfg = RenderConfig(**raw.get("render", {}))
    gt = load_scene(run / "scene.json")
    tests = load_viewpoints(test_views_path or run / "test_views.json").cameras
    if len(tests) == 0:
        raise ValueError("empty test view set")
    pairs = [(c, render(gt, c, render_cfg)[0].pixels) for c in tests]
    ckpts = sorted((run / "checkpoints").glob("round_*.meta.json"))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints under {run / 'checkpoints'}")
    curve = []
    for r, meta in enumerate(ckpts):
        scene, _ = load_checkpoint(meta.with_name(meta.name[:-len(".meta.json")]))
        rep = evaluate_views(scene, pairs, render_cfg)
        curve.append((r, rep.psnr_avg, rep.psnr_worst5))
    rep.curve = curve
    diff = 0.0
    if test_views_path is None:
        stored = MetricReport.from_json(run / "report.json")
        if len(stored.psnr) != len(rep.psnr) or len(stored.curve) != len(curve):
            raise ValueError("stored report does not match the run's test views or checkpoints")
        a = np.array(stored.psnr + stored.ssim + [v for p in stored.curve for v in p[1:]])
        b = np.array(rep.psnr + rep.ssim + [v for p in curve for v in p[1:]])
        both_inf = np.isinf(a) & np.isinf(b) & (a == b)
        diff = float(np.max(np.where(both_inf, 0.0, np.abs(a - b)), initial=0.0))
    rep.to_json(run / "eval_report.json")
    write_curve_csv(run / "eval_curve.csv", curve)
    return rep, diff


def cmd_render(cfg: RunConfig, scene_path=None, views_path=None):
    """Render a scene (default: the configured ground truth) to PPM and float32 files."""
    out = _outdir(cfg.out)
    scene = load_scene(scene_path) if scene_path else cfg.gt_scene()
    w, h = cfg.raw["resolution"]
    if views_path:
        cams = [c.with_resolution(w, h) for c in load_viewpoints(views_path).cameras]
    else:
        cams = canonical_views(w, h, cfg.raw["candidates"]["radius"], cfg.raw["fov_deg"])
    for i, cam in enumerate(cams):
        img, dep = render(scene, cam, cfg.render)
        write_ppm(out / f"view_{i:03d}.ppm", img.pixels)
        write_raw(out / f"view_{i:03d}.rgb.f32", img.pixels)
        write_raw(out / f"view_{i:03d}.depth.f32", dep.depth)
    write_manifest(out, "render", cfg)
    return len(cams)


def train_uq_dataset(cfg: RunConfig, seeds):
    """Oracle-labelled samples from partial fits of the ground-truth scenes of ``seeds``."""
    t = cfg.raw["train_uq"]
    optim = OptimConfig.from_dict({**cfg.optim.to_dict(), "render": cfg.render,
                                   "total_iters": t["iters"]})
    data = []
    for seed in seeds:
        gt = cfg.gt_scene(seed)
        hold = cfg.test_views(seed)[:t["n_holdout"]]
        data += build_training_set(gt, t["view_counts"], hold, seed, bounds=cfg.bounds,
                                   radius=cfg.raw["candidates"]["radius"],
                                   n_init=cfg.raw["n_init"], optim_config=optim,
                                   render_cfg=cfg.render, depth_scale=cfg.depth_scale)
    return data


def cmd_train_uq(cfg: RunConfig):
    """Fit the ridge uncertainty predictor on partially trained reconstructions."""
    out = _outdir(cfg.out)
    n = cfg.raw["train_uq"]["n_scenes"]
    seeds = [stream_seed(cfg.seed, f"train_uq_{k}") for k in range(n)]
    data = train_uq_dataset(cfg, seeds)
    model = fit_predictor(data, cfg.depth_scale)
    model.save(out / "uq_model.json")
    write_manifest(out, "train-uq", cfg, {"n_samples": len(data)})
    return model


# --- argument parsing -------------------------------------------------------------------

def load_config(path=None, *, seed=None, out=None, policy=None, resolution=None):
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    raw = _merge(DEFAULT_CONFIG, raw)
    if seed is not None:
        raw["seed"] = seed
    if policy is not None:
        raw["policy"]["name"] = policy
    if resolution is not None:
        raw["resolution"] = parse_resolution(resolution) if isinstance(resolution, str) \
            else list(resolution)
    return RunConfig.build(raw, out or "out")


def build_parser():
    p = argparse.ArgumentParser(prog="splatnbv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--policy", choices=POLICIES)
        sp.add_argument("--resolution", help="image size as WxH")
        return sp

    common(sub.add_parser("scene-gen", help="generate a synthetic scene and previews"))
    common(sub.add_parser("fit", help="fit a scene from a fixed set of views"))
    common(sub.add_parser("active-run", help="run the active reconstruction loop"))
    common(sub.add_parser("ablate", help="compare scoring variants over several seeds"))
    common(sub.add_parser("train-uq", help="train the ridge uncertainty predictor"))
    r = common(sub.add_parser("render", help="render a scene to PPM and float32 images"))
    r.add_argument("--scene", help="scene JSON (default: generate from config)")
    r.add_argument("--views", help="viewpoint-set JSON (default: 4 preview views)")
    e = sub.add_parser("eval", help="recompute metrics of a finished run")
    e.add_argument("run_dir")
    e.add_argument("--test-views", help="viewpoint-set JSON (default: the run's own)")
    e.add_argument("--tol", type=float, default=1e-9)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "eval":
            rep, diff = cmd_eval(args.run_dir, args.test_views)
            print(f"psnr_avg {rep.psnr_avg:.6f} psnr_worst5 {rep.psnr_worst5:.6f} "
                  f"ssim_avg {rep.ssim_avg:.6f} max_diff {diff:.3g}")
            if diff > args.tol:
                print(f"error: recomputed metrics differ from the stored report by {diff:.3g}",
                      file=sys.stderr)
                return 1
            return 0
        cfg = load_config(args.config, seed=args.seed, out=args.out, policy=args.policy,
                          resolution=args.resolution)
        if args.verb == "scene-gen":
            cmd_scene_gen(cfg)
        elif args.verb == "fit":
            rep = cmd_fit(cfg)[1]
            print(f"test psnr_avg {rep.psnr_avg:.4f}")
        elif args.verb == "active-run":
            log = cmd_active_run(cfg)
            print(f"selected {log.selected_views} final psnr_avg {log.final.psnr_avg:.4f}")
        elif args.verb == "ablate":
            for v, row in cmd_ablate(cfg).items():
                print(v, " ".join(f"{x:.4f}" for x in row))
        elif args.verb == "render":
            cmd_render(cfg, args.scene, args.views)
        elif args.verb == "train-uq":
            cmd_train_uq(cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
