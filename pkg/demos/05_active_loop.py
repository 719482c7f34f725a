"""A small active-reconstruction run: uncertainty-driven vs random view selection.

Uses the same config machinery as ``splatnbv active-run``, shrunk to 32x32 so it
finishes in a couple of minutes. Run: python demos/05_active_loop.py
"""
# %%
from splatnbv import OraclePredictor, score_path
from splatnbv.cli import RunConfig, load_config, run_seed
from splatnbv.scene import interpolate_path

cfg = load_config(resolution="32x32")
small = dict(cfg.raw, candidates={"n": 64, "radius": 2.5}, test_views={"n": 16, "radius": 2.5},
             optim={"total_iters": 1200}, n_init=150)

# %% one seed, two policies
results = {}
for policy in ("random", "uq"):
    raw = dict(small, policy={**small["policy"], "name": policy})
    run_cfg = RunConfig.build(raw, "unused")
    log, gt, cands, tests = run_seed(run_cfg, 0)
    results[policy] = log
    print(f"{policy:6s} views {log.initial_views + log.selected_views}")
    print(f"       PSNR per round {[round(p, 1) for _, p, _ in log.curve]}")
    print(f"       final avg {log.final.psnr_avg:.2f} dB, worst-5% {log.final.psnr_worst5:.2f} dB")

# %% scoring whole camera paths on the uq run's first checkpoint
oracle = OraclePredictor(gt, run_cfg.depth_scale)
scene = results["uq"].checkpoints[0]
paths = [interpolate_path(cands[a], cands[b], 5) for a, b in [(0, 3), (10, 40), (20, 60)]]
for (a, b), p in zip([(0, 3), (10, 40), (20, 60)], paths):
    s = score_path(p, scene, oracle, depth_scale=run_cfg.depth_scale)
    print(f"path {a:2d}->{b:2d}: mean score {s:.2f}")
