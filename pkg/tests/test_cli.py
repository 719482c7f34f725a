import json
import shutil

import numpy as np
import pytest

from splatnbv.cli import cmd_ablate, cmd_eval, load_config, main
from splatnbv.errors import ConfigError
from splatnbv.render import read_raw
from splatnbv.scene import load_scene, load_viewpoints, save_json, ViewpointSet

TINY = {
    "resolution": [16, 16],
    "scene": {"n_gaussians": 50},
    "candidates": {"n": 24},
    "test_views": {"n": 6},
    "schedule": {"add_iters": [30, 60], "n_initial": 2, "n_total": 4},
    "optim": {"total_iters": 100},
    "n_init": 30,
    "fit": {"n_views": 4},
}


def _config(tmp_path, **over):
    raw = json.loads(json.dumps(TINY))
    for k, v in over.items():
        if isinstance(v, dict) and k in raw:
            raw[k].update(v)
        else:
            raw[k] = v
    path = tmp_path / f"cfg_{len(list(tmp_path.glob('cfg_*')))}.json"
    path.write_text(json.dumps(raw))
    return str(path)


def _run(verb, cfg, out, *extra):
    return main([verb, "--config", cfg, "--out", str(out), *extra])


def test_scene_gen_round_trip_and_rerun(tmp_path):
    cfg = _config(tmp_path)
    assert _run("scene-gen", cfg, tmp_path / "a") == 0
    assert _run("scene-gen", cfg, tmp_path / "b") == 0
    for name in ("scene.json", "preview_0.ppm", "preview_3.ppm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    scene = load_scene(tmp_path / "a" / "scene.json")
    assert scene == load_config(cfg).gt_scene()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config_hash"] == load_config(cfg).hash
    assert set(man["files"]) >= {"scene.json", "preview_0.ppm"}
    assert _run("scene-gen", cfg, tmp_path / "c", "--seed", "5") == 0
    assert (tmp_path / "c" / "scene.json").read_bytes() != \
        (tmp_path / "a" / "scene.json").read_bytes()


def test_active_run_is_reproducible_across_workers(tmp_path):
    cfg1 = _config(tmp_path)
    cfg2 = _config(tmp_path, workers=2)
    for cfg, out in ((cfg1, "a"), (cfg1, "b"), (cfg2, "c")):
        assert _run("active-run", cfg, tmp_path / out, "--policy", "random") == 0
    for name in ("selected_views.txt", "scores.csv", "report.json"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref
    sel = (tmp_path / "a" / "selected_views.txt").read_text().split()
    assert len(sel) == 4 and len(set(sel)) == 4
    assert len(list((tmp_path / "a" / "checkpoints").glob("round_*.json"))) == 6


def test_uq_workers_and_blend_only(tmp_path):
    outs = {}
    for name, over in (("w1", {}), ("w3", {"workers": 3})):
        assert _run("active-run", _config(tmp_path, **over), tmp_path / name) == 0
        outs[name] = (tmp_path / name / "scores.csv").read_bytes()
    assert outs["w1"] == outs["w3"]
    zero = _config(tmp_path, weights={"lambda0": 0.0, "lambda1": 0.0, "lambda2": 0.0})
    assert _run("active-run", zero, tmp_path / "z") == 0
    assert _run("active-run", _config(tmp_path), tmp_path / "bo", "--policy", "blend_only") == 0
    assert (tmp_path / "z" / "selected_views.txt").read_text() == \
        (tmp_path / "bo" / "selected_views.txt").read_text()


def test_eval_recomputes_stored_metrics(tmp_path, capsys):
    cfg = _config(tmp_path)
    run = tmp_path / "run"
    assert _run("active-run", cfg, run, "--policy", "random") == 0
    rep, diff = cmd_eval(run)
    assert diff <= 1e-9
    assert main(["eval", str(run)]) == 0
    assert "max_diff" in capsys.readouterr().out
    # a different, empty test set is an error
    empty = tmp_path / "empty.json"
    save_json(ViewpointSet([]), empty)
    with pytest.raises(ValueError, match="empty"):
        cmd_eval(run, empty)
    assert main(["eval", str(run), "--test-views", str(empty)]) == 2
    # a corrupted checkpoint is reported by name
    bad = tmp_path / "bad"
    shutil.copytree(run, bad)
    (bad / "checkpoints" / "round_01.json").write_text("garbage")
    with pytest.raises(ValueError, match="round_01"):
        cmd_eval(bad)
    # tampering with the stored report is detected
    rep_json = json.loads((run / "report.json").read_text())
    rep_json["psnr"][0] += 1.0
    (run / "report.json").write_text(json.dumps(rep_json))
    assert main(["eval", str(run)]) == 1


def test_ablate_table_and_shared_initial_views(tmp_path):
    cfg = load_config(_config(tmp_path, ablate={"n_seeds": 2}), out=tmp_path / "ab")
    rows = cmd_ablate(cfg)
    assert len(rows) == 4 and all(len(r) == 4 for r in rows.values())
    lines = (tmp_path / "ab" / "ablation.csv").read_text().splitlines()
    assert len(lines) == 5
    assert lines[0] == "variant,psnr_avg,psnr_worst5,ssim_avg,ssim_worst5"
    runs = (tmp_path / "ab" / "ablation_runs.csv").read_text().splitlines()[1:]
    first = {}
    for line in runs:
        parts = line.split(",")
        views = parts[-1].split()
        first.setdefault(parts[1], set()).add(tuple(views[:2]))
    assert all(len(v) == 1 for v in first.values())


def test_fit_and_render_outputs(tmp_path):
    cfg = _config(tmp_path)
    assert _run("fit", cfg, tmp_path / "fit") == 0
    for name in ("fitted.json", "report.json", "report.csv", "loss.csv"):
        assert (tmp_path / "fit" / name).is_file()
    assert _run("render", cfg, tmp_path / "r") == 0
    rgb = read_raw(tmp_path / "r" / "view_000.rgb.f32")
    assert rgb.shape == (16, 16, 3)
    assert (tmp_path / "r" / "view_000.ppm").read_bytes().startswith(b"P6\n16 16\n255\n")
    views = tmp_path / "views.json"
    save_json(load_config(cfg).candidates(), views)
    assert _run("render", cfg, tmp_path / "r2", "--views", str(views), "--scene",
                str(tmp_path / "fit" / "scene.json")) == 0
    assert len(list((tmp_path / "r2").glob("*.ppm"))) == 24
    assert read_raw(tmp_path / "r2" / "view_003.depth.f32").shape == (16, 16)


@pytest.mark.parametrize("over", [{"seed": -1}, {"bogus": 1}, {"policy": {"name": "magic"}},
                                  {"candidates": {"n": 2}},
                                  {"schedule": {"add_iters": [50, 500]}},
                                  {"optim": {"lr_mean": -1}}])
def test_bad_config_exits_nonzero(tmp_path, over, capsys):
    assert _run("active-run", _config(tmp_path, **over), tmp_path / "o") == 2
    assert "error" in capsys.readouterr().err


def test_unwritable_output_and_bad_resolution(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert _run("scene-gen", _config(tmp_path), blocker / "sub") == 2
    with pytest.raises(ConfigError):
        load_config(resolution="64by64")
    assert load_config(resolution="20x10").raw["resolution"] == [20, 10]
