"""Gaussian-splat reconstruction with uncertainty-driven next-best-view planning."""
from .errors import ConfigError, DivergenceError, NonFiniteError, SelectionError
from .metrics import MetricReport, aggregate, evaluate_views, per_step_curve, psnr, ssim_scalar
from .optim import OptimConfig, TrainState, fit, init_scene, loss_gradients, photometric_loss
from .planner import Policy, RunLog, Schedule, run_active_loop, score_path, select_next_view, \
    select_path
from .render import RenderConfig, project_gaussian, render, render_backward
from .scene import Camera, Gaussian3D, Scene, ViewpointSet, generate_synthetic_scene, \
    interpolate_path, look_at, sample_sphere_viewpoints
from .scoring import ScoreWeights, ViewScore, blend, blend_reweighted, score_variant, total_score
from .ssim import ssim_map
from .uncertainty import HeuristicPredictor, OraclePredictor, PatchRegressorModel, \
    TrainedPredictor, build_training_set, fit_predictor, heuristic_uncertainty, \
    oracle_uncertainty, train_patch_regressor

__version__ = "0.1.0"
