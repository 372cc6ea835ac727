"""Desk-scale simulator for bottleneck visual servoing and demonstration replay."""

from .control import (BottleneckThresholds, Demonstration, EpisodeResult,
                      ExternalEstimator, Gains, GroundTruthEstimator,
                      HandcraftedEstimator, SuccessTolerance, Twist, at_bottleneck,
                      base_gains, deploy, load_demo, record_demo, replay, run_servo,
                      save_demo, step_camera, twist_from_estimate)
from .dataset import generate_dataset, score_masks, validate_dataset
from .errors import (ConfigError, EstimatorUnavailableError, ProtocolError,
                     TargetLostError)
from .estimate import (ServoEstimate, estimate_gt, estimate_handcrafted, iou,
                       median_pixel, rotate_mask, rotation_by_template, scale_ratio)
from .geometry import (DEFAULT_INTRINSICS, Intrinsics, PixelCoord, Pose4, compose,
                       project, relative, wrap_angle)
from .harness import (ExperimentConfig, Report, run_benchmark, run_gain_ablation,
                      run_noise_ablation, write_report)
from .noise import EpisodeNoise, NoiseSetting, add_artifacts, perlin_field, warp_mask
from .protocol import EstimatorEndpoint, ExternalEstimatorClient, estimate_external
from .render import (apply_mask, load_image, load_mask, render, render_mask,
                     save_image, save_mask)
from .scene import (RandomizationConfig, Scene, SceneObject, Workspace,
                    designed_target, sample_eval_poses, sample_scene)

__version__ = "0.1.0"
