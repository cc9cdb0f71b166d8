"""Online adaptation of a pose regressor to shifted observation streams via
a two-level probe/update optimization scheme, with a synthetic benchmark
world, evaluation metrics, and an experiment CLI."""

__version__ = "0.1.0"

from . import adaptation, autodiff, body, config, losses, metrics, pretrain, regressor, worldsim  # noqa: F401
from .adaptation import AdaptConfig, AdaptState, adapt_frame, adapt_stream
from .autodiff import NumericalError, bilevel_gradient, eval_loss, grad, gradient
from .body import BodySpec, CameraParams, PoseParams, ShapeParams, default_body, forward_kinematics, project
from .losses import LossBreakdown, LossWeights, PriorStats, frame_loss, motion_loss, teacher_loss, temporal_loss
from .metrics import MetricsReport, mpjpe, pa_mpjpe, pck, procrustes_align
from .regressor import ModelWeights, Prediction, RegressorSpec, TeacherWeights, init_weights, predict, teacher_update
from .worldsim import DomainConfig, SourceSample, StreamSample, make_source_dataset, make_target_stream, observe, sample_trajectory, shifted_config
