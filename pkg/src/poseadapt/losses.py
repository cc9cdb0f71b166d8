"""Loss terms for the online adaptation objective.

Frame loss on one target frame: weighted sum of the squared 2D keypoint
reprojection error, a diagonal-gaussian prior on shape/pose parameters
(dimension-normalized squared Mahalanobis distance to source statistics),
and a supervised 3D replay term on one labeled source example. Temporal
loss: a 2D motion-consistency term between two frames plus an output
consistency term against the teacher network, each with its own weight.

All terms accept the flat weight vector as a plain array or an autodiff
tensor; the public ``frame_loss`` / ``temporal_loss`` entry points return a
float LossBreakdown.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError
from .body import BodySpec, forward_kinematics, project
from .regressor import ModelWeights, RegressorSpec, raw_output, split_raw


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the five loss terms."""

    reproj: float = 10.0
    prior: float = 1.0
    replay: float = 0.1
    motion: float = 0.1
    teacher: float = 0.1

    def __post_init__(self):
        for name in ("reproj", "prior", "replay", "motion", "teacher"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not (v >= 0.0 and np.isfinite(v)):
                raise ValueError(f"loss weight {name} must be finite and >= 0")


@dataclass(frozen=True)
class PriorStats:
    """Source-domain mean/variance of shape scales and pose rotations."""

    shape_mean: np.ndarray  # (K-1,)
    shape_var: np.ndarray   # (K-1,)
    pose_mean: np.ndarray   # (K, 3)
    pose_var: np.ndarray    # (K, 3)

    def __post_init__(self):
        for name in ("shape_mean", "shape_var", "pose_mean", "pose_var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.shape_var <= 0.0) or np.any(self.pose_var <= 0.0):
            raise ValueError("prior variances must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values plus their weighted totals."""

    reprojection: float = 0.0
    prior: float = 0.0
    source_replay: float = 0.0
    motion: float = 0.0
    teacher: float = 0.0
    frame_total: float = 0.0
    temporal_total: float = 0.0


def merge_breakdowns(frame: LossBreakdown, temporal: LossBreakdown) -> LossBreakdown:
    return replace(
        frame,
        motion=temporal.motion,
        teacher=temporal.teacher,
        temporal_total=temporal.temporal_total,
    )


def model_keypoints(values, spec: RegressorSpec, body: BodySpec, x):
    """(raw, joints3d, joints2d) predicted from weights for observation x."""
    raw = raw_output(values, spec, x)
    theta, log_beta, log_scale, offset = split_raw(raw, spec)
    joints = forward_kinematics(body, ad.exp(log_beta), theta)
    points = project(joints, (ad.exp(log_scale), offset))
    return raw, joints, points


def reprojection_term(points_pred, points_true):
    """Squared 2D error summed over all keypoint coordinates."""
    d = points_pred - np.asarray(points_true, dtype=np.float64)
    return (d * d).sum()


# softening of the prior distance near its minimum: keeps the term smooth
# (zero value and zero gradient at the prior mean) with bounded curvature
_PRIOR_SOFT = 0.01


def prior_term(log_beta, theta, priors: PriorStats):
    """Smoothed diagonal Mahalanobis distance of (beta, theta) to the priors.

    RMS of the standardized deviations, sqrt(mean(z^2) + c^2) - c with a
    small softening constant c. Computed on beta = exp(log_beta). The RMS
    form grows linearly in the deviation, so the prior guides implausible
    parameters back without overwhelming the data terms near the mean the
    way a quadratic penalty on low-variance coordinates would.
    """
    beta = ad.exp(log_beta)
    zb = (beta - priors.shape_mean) / np.sqrt(priors.shape_var)
    zt = (theta - priors.pose_mean) / np.sqrt(priors.pose_var)
    n = ad.value_of(zb).size + ad.value_of(zt).size
    msq = ((zb * zb).sum() + (zt * zt).sum()) * (1.0 / n)
    return ad.sqrt(msq + _PRIOR_SOFT * _PRIOR_SOFT) - _PRIOR_SOFT


def replay_term(values, spec: RegressorSpec, body: BodySpec, src):
    """Mean squared 3D joint error on one labeled source sample (root-aligned)."""
    raw = raw_output(values, spec, src.x)
    theta, log_beta, _, _ = split_raw(raw, spec)
    joints = forward_kinematics(body, ad.exp(log_beta), theta)
    truth = np.asarray(src.joints3d, dtype=np.float64)
    truth = truth - truth[0]
    d = joints - truth
    return (d * d).sum() * (1.0 / truth.shape[0])


def motion_loss(j_i, j_prev, jhat_i, jhat_prev):
    """Squared mismatch of predicted vs true 2D motion between two frames."""
    shapes = [ad.value_of(v).shape for v in (j_i, j_prev, jhat_i, jhat_prev)]
    if len(set(shapes)) != 1:
        raise ValueError(f"keypoint sets differ in shape: {shapes}")
    d = (jhat_i - jhat_prev) - (j_i - j_prev)
    return (d * d).sum()


def teacher_loss(t_out, s_out):
    """Squared distance between teacher and student raw output vectors."""
    ts, ss = ad.value_of(t_out).shape, ad.value_of(s_out).shape
    if ts != ss:
        raise ValueError(f"output lengths differ: {ts} vs {ss}")
    d = s_out - t_out
    return (d * d).sum()


def frame_terms(values, spec, body, x, points_true, src, priors):
    """Unweighted (reprojection, prior, replay) scalars; replay needs src."""
    raw, _, points = model_keypoints(values, spec, body, x)
    theta, log_beta, _, _ = split_raw(raw, spec)
    rep = reprojection_term(points, points_true)
    pri = prior_term(log_beta, theta, priors)
    if src is None:
        return rep, pri, None
    return rep, pri, replay_term(values, spec, body, src)


def frame_objective(spec, body, x, points_true, src, priors, lw: LossWeights):
    """Scalar frame loss as a function of the flat weight vector."""

    if lw.replay != 0.0 and src is None:
        raise ValueError("replay weight > 0 requires a source sample")
    use_src = src if lw.replay != 0.0 else None

    def obj(values, _ctx=None):
        rep, pri, repl = frame_terms(values, spec, body, x, points_true, use_src, priors)
        total = lw.reproj * rep + lw.prior * pri
        if repl is not None:
            total = total + lw.replay * repl
        return total

    return obj


def frame_loss(weights: ModelWeights, sample, src, priors, lw: LossWeights,
               body: BodySpec) -> LossBreakdown:
    """Evaluate the frame loss for one stream sample, term by term."""
    if lw.replay > 0.0 and src is None:
        raise ValueError("replay weight > 0 requires a source sample")
    rep, pri, repl = frame_terms(
        weights.values, weights.spec, body, sample.x, sample.keypoints2d, src, priors
    )
    rep, pri = float(rep), float(pri)
    repl = float(repl) if repl is not None else 0.0
    for name, v in (("reprojection", rep), ("prior", pri), ("source_replay", repl)):
        if not np.isfinite(v):
            raise NumericalError(f"{name} term is not finite")
    total = lw.reproj * rep + lw.prior * pri + lw.replay * repl
    return LossBreakdown(
        reprojection=rep, prior=pri, source_replay=repl, frame_total=total
    )


def temporal_loss(motion, teacher, lw: LossWeights) -> LossBreakdown:
    """Weighted temporal total from its two sub-terms."""
    motion, teacher = float(motion), float(teacher)
    for name, v in (("motion", motion), ("teacher", teacher)):
        if not np.isfinite(v):
            raise NumericalError(f"{name} term is not finite")
    return LossBreakdown(
        motion=motion,
        teacher=teacher,
        temporal_total=lw.motion * motion + lw.teacher * teacher,
    )
