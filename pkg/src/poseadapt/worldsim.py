"""Synthetic source/target data generator.

A "subject" is one body-shape / camera draw; its pose evolves by a
mean-reverting gaussian walk, so streams are temporally coherent. The
observation vector is the flattened true 2D keypoints plus gaussian noise,
followed by i.i.d. distractor features that carry no signal (what an
imperfect feature extractor would add). Supervision keypoints are exact:
noise lives in the observation only, never in the 2D targets.

Domain shift is expressed through the config: the default shifted config
scales the camera up 1.7x, the bones down to 0.95x and moves the camera
offset -- the axes along which deployed footage typically differs from the
capture-lab source. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .body import (
    BodySpec,
    CameraParams,
    PoseParams,
    ShapeParams,
    default_body,
    forward_kinematics,
    project,
)
from .losses import PriorStats

_STREAM_TAG = "poseadapt-stream 1"
_VAR_FLOOR = 1e-6  # prior variances are floored here (degenerate datasets)


@dataclass(frozen=True)
class DomainConfig:
    n_joints: int = 13
    cam_scale_range: tuple[float, float] = (0.30, 0.34)
    cam_offset_center: tuple[float, float] = (0.5, 0.5)
    cam_offset_spread: float = 0.03
    bone_scale_range: tuple[float, float] = (0.96, 1.04)
    noise_sigma: float = 0.005
    n_distractors: int = 16
    occlude_count: int = 0       # keypoint coordinates zeroed on an occluded frame
    occlude_rate: float = 0.0    # long-run fraction of occluded frames
    occlude_burst: float = 8.0   # mean length of an occlusion burst (frames)
    pose_center_scale: float = 0.45  # per-stream mean pose magnitude (rad)
    pose_spread: float = 0.25        # stationary per-coordinate std around it
    pose_reversion: float = 0.06     # mean-reversion rate per frame
    # per-axis articulation scale: most rotation happens about the image
    # plane normal (z, fully visible); out-of-plane axes move less but keep
    # the depth ambiguity alive
    pose_axis_scale: tuple[float, float, float] = (0.2, 0.2, 1.0)

    def __post_init__(self):
        if self.n_joints < 2:
            raise ValueError("need at least 2 joints")
        for name in ("cam_scale_range", "bone_scale_range"):
            lo, hi = getattr(self, name)
            if not (0.0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")
        if self.noise_sigma < 0 or self.cam_offset_spread < 0:
            raise ValueError("spreads must be >= 0")
        if self.n_distractors < 0 or self.occlude_count < 0:
            raise ValueError("counts must be >= 0")
        if self.occlude_count > 2 * self.n_joints:
            raise ValueError("cannot occlude more coordinates than exist")
        if not 0.0 <= self.occlude_rate < 1.0 or self.occlude_burst < 1.0:
            raise ValueError("occlude_rate must be in [0, 1) and occlude_burst >= 1")
        if not 0.0 < self.pose_reversion <= 1.0:
            raise ValueError("pose_reversion must lie in (0, 1]")
        if self.pose_spread < 0 or self.pose_center_scale < 0:
            raise ValueError("pose scales must be >= 0")
        scale = tuple(float(s) for s in self.pose_axis_scale)
        object.__setattr__(self, "pose_axis_scale", scale)
        if len(scale) != 3 or any(s < 0 for s in scale):
            raise ValueError("pose_axis_scale must be three values >= 0")

    @property
    def obs_dim(self) -> int:
        return 2 * self.n_joints + self.n_distractors

    @property
    def pose_step_sigma(self) -> float:
        """Per-coordinate innovation std keeping the walk stationary at pose_spread."""
        k = self.pose_reversion
        return self.pose_spread * math.sqrt(1.0 - (1.0 - k) ** 2)

    @property
    def pose_step_bound(self) -> float:
        """Envelope for the per-frame pose change norm (99%+ of steps below)."""
        ssq = sum(s * s for s in self.pose_axis_scale)
        return 2.0 * self.pose_spread * math.sqrt(2.0 * self.pose_reversion * self.n_joints * ssq)


def shifted_config(cfg: DomainConfig, cam_scale_factor: float = 1.7,
                   bone_scale_factor: float = 0.95,
                   cam_offset_shift: tuple[float, float] = (0.0, -0.15),
                   occlude_count: int = 6, occlude_rate: float = 0.25,
                   **overrides) -> DomainConfig:
    """Default domain-shift bundle applied to a source config: camera scale
    up, bones slightly down, camera offset moved, and occlusion bursts on
    (deployed footage has passers-by; the capture lab does not)."""
    lo, hi = cfg.cam_scale_range
    blo, bhi = cfg.bone_scale_range
    cx, cy = cfg.cam_offset_center
    return replace(
        cfg,
        cam_scale_range=(lo * cam_scale_factor, hi * cam_scale_factor),
        bone_scale_range=(blo * bone_scale_factor, bhi * bone_scale_factor),
        cam_offset_center=(cx + cam_offset_shift[0], cy + cam_offset_shift[1]),
        occlude_count=occlude_count,
        occlude_rate=occlude_rate,
        **overrides,
    )


@dataclass(frozen=True)
class StreamSample:
    """One target-stream frame. 3D joints and true params are hidden truth,
    used for evaluation only; the 2D keypoints are the supervision signal."""

    index: int
    x: np.ndarray            # (obs_dim,)
    keypoints2d: np.ndarray  # (K, 2), exactly project(joints3d, camera)
    joints3d: np.ndarray     # (K, 3)
    shape: ShapeParams
    pose: PoseParams
    camera: CameraParams


@dataclass(frozen=True)
class SourceSample:
    x: np.ndarray
    keypoints2d: np.ndarray
    joints3d: np.ndarray
    shape: ShapeParams
    pose: PoseParams
    camera: CameraParams


@dataclass(frozen=True)
class SourceDataset:
    samples: tuple
    priors: PriorStats
    config: DomainConfig


def _clamp_pose(theta: np.ndarray) -> np.ndarray:
    """Coordinate clamp to [-pi, pi], then PoseParams' magnitude clamp."""
    return PoseParams(np.clip(theta, -math.pi, math.pi)).rotations


def _axis_sigma(cfg: DomainConfig, base: float) -> np.ndarray:
    return base * np.asarray(cfg.pose_axis_scale)


def _draw_subject(cfg: DomainConfig, rng):
    k = cfg.n_joints
    beta = rng.uniform(*cfg.bone_scale_range, size=k - 1)
    scale = rng.uniform(*cfg.cam_scale_range)
    offset = np.asarray(cfg.cam_offset_center) + rng.uniform(
        -cfg.cam_offset_spread, cfg.cam_offset_spread, size=2
    )
    center = rng.normal(0.0, 1.0, size=(k, 3)) * _axis_sigma(cfg, cfg.pose_center_scale)
    return ShapeParams(beta), CameraParams(scale, offset), center


def sample_trajectory(cfg: DomainConfig, length: int, seed):
    """Temporally coherent (shape, pose, camera) sequence for one subject.

    Shape and camera are fixed for the whole trajectory; the pose follows a
    stationary mean-reverting walk, so the marginal pose distribution
    matches i.i.d. source sampling with the same config.
    """
    if length < 1:
        raise ValueError("trajectory length must be >= 1")
    rng = np.random.default_rng(seed)
    shape, camera, center = _draw_subject(cfg, rng)
    k = cfg.n_joints
    spread = _axis_sigma(cfg, cfg.pose_spread)
    step = _axis_sigma(cfg, cfg.pose_step_sigma)
    theta = center + rng.normal(0.0, 1.0, size=(k, 3)) * spread
    out = []
    rev = cfg.pose_reversion
    for _ in range(length):
        clamped = _clamp_pose(theta)
        out.append((shape, PoseParams(clamped), camera))
        theta = center + (1.0 - rev) * (theta - center) + rng.normal(
            0.0, 1.0, size=(k, 3)
        ) * step
    return out


def observe(keypoints2d, cfg: DomainConfig, seed, occluded: bool | None = None) -> np.ndarray:
    """Observation vector: noisy flattened keypoints then distractors.

    On an occluded frame, ``occlude_count`` keypoint coordinates (chosen
    per frame) are zeroed in the observation -- the zero value is the mask
    flag. ``occluded=None`` draws the flag i.i.d. at ``occlude_rate``
    (streams instead pass the flag from their burst process).
    """
    rng = np.random.default_rng(seed)
    flat = np.asarray(keypoints2d, dtype=np.float64).reshape(-1)
    x = flat + rng.normal(0.0, cfg.noise_sigma, size=flat.shape)
    if occluded is None:
        occluded = cfg.occlude_rate > 0.0 and rng.random() < cfg.occlude_rate
    if occluded and cfg.occlude_count > 0:
        drop = rng.choice(flat.size, size=cfg.occlude_count, replace=False)
        x[drop] = 0.0
    if cfg.n_distractors > 0:
        x = np.concatenate([x, rng.standard_normal(cfg.n_distractors)])
    return x


class _BurstState:
    """Two-state occlusion process with the configured stationary rate and
    mean burst length."""

    def __init__(self, cfg: DomainConfig):
        self.active = False
        self.p_end = 1.0 / cfg.occlude_burst
        if cfg.occlude_rate <= 0.0 or cfg.occlude_count == 0:
            self.p_start = 0.0
        else:
            self.p_start = min(
                1.0, cfg.occlude_rate * self.p_end / (1.0 - cfg.occlude_rate)
            )

    def step(self, rng) -> bool:
        u = rng.random()
        if self.active:
            self.active = u >= self.p_end
        else:
            self.active = u < self.p_start
        return self.active


def _render(shape, pose, camera, cfg, rng, body, occluded=None):
    joints = forward_kinematics(body, shape, pose)
    points = project(joints, camera)
    return observe(points, cfg, rng, occluded=occluded), points, joints


def make_source_dataset(cfg: DomainConfig, n: int, seed,
                        body: BodySpec | None = None) -> SourceDataset:
    """n i.i.d. labeled frames plus parameter statistics for the prior."""
    if n < 1:
        raise ValueError("need at least one source sample")
    rng = np.random.default_rng(seed)
    body = body if body is not None else default_body(cfg.n_joints)
    k = cfg.n_joints
    samples = []
    betas = np.zeros((n, k - 1))
    thetas = np.zeros((n, k, 3))
    spread = _axis_sigma(cfg, cfg.pose_spread)
    for i in range(n):
        shape, camera, center = _draw_subject(cfg, rng)
        theta = _clamp_pose(center + rng.normal(0.0, 1.0, size=(k, 3)) * spread)
        pose = PoseParams(theta)
        x, points, joints = _render(shape, pose, camera, cfg, rng, body)
        samples.append(SourceSample(
            x=x, keypoints2d=points, joints3d=joints,
            shape=shape, pose=pose, camera=camera,
        ))
        betas[i] = shape.scales
        thetas[i] = pose.rotations
    priors = PriorStats(
        shape_mean=betas.mean(axis=0),
        shape_var=np.maximum(betas.var(axis=0), _VAR_FLOOR),
        pose_mean=thetas.mean(axis=0),
        pose_var=np.maximum(thetas.var(axis=0), _VAR_FLOOR),
    )
    return SourceDataset(samples=tuple(samples), priors=priors, config=cfg)


def make_target_stream(cfg: DomainConfig, n: int, seed,
                       body: BodySpec | None = None,
                       cfg_after: DomainConfig | None = None,
                       shift_at: int | None = None):
    """One rendered subject trajectory under ``cfg``.

    If ``shift_at`` is given, frames from that index on are re-rendered
    under ``cfg_after`` (fresh subject draw), modeling a distribution that
    changes mid-stream.
    """
    if n < 1:
        raise ValueError("stream length must be >= 1")
    if (shift_at is None) != (cfg_after is None):
        raise ValueError("shift_at and cfg_after must be given together")
    body = body if body is not None else default_body(cfg.n_joints)
    rng = np.random.default_rng([seed, 1])
    frames = []
    bursts = _BurstState(cfg)

    def emit(i, shape, pose, camera, frame_cfg):
        occ = bursts.step(rng)
        x, points, joints = _render(shape, pose, camera, frame_cfg, rng, body,
                                    occluded=occ)
        frames.append(StreamSample(
            index=i, x=x, keypoints2d=points, joints3d=joints,
            shape=shape, pose=pose, camera=camera,
        ))

    first = n if shift_at is None else min(max(shift_at, 0), n)
    if first >= 1:
        for i, (shape, pose, camera) in enumerate(sample_trajectory(cfg, first, seed)):
            emit(i, shape, pose, camera, cfg)
    if shift_at is not None and first < n:
        bursts = _BurstState(cfg_after)
        traj = sample_trajectory(cfg_after, n - first, [seed, 2])
        for off, (shape, pose, camera) in enumerate(traj):
            emit(first + off, shape, pose, camera, cfg_after)
    return frames


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def save_stream(frames, path) -> None:
    """Columnar text format, one frame per line:
    index, x, keypoints2d, joints3d, shape, pose, camera(scale, offset)."""
    if not frames:
        raise ValueError("cannot serialize an empty stream")
    k = frames[0].keypoints2d.shape[0]
    d = frames[0].x.shape[0]
    with open(path, "w") as fh:
        fh.write(f"{_STREAM_TAG}\njoints {k} obs {d} frames {len(frames)}\n")
        for f in frames:
            fields = [
                str(f.index), _fmt(f.x), _fmt(f.keypoints2d), _fmt(f.joints3d),
                _fmt(f.shape.scales), _fmt(f.pose.rotations),
                _fmt([f.camera.scale]), _fmt(f.camera.offset),
            ]
            fh.write(" ".join(fields) + "\n")


def load_stream(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _STREAM_TAG:
        raise ValueError(f"not a stream file (expected '{_STREAM_TAG}' header)")
    hdr = lines[1].split()
    k, d, n = int(hdr[1]), int(hdr[3]), int(hdr[5])
    frames = []
    for ln in lines[2:]:
        vals = ln.split()
        idx = int(vals[0])
        rest = np.array([float(v) for v in vals[1:]])
        sizes = [d, 2 * k, 3 * k, k - 1, 3 * k, 1, 2]
        if rest.size != sum(sizes):
            raise ValueError(f"frame {idx}: expected {sum(sizes)} values, got {rest.size}")
        parts = np.split(rest, np.cumsum(sizes)[:-1])
        frames.append(StreamSample(
            index=idx,
            x=parts[0],
            keypoints2d=parts[1].reshape(k, 2),
            joints3d=parts[2].reshape(k, 3),
            shape=ShapeParams(parts[3]),
            pose=PoseParams(parts[4].reshape(k, 3)),
            camera=CameraParams(parts[5][0], parts[6]),
        ))
    if len(frames) != n:
        raise ValueError(f"expected {n} frames, found {len(frames)}")
    return frames
