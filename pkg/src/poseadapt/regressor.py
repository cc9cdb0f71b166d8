"""Student regressor mapping observation features to body and camera
parameters, plus the exponential-moving-average teacher copy.

The network is a small fully-connected net with tanh hidden layers (smooth
everywhere, so curvature through the weights is nonzero and the
second-order update has something to act on). The output head is bounded,
``bound * tanh(.)`` per coordinate, which caps the reachable poses and
camera values and with them the loss curvature seen by the online updates.
Weights live in one flat float64 vector; layout is consecutive (W, b)
blocks per layer.

Output layout for K joints: 3K axis-angle pose entries, K-1 log bone
scales, then (log camera scale, offset x, offset y). Shape scales and the
camera scale go through exp, so they are positive by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body import CameraParams, PoseParams, ShapeParams

_CKPT_TAG = "poseadapt-weights 1"


@dataclass(frozen=True)
class RegressorSpec:
    input_dim: int
    hidden: tuple[int, ...] = (128, 128)
    n_joints: int = 13

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.n_joints < 2 or any(h < 1 for h in self.hidden):
            raise ValueError("regressor dimensions must be positive")

    @property
    def output_dim(self) -> int:
        k = self.n_joints
        return 3 * k + (k - 1) + 3

    @property
    def output_bounds(self) -> np.ndarray:
        """Per-coordinate half-range of the bounded output head.

        Raw outputs are ``bound * tanh(z)``: pose coordinates cover a bit
        beyond +-pi, log bone scales / log camera scale / offsets cover
        their plausible ranges with margin. Bounded outputs keep the loss
        landscape's curvature bounded, so fixed-rate gradient steps cannot
        blow up no matter how far a stream drifts.
        """
        k = self.n_joints
        return np.concatenate([
            np.full(3 * k, 3.3),
            np.full(k - 1, 0.5),
            np.array([1.5, 1.2, 1.2]),
        ])

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim,) + self.hidden + (self.output_dim,)

    @property
    def param_count(self) -> int:
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


@dataclass(frozen=True)
class ModelWeights:
    spec: RegressorSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (self.spec.param_count,):
            raise ValueError(
                f"expected {self.spec.param_count} weights, got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite")


# the teacher is just another weight vector over the same spec
TeacherWeights = ModelWeights


@dataclass(frozen=True)
class Prediction:
    shape: ShapeParams
    pose: PoseParams
    camera: CameraParams
    raw: np.ndarray


def init_weights(spec: RegressorSpec, seed) -> ModelWeights:
    """Fan-in-scaled gaussian init, deterministic per seed. Biases start at 0."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    chunks = []
    for i in range(len(dims) - 1):
        chunks.append(rng.normal(0.0, 1.0 / np.sqrt(dims[i]), dims[i] * dims[i + 1]))
        chunks.append(np.zeros(dims[i + 1]))
    return ModelWeights(spec, np.concatenate(chunks))


def raw_output(values, spec: RegressorSpec, x):
    """Network output for observation(s) ``x``; values may be a Tensor.

    ``x`` is (D,) or (B, D); output is (output_dim,) or (B, output_dim).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(
            f"observation has dim {x.shape[-1]}, expected {spec.input_dim}"
        )
    single = x.ndim == 1
    h = x[None, :] if single else x
    dims = spec.layer_dims
    off = 0
    for i in range(len(dims) - 1):
        din, dout = dims[i], dims[i + 1]
        w = values[off:off + din * dout].reshape(din, dout)
        off += din * dout
        b = values[off:off + dout]
        off += dout
        h = h @ w + b
        if i < len(dims) - 2:
            h = ad.tanh(h)
    h = ad.tanh(h) * spec.output_bounds
    return h[0] if single else h


def split_raw(raw, spec: RegressorSpec):
    """Split a raw output vector into (theta, log_beta, log_scale, offset)."""
    k = spec.n_joints
    shape = ad.value_of(raw).shape
    theta = raw[..., : 3 * k].reshape(shape[:-1] + (k, 3))
    log_beta = raw[..., 3 * k : 4 * k - 1]
    log_scale = raw[..., 4 * k - 1]
    offset = raw[..., 4 * k :]
    return theta, log_beta, log_scale, offset


def predict(weights: ModelWeights, x) -> Prediction:
    """Typed parameter estimate for a single observation vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict takes a single observation vector")
    raw = raw_output(weights.values, weights.spec, x)
    theta, log_beta, log_scale, offset = split_raw(raw, weights.spec)
    return Prediction(
        shape=ShapeParams(np.exp(log_beta)),
        pose=PoseParams(theta),
        camera=CameraParams(float(np.exp(log_scale)), offset),
        raw=raw,
    )


def teacher_update(omega: ModelWeights, phi: ModelWeights, delta: float) -> ModelWeights:
    """EMA step: new teacher = delta * teacher + (1 - delta) * student."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("EMA decay delta must lie in [0, 1]")
    if omega.spec != phi.spec:
        raise ValueError("teacher and student specs differ")
    return ModelWeights(omega.spec, delta * omega.values + (1.0 - delta) * phi.values)


def save_weights(weights: ModelWeights, path) -> None:
    """Checkpoint format: one ASCII header line, then little-endian float64s."""
    spec = weights.spec
    hidden = ",".join(str(h) for h in spec.hidden)
    header = (
        f"{_CKPT_TAG} input={spec.input_dim} hidden={hidden} "
        f"joints={spec.n_joints} count={spec.param_count}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(weights.values.astype("<f8").tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        blob = fh.read()
    fields = header.split()
    if fields[:2] != _CKPT_TAG.split():
        raise ValueError(f"not a weights checkpoint (expected '{_CKPT_TAG}')")
    kv = dict(f.split("=", 1) for f in fields[2:])
    spec = RegressorSpec(
        input_dim=int(kv["input"]),
        hidden=tuple(int(h) for h in kv["hidden"].split(",") if h),
        n_joints=int(kv["joints"]),
    )
    values = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    if values.shape[0] != int(kv["count"]) or values.shape[0] != spec.param_count:
        raise ValueError("checkpoint size does not match its header")
    return ModelWeights(spec, values)
