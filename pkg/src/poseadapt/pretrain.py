"""Supervised pretraining of the regressor on the source domain.

Minimizes a joint-position loss plus a parameter-space loss over labeled
source samples with mini-batch Adam, for a fixed step budget. Everything is
deterministic given the config seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError
from .body import BodySpec, forward_kinematics
from .losses import prior_term
from .metrics import MetricsReport
from .regressor import ModelWeights, RegressorSpec, init_weights, raw_output, split_raw
from .worldsim import SourceDataset


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 12000
    batch_size: int = 64
    lr: float = 3e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    joint_weight: float = 1.0
    param_weight: float = 0.5
    # weight of the same parameter prior the adaptation loss uses; keeping it
    # in pretraining co-locates the offline and online optima on source data
    # (otherwise the first online steps walk to a prior-displaced optimum)
    prior_weight: float = 0.25
    n_train: int = 5000
    n_val: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.n_train < 1 or self.n_val < 1:
            raise ValueError("pretrain sizes must be positive (steps may be 0)")
        if self.lr <= 0 or not (0 <= self.adam_beta1 < 1) or not (0 <= self.adam_beta2 < 1):
            raise ValueError("bad optimizer settings")
        if self.joint_weight < 0 or self.param_weight < 0 or self.prior_weight < 0:
            raise ValueError("loss weights must be >= 0")


def _targets(samples, spec: RegressorSpec):
    x = np.stack([s.x for s in samples])
    joints = np.stack([s.joints3d for s in samples])
    theta = np.stack([s.pose.rotations for s in samples])
    log_beta = np.log(np.stack([s.shape.scales for s in samples]))
    log_scale = np.log(np.array([s.camera.scale for s in samples]))
    offset = np.stack([s.camera.offset for s in samples])
    return x, joints, theta, log_beta, log_scale, offset


def _batch_objective(spec, body, x, joints, theta_t, log_beta_t, log_scale_t,
                     offset_t, jw, pw, prw, priors):
    b, k = joints.shape[0], joints.shape[1]
    n_param = b * (3 * k + (k - 1) + 3)

    def obj(values, _ctx=None):
        raw = raw_output(values, spec, x)
        theta, log_beta, log_scale, offset = split_raw(raw, spec)
        pred = forward_kinematics(body, ad.exp(log_beta), theta)
        dj = pred - joints
        loss = jw * ((dj * dj).sum() * (1.0 / (b * k)))
        dth = theta - theta_t
        dlb = log_beta - log_beta_t
        dls = log_scale - log_scale_t
        dof = offset - offset_t
        ssq = (dth * dth).sum() + (dlb * dlb).sum() + (dls * dls).sum() + (dof * dof).sum()
        loss = loss + pw * (ssq * (1.0 / n_param))
        if prw != 0.0:
            loss = loss + prw * prior_term(log_beta, theta, priors)
        return loss

    return obj


def evaluate_weights(weights: ModelWeights, samples, body: BodySpec) -> MetricsReport:
    """Plain (no-adaptation) evaluation of a weight vector on labeled samples."""
    raw = raw_output(weights.values, weights.spec, np.stack([s.x for s in samples]))
    theta, log_beta, _, _ = split_raw(raw, weights.spec)
    pred = forward_kinematics(body, np.exp(log_beta), theta)
    truth = [s.joints3d for s in samples]
    return MetricsReport.from_frames(list(pred), truth)


def pretrain(dataset: SourceDataset, body: BodySpec, cfg: PretrainConfig,
             hidden=(32, 32)) -> tuple[ModelWeights, dict]:
    """Train from scratch on the dataset; returns (weights, metrics).

    The last ``n_val`` samples are held out for validation; training draws
    mini-batches from the rest. Metrics include the frozen-random-init
    validation error for reference.
    """
    samples = dataset.samples
    if len(samples) < cfg.n_train + cfg.n_val:
        raise ValueError(
            f"dataset has {len(samples)} samples, need {cfg.n_train + cfg.n_val}"
        )
    train = samples[: cfg.n_train]
    val = samples[cfg.n_train : cfg.n_train + cfg.n_val]
    spec = RegressorSpec(
        input_dim=dataset.config.obs_dim, hidden=tuple(hidden),
        n_joints=dataset.config.n_joints,
    )
    weights = init_weights(spec, cfg.seed)
    init_report = evaluate_weights(weights, val, body)

    x, joints, theta, log_beta, log_scale, offset = _targets(train, spec)
    rng = np.random.default_rng([cfg.seed, 7])
    phi = weights.values.copy()
    m = np.zeros_like(phi)
    v = np.zeros_like(phi)
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, 1e-8
    history = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train), size=cfg.batch_size)
        obj = _batch_objective(
            spec, body, x[idx], joints[idx], theta[idx], log_beta[idx],
            log_scale[idx], offset[idx], cfg.joint_weight, cfg.param_weight,
            cfg.prior_weight, dataset.priors,
        )
        g = ad.gradient(obj, phi)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** (step + 1))
        vhat = v / (1 - b2 ** (step + 1))
        # step down the rate for the last third of the budget
        lr = cfg.lr if step < 2 * cfg.steps // 3 else cfg.lr * 0.3
        phi = phi - lr * mhat / (np.sqrt(vhat) + eps)
        if not np.all(np.isfinite(phi)):
            raise NumericalError(f"pretraining diverged at step {step}")
        if step % 100 == 0 or step == cfg.steps - 1:
            history.append((step, float(ad.eval_loss(obj, phi))))

    weights = ModelWeights(spec, phi)
    report = evaluate_weights(weights, val, body)
    metrics = {
        "steps": cfg.steps,
        "val_mpjpe": report.mpjpe,
        "val_pa_mpjpe": report.pa_mpjpe,
        "val_pck": report.pck,
        "random_init_val_mpjpe": init_report.mpjpe,
        "final_train_loss": history[-1][1] if history else float("nan"),
        "history": history,
    }
    return weights, metrics
