"""Online adaptation of the regressor over a stream, one frame at a time.

The reference scheme ("Final") runs, per frame and per inner iteration, a
two-level update: a lower step probes weights by descending the frame loss
(the probe is never committed), the upper step evaluates frame + temporal
losses at the probe and descends their exact gradient through the probe
step -- second order, unless configured to first order. The teacher weights
follow the student by exponential moving average, once per frame.

Comparison schemes:

==============  =============================================================
B1              plain steps on the frame loss
B2              plain steps on the temporal loss
B3              plain steps on frame + temporal jointly
B4              committed step on frame loss, then one on temporal
B5              committed step on frame loss, then one on frame + temporal
B6              two-level, upper = temporal only
Final           two-level, upper = frame + temporal
Baseline-Eq1    plain steps on the frame loss at the probe rate
==============  =============================================================

Committed single-level updates use the upper rate ``eta``; probe-style
frame-loss stages (the lower level, the first stage of B4/B5, and the
baseline) use ``alpha``. Two-stage and two-level schemes differ exactly in
whether the frame-loss step is committed.

One labeled source sample is drawn per frame (the online batch) and shared
by every frame-loss evaluation across the frame's inner iterations, so
lower and upper optimize the same function. The draw depends only on
(seed, frame index): adapting a longer stream never changes earlier
outputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NumericalError
from .body import BodySpec
from .losses import (
    LossBreakdown,
    LossWeights,
    PriorStats,
    frame_loss,
    merge_breakdowns,
    model_keypoints,
    motion_loss,
    prior_term,
    replay_term,
    reprojection_term,
    teacher_loss,
    temporal_loss,
)
from .regressor import (
    ModelWeights,
    Prediction,
    predict,
    raw_output,
    split_raw,
    teacher_update,
)

SCHEMES = ("B1", "B2", "B3", "B4", "B5", "B6", "Final", "Baseline-Eq1")
SECOND_ORDER_MODES = ("exact", "first")


@dataclass(frozen=True)
class AdaptConfig:
    alpha: float = 1e-4          # lower-level (probe) rate
    eta: float = 2e-4            # upper-level (committed) rate
    delta: float = 0.9           # teacher EMA decay
    tau: int = 1                 # motion-loss frame interval
    n_steps: int = 1             # inner iterations per frame
    scheme: str = "Final"
    second_order: str = "exact"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.eta < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("EMA decay must lie in [0, 1]")
        if self.tau < 1 or self.n_steps < 1:
            raise ValueError("tau and n_steps must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.second_order not in SECOND_ORDER_MODES:
            raise ValueError(f"second_order must be one of {SECOND_ORDER_MODES}")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class AdaptState:
    """Weights plus the short history the temporal terms need."""

    weights: ModelWeights
    teacher: ModelWeights
    buffer: tuple = ()          # ((x, keypoints2d), ...) oldest first, len <= tau
    frame_index: int = 0


@dataclass(frozen=True)
class FrameResult:
    prediction: Prediction
    losses: LossBreakdown
    wall_ms: float


@dataclass(frozen=True)
class StreamResult:
    predictions: list
    breakdowns: list
    wall_ms: list
    final_state: AdaptState


def init_state(base: ModelWeights) -> AdaptState:
    """Teacher starts as an exact copy of the student."""
    return AdaptState(weights=base, teacher=base)


def _objective(state: AdaptState, sample, src, cfg: AdaptConfig, body: BodySpec,
               priors, *, frame: bool, temporal: bool):
    """Scalar loss over the flat weight vector with the selected terms.

    Frame and temporal parts share one forward pass through the model. The
    previous frame enters the motion term only once the buffer spans tau
    frames (before that the term is defined as 0); the teacher output is a
    constant within the frame (the teacher updates after the inner loop).
    """
    lw = cfg.loss_weights
    spec = state.weights.spec
    x, points_true = sample.x, sample.keypoints2d
    prev = state.buffer[0] if len(state.buffer) >= cfg.tau else None
    teacher_raw = raw_output(state.teacher.values, spec, x) if temporal else None
    if frame and lw.replay != 0.0 and src is None:
        raise ValueError("replay weight > 0 requires a source sample")

    def obj(values, _ctx=None):
        raw, _, points = model_keypoints(values, spec, body, x)
        total = None
        if frame:
            theta, log_beta, _, _ = split_raw(raw, spec)
            total = lw.reproj * reprojection_term(points, points_true)
            total = total + lw.prior * prior_term(log_beta, theta, priors)
            if lw.replay != 0.0:
                total = total + lw.replay * replay_term(values, spec, body, src)
        if temporal:
            t_term = lw.teacher * teacher_loss(teacher_raw, raw)
            total = t_term if total is None else total + t_term
            if prev is not None and lw.motion != 0.0:
                x_prev, j_prev = prev
                _, _, points_prev = model_keypoints(values, spec, body, x_prev)
                total = total + lw.motion * motion_loss(
                    points_true, j_prev, points, points_prev
                )
        return total

    return obj


def lower_probe(state: AdaptState, sample, src, cfg: AdaptConfig, body: BodySpec,
                priors: PriorStats) -> np.ndarray:
    """Probe weights phi - alpha * grad(frame loss); never committed."""
    obj = _objective(state, sample, src, cfg, body, priors, frame=True, temporal=False)
    g = ad.gradient(obj, state.weights.values)
    return state.weights.values - cfg.alpha * g


def upper_update(state: AdaptState, sample, src, cfg: AdaptConfig, body: BodySpec,
                 priors: PriorStats) -> np.ndarray:
    """One committed two-level step; returns the new weight vector.

    Upper loss is frame + temporal at the probe for the reference scheme,
    temporal only for B6. The gradient is taken through the probe step
    (exactly, or with an identity Jacobian in first-order mode).
    """
    lower = _objective(state, sample, src, cfg, body, priors, frame=True, temporal=False)
    upper = _objective(state, sample, src, cfg, body, priors,
                       frame=(cfg.scheme != "B6"), temporal=True)
    g, _probe = ad.bilevel_gradient(
        lower, upper, state.weights.values, cfg.alpha,
        first_order=(cfg.second_order == "first"),
    )
    return state.weights.values - cfg.eta * g


def _with_weights(state: AdaptState, values: np.ndarray) -> AdaptState:
    return AdaptState(
        weights=ModelWeights(state.weights.spec, values),
        teacher=state.teacher,
        buffer=state.buffer,
        frame_index=state.frame_index,
    )


def _inner_step(state: AdaptState, sample, src, cfg: AdaptConfig, body, priors):
    """One inner iteration of the configured scheme; returns new weights."""
    phi = state.weights.values
    scheme = cfg.scheme
    if scheme in ("B6", "Final"):
        return upper_update(state, sample, src, cfg, body, priors)

    def obj(frame, temporal):
        return _objective(state, sample, src, cfg, body, priors,
                          frame=frame, temporal=temporal)

    if scheme == "B1":
        return phi - cfg.eta * ad.gradient(obj(True, False), phi)
    if scheme == "B2":
        return phi - cfg.eta * ad.gradient(obj(False, True), phi)
    if scheme == "B3":
        return phi - cfg.eta * ad.gradient(obj(True, True), phi)
    if scheme == "Baseline-Eq1":
        return phi - cfg.alpha * ad.gradient(obj(True, False), phi)
    # two-stage schemes commit the frame-loss step, then a second step
    mid = phi - cfg.alpha * ad.gradient(obj(True, False), phi)
    if scheme == "B4":
        return mid - cfg.eta * ad.gradient(obj(False, True), mid)
    if scheme == "B5":
        return mid - cfg.eta * ad.gradient(obj(True, True), mid)
    raise AssertionError(f"unhandled scheme {scheme}")


def _diagnostics(state: AdaptState, sample, src, cfg, body, priors) -> LossBreakdown:
    """Loss terms evaluated at the committed weights, after the frame update."""
    fb = frame_loss(state.weights, sample, src, priors, cfg.loss_weights, body)
    spec = state.weights.spec
    raw, _, points = model_keypoints(state.weights.values, spec, body, sample.x)
    teacher_raw = raw_output(state.teacher.values, spec, sample.x)
    m = 0.0
    if len(state.buffer) >= cfg.tau:
        x_prev, j_prev = state.buffer[0]
        _, _, points_prev = model_keypoints(state.weights.values, spec, body, x_prev)
        m = motion_loss(sample.keypoints2d, j_prev, points, points_prev)
    tb = temporal_loss(m, teacher_loss(teacher_raw, raw), cfg.loss_weights)
    return merge_breakdowns(fb, tb)


def adapt_frame(state: AdaptState, sample, src_sampler, cfg: AdaptConfig,
                body: BodySpec, priors: PriorStats) -> tuple[AdaptState, FrameResult]:
    """Process one stream frame: inner loop, teacher update, prediction.

    ``src_sampler`` maps a numpy Generator to one labeled source sample.
    The generator is seeded from (cfg.seed, frame index) only.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, state.frame_index])
    src = src_sampler(rng)
    for _ in range(cfg.n_steps):
        state = _with_weights(
            state, _inner_step(state, sample, src, cfg, body, priors)
        )

    committed = AdaptState(
        weights=state.weights,
        teacher=teacher_update(state.teacher, state.weights, cfg.delta),
        buffer=(state.buffer + ((sample.x, sample.keypoints2d),))[-cfg.tau:],
        frame_index=state.frame_index + 1,
    )
    # teacher in `state` is still the pre-update one the losses saw
    breakdown = _diagnostics(state, sample, src, cfg, body, priors)
    prediction = predict(state.weights, sample.x)
    wall = (time.perf_counter() - t0) * 1e3
    return committed, FrameResult(prediction, breakdown, wall)


def adapt_stream(base: ModelWeights, stream, dataset, cfg: AdaptConfig,
                 body: BodySpec) -> StreamResult:
    """Run the configured scheme over an ordered stream, visiting each frame
    once. A numerical failure aborts with the frame index attached."""
    samples = dataset.samples
    priors = dataset.priors

    def src_sampler(rng):
        return samples[int(rng.integers(len(samples)))]

    state = init_state(base)
    predictions, breakdowns, walls = [], [], []
    for i, sample in enumerate(stream):
        try:
            state, result = adapt_frame(state, sample, src_sampler, cfg, body, priors)
        except NumericalError as e:
            raise NumericalError(f"frame {i}: {e}") from e
        predictions.append(result.prediction)
        breakdowns.append(result.losses)
        walls.append(result.wall_ms)
    return StreamResult(predictions, breakdowns, walls, state)
