#!/usr/bin/env python3
"""Two-minute demo: tiny pretraining run, one shifted stream, frozen vs
adapted error printed per scheme."""

import numpy as np

from poseadapt import adaptation as ada
from poseadapt.body import default_body, forward_kinematics
from poseadapt.config import load_config
from poseadapt.metrics import MetricsReport
from poseadapt.pretrain import PretrainConfig, pretrain
from poseadapt.regressor import predict
from poseadapt.worldsim import make_source_dataset, make_target_stream, shifted_config

cfg = load_config(None)
body = default_body(cfg.source.n_joints)
dataset = make_source_dataset(cfg.source, 1700, seed=0)
weights, metrics = pretrain(
    dataset, body, PretrainConfig(steps=1500, n_train=1500, n_val=200),
    hidden=cfg.hidden,
)
print(f"pretrained: source val mpjpe {metrics['val_mpjpe']:.4f} "
      f"(random init {metrics['random_init_val_mpjpe']:.4f})")

stream = make_target_stream(shifted_config(cfg.source), 200, seed=0)
truth = [f.joints3d for f in stream]

frozen = [forward_kinematics(body, predict(weights, f.x).shape, predict(weights, f.x).pose)
          for f in stream]
print(f"frozen on shifted stream: {MetricsReport.from_frames(frozen, truth).summary()}")

for scheme in ("B1", "B3", "Final"):
    run_cfg = ada.AdaptConfig(
        alpha=cfg.adapt.alpha, eta=cfg.adapt.eta, scheme=scheme, seed=0,
    )
    result = ada.adapt_stream(weights, stream, dataset, run_cfg, body)
    preds = [forward_kinematics(body, p.shape, p.pose) for p in result.predictions]
    print(f"{scheme:<6} adapted:          {MetricsReport.from_frames(preds, truth).summary()}")
