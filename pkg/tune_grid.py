import sys, time, warnings
sys.path.insert(0, "src")
warnings.filterwarnings("ignore")
import numpy as np
from dataclasses import replace
from poseadapt import worldsim as ws, body, pretrain as pt, adaptation as ada, metrics as mt
from poseadapt.pretrain import PretrainConfig
from poseadapt.regressor import predict
from poseadapt.body import forward_kinematics

b = body.default_body(13)
SEEDS = (100, 101, 102)

cfg = ws.DomainConfig(pose_center_scale=0.45, pose_spread=0.25, pose_axis_scale=(0.2,0.2,1.0),
                      noise_sigma=0.005, n_distractors=16)
ds = ws.make_source_dataset(cfg, 5500, seed=0)
tcfg = ws.shifted_config(cfg)
streams = {s: ws.make_target_stream(tcfg, 500, seed=s) for s in SEEDS}
sweeps = {s: ws.make_target_stream(tcfg, 400, seed=s) for s in SEEDS}
srcs = {s: ws.make_target_stream(cfg, 500, seed=s) for s in SEEDS}

pc = PretrainConfig(steps=12000, n_train=5000, n_val=500, prior_weight=0.25)
w, m = pt.pretrain(ds, b, pc, hidden=(128, 128))
print(f"pretrain: val={m['val_mpjpe']:.4f} ratio={m['random_init_val_mpjpe']/m['val_mpjpe']:.2f}", flush=True)

def mpjpe_of(stream, preds3d):
    return mt.MetricsReport.from_frames(preds3d, [f.joints3d for f in stream]).mpjpe

def frozen_median(strs):
    vals = []
    for s, stream in strs.items():
        preds = [forward_kinematics(b, predict(w, f.x).shape, predict(w, f.x).pose) for f in stream]
        vals.append(mpjpe_of(stream, preds))
    return float(np.median(vals))

fro_u = frozen_median(srcs)
print(f"frozen shifted={frozen_median(streams):.4f} unshifted={fro_u:.4f}", flush=True)

def run_median(scheme, alpha, eta, T=1, strs=None):
    strs = streams if strs is None else strs
    vals = []
    for s, stream in strs.items():
        try:
            acfg = ada.AdaptConfig(alpha=alpha, eta=eta, seed=s, scheme=scheme, n_steps=T)
            res = ada.adapt_stream(w, stream, ds, acfg, b)
            preds = [forward_kinematics(b, p.shape, p.pose) for p in res.predictions]
            vals.append(mpjpe_of(stream, preds))
        except Exception:
            vals.append(float("nan"))
    return float(np.median(vals)) if not any(np.isnan(v) for v in vals) else float("nan")

for eta in (3.5e-4, 4e-4):
    b1 = run_median("B1", eta, eta)
    b3 = run_median("B3", eta, eta)
    f_ = run_median("Final", 1e-4, eta)
    f_u = run_median("Final", 1e-4, eta, strs=srcs)
    def mg(f, r): return (r-f)/r*100
    print(f"eta={eta}: B1={b1:.4f} B3={b3:.4f} Final={f_:.4f} | F<B1 {mg(f_,b1):+.1f}% F<B3 {mg(f_,b3):+.1f}% | unshift {(f_u/fro_u-1)*100:+.1f}% {'OK' if f_u<=fro_u*1.1 else 'FAIL'}", flush=True)
    t1b = run_median("B3", eta, eta, T=1, strs=sweeps); t8b = run_median("B3", eta, eta, T=8, strs=sweeps)
    t1f = run_median("Final", 1e-4, eta, T=1, strs=sweeps); t8f = run_median("Final", 1e-4, eta, T=8, strs=sweeps)
    print(f"  T: B3 {t1b:.4f}->{t8b:.4f} (d={t8b-t1b:+.4f}) Final {t1f:.4f}->{t8f:.4f} (d={t8f-t1f:+.4f}) {'OK' if (t8b-t1b)>(t8f-t1f) else 'FAIL'}", flush=True)
