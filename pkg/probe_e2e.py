"""One-off end-to-end probe of the desk KF pipeline (not part of the package)."""
import time

import numpy as np

from meno.decoder import (DecoderConfig, DecoderNet, DiffusionSchedule, ddim_enhance,
                          meno_decode, noise_sweep, train_decoder, best_tau)
from meno.field import Quantity, Split, TrajectorySet, downsample_strided, upsample_bilinear
from meno.metrics import psdd, relative_l2
from meno.operator import OperatorConfig, OperatorNet, rollout, train_operator
from meno.rng import Rng
from meno.simulate import KolmogorovConfig, generate_kf_dataset

t_all = time.time()

# 1) data
cfg = KolmogorovConfig(grid_n=64, viscosity=0.02, forcing_n=4, dt_solver=5e-3,
                       frames=30, frame_interval=50, spinup_steps=3000, seed=0)
t0 = time.time()
full = generate_kf_dataset(cfg, runs=14)
print(f"[{time.time()-t_all:5.0f}s] KF gen: {time.time()-t0:.0f}s shape {full.shape}")
hr = full.trajectories
train_hr, val_hr, test_hr = hr[:9], hr[9:10], hr[10:]
lr16 = downsample_strided(hr, 16, 16)
lr32 = downsample_strided(hr, 32, 32)

# 2) operator at 16x16
op = OperatorNet(OperatorConfig(n_in=1, hidden=32, layers=4, modes=8, seed=0))
train_ts = TrajectorySet(lr16[:9], full.dt, full.domain_size, full.quantity, Split.TRAIN, "p")
t0 = time.time()
curve = train_operator(op, train_ts, epochs=40, lr=2e-3, batch_size=32, seed=1)
print(f"[{time.time()-t_all:5.0f}s] op train {time.time()-t0:.0f}s loss {curve[0]:.4f}->{np.mean(curve[-10:]):.5f}")
# one-step val quality
val_lr = lr16[9:10]
pred1 = np.stack([op.predict(val_lr[0, t:t+1][None])[0] for t in range(29)])
print("   op one-step RL2:", relative_l2(pred1[None], val_lr[0, 1:][None]).aggregate,
      " persistence:", relative_l2(val_lr[0, :-1][None], val_lr[0, 1:][None]).aggregate)

# 3) decoders on train HR frames
dec_cfg = DecoderConfig(base=12, mults=(1, 2, 2), res_blocks=1, emb_dim=32, seed=0)
imf_net = DecoderNet(dec_cfg)
t0 = time.time()
curve_i, stats = train_decoder(imf_net, train_hr, "imf", iters=900, lr=1e-3, batch_size=4, seed=2)
print(f"[{time.time()-t_all:5.0f}s] imf train {time.time()-t0:.0f}s loss {curve_i[0]:.3f}->{np.mean(curve_i[-30:]):.4f}")

sched = DiffusionSchedule()
ddpm_net = DecoderNet(DecoderConfig(base=12, mults=(1, 2, 2), res_blocks=1, emb_dim=32, seed=1))
t0 = time.time()
curve_d, stats_d = train_decoder(ddpm_net, train_hr, "ddpm", iters=900, lr=2e-3, batch_size=4, seed=3, sched=sched)
print(f"[{time.time()-t_all:5.0f}s] ddpm train {time.time()-t0:.0f}s loss {curve_d[0]:.3f}->{np.mean(curve_d[-30:]):.4f}")

# 4) tau sweep on ground-truth LR inputs (criterion 9)
pairs_idx = [(b, t) for b in range(9, 10) for t in range(0, 30, 3)]
lr16_fields = np.stack([lr16[b, t] for b, t in pairs_idx])
lr32_fields = np.stack([lr32[b, t] for b, t in pairs_idx])
hr_fields = np.stack([hr[b, t] for b, t in pairs_idx])
taus = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.55, 0.7, 0.85, 1.0]
t0 = time.time()
rows4 = noise_sweep(imf_net, lr16_fields, hr_fields, taus, rng_seed=0, stats=stats)
rows2 = noise_sweep(imf_net, lr32_fields, hr_fields, taus, rng_seed=0, stats=stats)
print(f"[{time.time()-t_all:5.0f}s] sweep {time.time()-t0:.0f}s")
print("   4x rows:", [(t, round(v, 4)) for t, v in rows4])
print("   2x rows:", [(t, round(v, 4)) for t, v in rows2])
print(f"   best tau 4x={best_tau(rows4)} 2x={best_tau(rows2)}  (need 4x > 2x)")

# 5) pipelines on 4 test trajectories, horizon 20
horizon = 20
tau_use = best_tau(rows4)
wins_psdd = 0
rl2_meno, rl2_ddim, rl2_nosr = [], [], []
t0 = time.time()
for b in range(10, 14):
    ic_lr = lr16[b, :1]
    truth = hr[b, 1:horizon+1]
    lr_roll = rollout(op, ic_lr, horizon)
    # NO-SR: same weights on the upsampled fine-grid IC
    ic_hr = upsample_bilinear(lr16[b, 0].astype(np.float64), 64, 64)[None].astype(np.float32)
    sr_roll = rollout(op, ic_hr, horizon)
    meno_frames = np.stack([
        meno_decode(imf_net, lr_roll[t], tau_use, Rng(100 + t), stats, (64, 64))
        for t in range(horizon)])
    ddim_frames = np.stack([
        ddim_enhance(ddpm_net, lr_roll[t], 400, 20, sched, Rng(200 + t), stats_d, (64, 64))
        for t in range(horizon)])
    p_sr = psdd(sr_roll.astype(np.float64), truth.astype(np.float64))
    p_meno = psdd(meno_frames, truth.astype(np.float64))
    p_ddim = psdd(ddim_frames, truth.astype(np.float64))
    r_meno = relative_l2(meno_frames[None], truth[None].astype(np.float64)).aggregate
    r_ddim = relative_l2(ddim_frames[None], truth[None].astype(np.float64)).aggregate
    r_sr = relative_l2(sr_roll[None].astype(np.float64), truth[None].astype(np.float64)).aggregate
    wins_psdd += int(p_meno < p_sr)
    rl2_meno.append(r_meno); rl2_ddim.append(r_ddim); rl2_nosr.append(r_sr)
    print(f"   traj {b}: PSDD meno {p_meno:.2e} sr {p_sr:.2e} ddim {p_ddim:.2e} | RL2 meno {r_meno:.3f} ddim {r_ddim:.3f} sr {r_sr:.3f}")
print(f"[{time.time()-t_all:5.0f}s] pipelines {time.time()-t0:.0f}s")
print(f"PSDD wins vs NO-SR: {wins_psdd}/4 (need >=3)")
print(f"RL2 mean: meno {np.mean(rl2_meno):.3f} vs ddim {np.mean(rl2_ddim):.3f} (need meno < ddim)")
print(f"TOTAL {time.time()-t_all:.0f}s")
