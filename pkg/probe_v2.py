import time
import numpy as np
from meno.decoder import (DecoderConfig, DecoderNet, DiffusionSchedule, ddim_enhance,
                          meno_decode, noise_sweep, train_decoder, best_tau)
from meno.field import Quantity, Split, TrajectorySet, downsample_strided, upsample_bilinear
from meno.metrics import psdd, relative_l2, energy_spectrum
from meno.operator import OperatorConfig, OperatorNet, rollout, train_operator
from meno.rng import Rng
from meno.simulate import KolmogorovConfig, generate_kf_dataset

t_all = time.time()
def log(msg): print(f"[{time.time()-t_all:5.0f}s] {msg}", flush=True)

cfg = KolmogorovConfig(grid_n=64, viscosity=0.01, forcing_n=4, dt_solver=2e-3,
                       frames=30, frame_interval=50, spinup_steps=7500, seed=0)
full = generate_kf_dataset(cfg, runs=14)
hr = full.trajectories
log(f"KF gen shape {full.shape}, |w|max {np.abs(hr).max():.1f}")
ks, es = energy_spectrum(hr[0, -1].astype(np.float64))
es = es/es.sum()
log("spec log10 k=1..21: " + np.array2string(np.log10(es[:21]+1e-30), precision=1))
log(f"frame corr: {np.corrcoef(hr[0,0].ravel(), hr[0,1].ravel())[0,1]:.3f} (1 step), {np.corrcoef(hr[0,0].ravel(), hr[0,10].ravel())[0,1]:.3f} (10)")

train_hr = hr[:9]
lr16 = downsample_strided(hr, 16, 16)
lr32 = downsample_strided(hr, 32, 32)

op = OperatorNet(OperatorConfig(n_in=1, hidden=32, layers=4, modes=8, seed=0))
train_ts = TrajectorySet(lr16[:9], full.dt, full.domain_size, full.quantity, Split.TRAIN, "p")
curve = train_operator(op, train_ts, epochs=40, lr=2e-3, batch_size=32, seed=1)
val_lr = lr16[9:10]
pred1 = np.stack([op.predict(val_lr[0, t:t+1][None])[0] for t in range(29)])
log(f"op: loss {curve[0]:.4f}->{np.mean(curve[-10:]):.5f}; 1-step RL2 {relative_l2(pred1[None], val_lr[0,1:][None]).aggregate:.3f} vs persist {relative_l2(val_lr[0,:-1][None], val_lr[0,1:][None]).aggregate:.3f}")

imf_net = DecoderNet(DecoderConfig(base=12, mults=(1,2,2), res_blocks=1, emb_dim=32, seed=0))
curve_i, stats = train_decoder(imf_net, train_hr, "imf", iters=1600, lr=1e-3, batch_size=4, seed=2)
log(f"imf: loss {curve_i[0]:.3f}->{np.mean(curve_i[-50:]):.4f}")

sched = DiffusionSchedule()
ddpm_net = DecoderNet(DecoderConfig(base=12, mults=(1,2,2), res_blocks=1, emb_dim=32, seed=1))
curve_d, stats_d = train_decoder(ddpm_net, train_hr, "ddpm", iters=1600, lr=1e-3, batch_size=4, seed=3, sched=sched)
log(f"ddpm: loss {curve_d[0]:.3f}->{np.mean(curve_d[-50:]):.4f} (curve {[round(float(np.mean(curve_d[i:i+200])),3) for i in range(0,1600,200)]})")

pair_idx = [(9, t) for t in range(0, 30, 2)]
lr16_fields = np.stack([lr16[b, t] for b, t in pair_idx])
lr32_fields = np.stack([lr32[b, t] for b, t in pair_idx])
hr_fields = np.stack([hr[b, t] for b, t in pair_idx])
taus = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.45, 0.6, 0.8]
rows4 = noise_sweep(imf_net, lr16_fields, hr_fields, taus, rng_seed=0, stats=stats)
rows2 = noise_sweep(imf_net, lr32_fields, hr_fields, taus, rng_seed=0, stats=stats)
log("4x: " + str([(t, round(v,4)) for t, v in rows4]))
log("2x: " + str([(t, round(v,4)) for t, v in rows2]))
log(f"best tau 4x={best_tau(rows4)} 2x={best_tau(rows2)}")

horizon = 20
tau_use = best_tau(rows4)
wins = 0; r_m=[]; r_d=[]; r_s=[]
for b in range(10, 14):
    lr_roll = rollout(op, lr16[b, :1], horizon)
    ic_hr = upsample_bilinear(lr16[b,0].astype(np.float64), 64, 64)[None].astype(np.float32)
    sr_roll = rollout(op, ic_hr, horizon)
    truth = hr[b, 1:horizon+1].astype(np.float64)
    meno_f = np.stack([meno_decode(imf_net, lr_roll[t], tau_use, Rng(100+t), stats, (64,64)) for t in range(horizon)])
    ddim_f = np.stack([ddim_enhance(ddpm_net, lr_roll[t], 400, 20, sched, Rng(200+t), stats_d, (64,64)) for t in range(horizon)])
    p_m, p_s, p_d = psdd(meno_f, truth), psdd(sr_roll.astype(np.float64), truth), psdd(ddim_f, truth)
    sw = 10
    rm = relative_l2(meno_f[None,:sw], truth[None,:sw]).aggregate
    rd = relative_l2(ddim_f[None,:sw], truth[None,:sw]).aggregate
    rs = relative_l2(sr_roll[None,:sw].astype(np.float64), truth[None,:sw]).aggregate
    wins += int(p_m < p_s); r_m.append(rm); r_d.append(rd); r_s.append(rs)
    log(f"traj {b}: PSDD m {p_m:.2e} s {p_s:.2e} d {p_d:.2e} | RL2(10) m {rm:.3f} d {rd:.3f} s {rs:.3f}")
log(f"PSDD wins {wins}/4 | RL2 meno {np.mean(r_m):.3f} ddim {np.mean(r_d):.3f} sr {np.mean(r_s):.3f}")
