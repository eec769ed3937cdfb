"""Cache dataset + operator + rollouts once, for fast decoder iteration."""
import numpy as np, time
from meno.field import Split, TrajectorySet, downsample_strided, upsample_bilinear
from meno.metrics import relative_l2
from meno.operator import OperatorConfig, OperatorNet, rollout, train_operator, save_operator
from meno.simulate import KolmogorovConfig, generate_kf_dataset

t0 = time.time()
cfg = KolmogorovConfig(grid_n=64, viscosity=0.01, forcing_n=4, dt_solver=2e-3,
                       frames=30, frame_interval=50, spinup_steps=7500, seed=0)
full = generate_kf_dataset(cfg, runs=24)   # 18 train / 2 val / 4 test
hr = full.trajectories
print(f"gen {time.time()-t0:.0f}s", flush=True)
lr16 = downsample_strided(hr, 16, 16)
op = OperatorNet(OperatorConfig(n_in=1, hidden=32, layers=4, modes=8, seed=0))
train_ts = TrajectorySet(lr16[:18], full.dt, full.domain_size, full.quantity, Split.TRAIN, "p")
curve = train_operator(op, train_ts, epochs=30, lr=2e-3, batch_size=32, seed=1)
val_lr = lr16[18:20]
pred1 = np.stack([op.predict(val_lr[:, t:t+1])[:] for t in range(29)], 1)
print(f"op {time.time()-t0:.0f}s loss {curve[0]:.3f}->{np.mean(curve[-10:]):.4f}; val 1-step {relative_l2(pred1, val_lr[:,1:]).aggregate:.3f} vs persist {relative_l2(val_lr[:,:-1], val_lr[:,1:]).aggregate:.3f}", flush=True)

horizon = 20
lr_rolls, sr_rolls = [], []
for b in range(20, 24):
    lr_rolls.append(rollout(op, lr16[b, :1], horizon))
    ic_hr = upsample_bilinear(lr16[b, 0].astype(np.float64), 64, 64)[None].astype(np.float32)
    sr_rolls.append(rollout(op, ic_hr, horizon))
np.savez_compressed("probe_cache.npz", hr=hr, lr16=lr16,
                    lr32=downsample_strided(hr, 32, 32),
                    lr_rolls=np.stack(lr_rolls), sr_rolls=np.stack(sr_rolls))
save_operator("probe_op.ck", op, "p")
print(f"cached {time.time()-t0:.0f}s", flush=True)
