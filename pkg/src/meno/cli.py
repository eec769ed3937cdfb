"""Command-line entry point: dataset generation, training, rollout, decoding,
evaluation, sweeps, benchmarks and the desk reproduction suite."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    try:
        import numba
        numba.set_num_threads(n)
    except ImportError:
        pass


def _format_float(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    from .dataset_io import write_dataset
    from .field import Split
    from .simulate import (CahnHilliardConfig, KolmogorovConfig,
                           generate_ch_dataset, generate_kf_dataset)

    cfg_dict = _load_toml(args.config) if args.config else {}
    runs = cfg_dict.pop("runs", 4)
    split = Split(cfg_dict.pop("split", "train"))
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    if args.system == "ch":
        ts = generate_ch_dataset(CahnHilliardConfig(**cfg_dict), runs, split)
    else:
        ts = generate_kf_dataset(KolmogorovConfig(**cfg_dict), runs, split)
    write_dataset(ts, args.out)
    print(f"wrote {args.out}: shape {ts.shape}, provenance {ts.provenance}")
    return 0


def cmd_train_op(args) -> int:
    from .dataset_io import read_dataset
    from .operator import OperatorConfig, OperatorNet, save_operator, train_operator

    cfg_dict = _load_toml(args.config) if args.config else {}
    train_kw = {k: cfg_dict.pop(k) for k in ("epochs", "lr", "batch_size") if k in cfg_dict}
    ds = read_dataset(args.data)
    net = OperatorNet(OperatorConfig(**cfg_dict))
    curve = train_operator(net, ds, seed=args.seed or 0,
                           **{"epochs": 40, "lr": 1e-3, **train_kw})
    save_operator(args.out, net, ds.provenance, extra={"final_loss": curve[-1]})
    print(f"wrote {args.out}: loss {curve[0]:.5f} -> {curve[-1]:.6f}")
    return 0


def cmd_train_dec(args) -> int:
    from .dataset_io import read_dataset
    from .decoder import (DecoderConfig, DecoderNet, DiffusionSchedule,
                          save_decoder, train_decoder)

    cfg_dict = _load_toml(args.config) if args.config else {}
    train_kw = {k: cfg_dict.pop(k) for k in ("iters", "lr", "batch_size") if k in cfg_dict}
    if "mults" in cfg_dict:
        cfg_dict["mults"] = tuple(cfg_dict["mults"])
    ds = read_dataset(args.data)
    net = DecoderNet(DecoderConfig(**cfg_dict))
    sched = DiffusionSchedule() if args.objective == "ddpm" else None
    curve, stats = train_decoder(net, ds, args.objective, seed=args.seed or 0,
                                 sched=sched, **{"iters": 900, "lr": 1e-3, **train_kw})
    save_decoder(args.out, net, args.objective, stats, ds.provenance, sched=sched)
    print(f"wrote {args.out}: loss {curve[0]:.4f} -> {curve[-1]:.5f}")
    return 0


def cmd_rollout(args) -> int:
    from .dataset_io import read_dataset, write_dataset
    from .field import upsample_bilinear
    from .operator import load_operator, rollout

    net, _ = load_operator(args.ckpt)
    ds = read_dataset(args.data)
    arr = ds.trajectories
    n_in = net.cfg.n_in
    windows = arr[:, :n_in]
    if args.sr:
        h, w = (int(v) for v in args.sr.split("x"))
        windows = np.stack([
            np.stack([upsample_bilinear(f.astype(np.float64), h, w) for f in win])
            for win in windows]).astype(np.float32)
    preds = np.stack([rollout(net, win, args.horizon) for win in windows])
    out = ds.with_data(preds, provenance=ds.provenance + "|rollout")
    write_dataset(out, args.out)
    print(f"wrote {args.out}: shape {out.shape}")
    return 0


def cmd_decode(args) -> int:
    from .dataset_io import read_dataset, write_dataset
    from .decoder import DiffusionSchedule, ddim_enhance, load_decoder, meno_decode
    from .rng import Rng

    net, stats, meta = load_decoder(args.ckpt)
    ds = read_dataset(args.infile)
    arr = ds.trajectories
    hr_shape = (args.hr, args.hr)
    seed = args.seed or 0
    frames = np.empty(arr.shape[:2] + hr_shape, dtype=np.float32)
    sched = DiffusionSchedule(**meta.get("schedule", {}))
    for b in range(arr.shape[0]):
        for t in range(arr.shape[1]):
            rng = Rng(seed + b * 100_000 + t)
            if args.mode == "meno":
                frames[b, t] = meno_decode(net, arr[b, t], args.tau, rng, stats, hr_shape)
            else:
                frames[b, t] = ddim_enhance(net, arr[b, t], args.noise_level, args.steps,
                                            sched, rng, stats, hr_shape)
    out = ds.with_data(frames, provenance=ds.provenance + f"|decode-{args.mode}")
    write_dataset(out, args.out)
    print(f"wrote {args.out}: shape {out.shape}, net evals {net.eval_count}")
    return 0


def cmd_eval(args) -> int:
    from .dataset_io import read_dataset
    from .metrics import (FreeEnergyConfig, autocorrelation, energy_spectrum,
                          free_energy, psdd, relative_l2, ssim_report)

    pred = read_dataset(args.pred)
    truth = read_dataset(args.truth)
    metrics = args.metrics.split(",")
    p = pred.trajectories.astype(np.float64)
    t = truth.trajectories.astype(np.float64)
    rows = []
    extra_rows = []
    for metric in metrics:
        if metric == "rl2":
            rep = relative_l2(p, t)
        elif metric == "ssim":
            rep = ssim_report(t, p)
        elif metric == "psdd":
            vals = [psdd(p[b], t[b]) for b in range(p.shape[0])]
            sem = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            rows.append(("psdd", -1, float(np.mean(vals)), sem))
            continue
        elif metric == "spec":
            ks, es = energy_spectrum(p[0, -1])
            extra_rows += [("spec", int(k), float(e), 0.0) for k, e in zip(ks, es)]
            continue
        elif metric == "acf":
            lags, mean, sem = autocorrelation(p, max_lag=p.shape[1] - 1)
            extra_rows += [("acf", int(l), float(m), float(s))
                           for l, m, s in zip(lags, mean, sem)]
            continue
        elif metric == "fe":
            fe_cfg = FreeEnergyConfig.from_lambda(
                args.fe_lambda, args.fe_eps, pred.domain_size / p.shape[-1])
            rep = free_energy(pred, fe_cfg)
        else:
            raise SystemExit(f"unknown metric {metric!r}")
        rows += [(metric, f, rep.frame_mean[f], rep.frame_sem[f])
                 for f in range(rep.frame_mean.shape[0])]
    with open(args.out, "w") as fh:
        fh.write("metric,frame,mean,sem\n")
        for metric, frame, mean, sem in rows + extra_rows:
            fh.write(f"{metric},{frame},{_format_float(mean)},{_format_float(sem)}\n")
    print(f"wrote {args.out}")
    return 0


def cmd_sweep_tau(args) -> int:
    from .dataset_io import read_dataset
    from .decoder import best_tau, load_decoder, noise_sweep

    net, stats, _ = load_decoder(args.ckpt)
    lr_ds = read_dataset(args.pairs[0])
    hr_ds = read_dataset(args.pairs[1])
    a, b, n = args.grid.split(":")
    taus = np.linspace(float(a), float(b), int(n))
    lr_fields = lr_ds.trajectories.reshape(-1, *lr_ds.shape[-2:])
    hr_fields = hr_ds.trajectories.reshape(-1, *hr_ds.shape[-2:])
    rows = noise_sweep(net, lr_fields, hr_fields, taus, rng_seed=args.seed or 0,
                       stats=stats)
    with open(args.out, "w") as fh:
        fh.write("tau,mean_rl2\n")
        for tau, val in rows:
            fh.write(f"{tau},{_format_float(val)}\n")
    print(f"wrote {args.out}; best tau {best_tau(rows)}")
    return 0


def _experiment_config(args):
    from .experiment import ExperimentConfig
    cfg = json.loads(Path(args.config).read_text()) if args.config.endswith(".json") \
        else _load_toml(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["out_dir"] = args.out
    cfg["metrics"] = tuple(cfg.get("metrics", ("rl2", "ssim", "psdd", "spec", "acf")))
    return ExperimentConfig(**cfg)


def cmd_run(args) -> int:
    from .experiment import run_experiment
    summary = run_experiment(_experiment_config(args))
    print(json.dumps({k: v for k, v in summary.items() if k != "pipelines"},
                     indent=1, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    from .experiment import benchmark_inference
    records = benchmark_inference(_experiment_config(args),
                                  timed_frames=args.frames, warmup=args.warmup)
    for r in records:
        print(f"{r.pipeline}: {r.mean_seconds*1e3:.2f} +- {r.std_seconds*1e3:.2f} ms/frame, "
              f"{r.net_evals_per_frame} net evals/frame ({r.hardware_note})")
    ratio = records[1].mean_seconds / records[0].mean_seconds
    print(f"ddim/meno wall-time ratio: {ratio:.1f}")
    return 0


def cmd_seeds(args) -> int:
    from .experiment import seed_study
    out = seed_study(_experiment_config(args), n_seeds=args.n_seeds)
    print(json.dumps(out, indent=1, sort_keys=True))
    return 0


def cmd_drift(args) -> int:
    from .experiment import drift_study
    cfg = _experiment_config(args)
    curves = drift_study(cfg, out_path=args.out_csv)
    print(json.dumps({k: v["mean"][-1] for k, v in curves.items()}, indent=1))
    return 0


def cmd_reproduce(args) -> int:
    from .reproduce import run_desk_suite
    if args.suite != "desk":
        raise SystemExit(f"unknown suite {args.suite!r}")
    result = run_desk_suite(args.out or "desk_out", seed=args.seed or 0)
    ok = result["all_passed"] and result["speed_ratio_at_least_5"]
    return 0 if ok else 1


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meno",
                                     description="neural-operator rollouts with "
                                                 "one-step generative refinement")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    p = sub.add_parser("gen", help="generate a solver dataset")
    p.add_argument("system", choices=("ch", "kf"))
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train-op", help="train the spectral operator")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_op)

    p = sub.add_parser("train-dec", help="train a refinement decoder")
    p.add_argument("--data", required=True)
    p.add_argument("--objective", choices=("imf", "ddpm"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_dec)

    p = sub.add_parser("rollout", help="autoregressive operator rollout")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--sr", default=None, help="evaluate on a finer HxW grid")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rollout)

    p = sub.add_parser("decode", help="refine a low-resolution dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--mode", choices=("meno", "ddim"), required=True)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--noise-level", type=int, default=400)
    p.add_argument("--hr", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="metric suite on prediction vs truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--metrics", default="rl2,ssim,psdd")
    p.add_argument("--fe-lambda", type=float, default=2e-4)
    p.add_argument("--fe-eps", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep-tau", help="noise-strength sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", nargs=2, required=True, metavar=("LR", "HR"))
    p.add_argument("--grid", required=True, help="a:b:n")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep_tau)

    p = sub.add_parser("run", help="three-pipeline comparison experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("bench", help="per-frame inference timing")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("seeds", help="decode-seed repeat study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--n-seeds", type=int, default=20)
    p.set_defaults(fn=cmd_seeds)

    p = sub.add_parser("drift", help="long-horizon error growth")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--out-csv", default="drift.csv")
    p.set_defaults(fn=cmd_drift)

    p = sub.add_parser("reproduce", help="run the full desk suite")
    p.add_argument("--suite", default="desk")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
