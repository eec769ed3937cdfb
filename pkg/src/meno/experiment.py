"""End-to-end experiment orchestration: the three-pipeline comparison
(direct super-resolution rollout, one-step refinement, multi-step diffusion
refinement), inference timing, seed-repeat and long-horizon drift studies.

Reports are byte-reproducible given (config, seed): wall-clock timing is never
written into the deterministic report files.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .decoder import (DecoderNet, DiffusionSchedule, NormStats, ddim_enhance,
                      load_decoder, meno_decode)
from .dataset_io import read_dataset
from .field import Quantity, TrajectorySet, downsample_strided, upsample_bilinear
from .metrics import (FreeEnergyConfig, MetricReport, autocorrelation,
                      energy_spectrum, free_energy, psdd, relative_l2, ssim_report)
from .operator import OperatorNet, load_operator, rollout
from .provenance import provenance_base
from .rng import Rng


class ProvenanceMismatchError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    hr_dataset: str
    operator_ckpt: str
    imf_ckpt: str
    ddpm_ckpt: str
    lr_size: int
    horizon: int
    short_window: int
    tau: float
    ddim_steps: int = 20
    ddim_noise_level: int = 400
    metrics: tuple = ("rl2", "ssim", "psdd", "spec", "acf")
    seed: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0,1], got {self.tau}")
        if self.short_window > self.horizon:
            raise ValueError("short_window cannot exceed horizon")


@dataclass
class TimingRecord:
    pipeline: str
    mean_seconds: float
    std_seconds: float
    net_evals_per_frame: int
    hardware_note: str


PIPELINES = ("nosr", "meno", "ddim")


def _check_provenance(meta_prov: str, data_prov: str, what: str) -> None:
    if provenance_base(meta_prov) != provenance_base(data_prov):
        raise ProvenanceMismatchError(
            f"{what}: checkpoint trained on {meta_prov!r} but dataset is {data_prov!r}")


def _load_bundle(cfg: ExperimentConfig):
    hr = read_dataset(cfg.hr_dataset)
    op, op_meta = load_operator(cfg.operator_ckpt)
    imf_net, imf_stats, imf_meta = load_decoder(cfg.imf_ckpt)
    ddpm_net, ddpm_stats, ddpm_meta = load_decoder(cfg.ddpm_ckpt)
    _check_provenance(op_meta["data_provenance"], hr.provenance, "operator")
    _check_provenance(imf_meta["data_provenance"], hr.provenance, "imf decoder")
    _check_provenance(ddpm_meta["data_provenance"], hr.provenance, "ddpm decoder")
    sched = DiffusionSchedule(**ddpm_meta.get("schedule", {}))
    if hr.shape[1] < cfg.horizon + 1:
        raise ValueError(f"horizon {cfg.horizon} needs {cfg.horizon + 1} frames, "
                         f"dataset has {hr.shape[1]}")
    hshape = hr.shape[-2:]
    if hshape[0] % cfg.lr_size or hshape[1] % cfg.lr_size:
        raise ValueError(f"lr size {cfg.lr_size} does not divide HR grid {hshape}")
    return hr, op, (imf_net, imf_stats), (ddpm_net, ddpm_stats, sched)


def base_rollouts(cfg: ExperimentConfig, hr: TrajectorySet, op: OperatorNet,
                  b: int) -> dict[str, np.ndarray]:
    """Seed-independent stage: low-res rollout and the direct SR rollout."""
    arr = hr.trajectories
    hshape = arr.shape[-2:]
    ic_lr = downsample_strided(arr[b, :op.cfg.n_in], cfg.lr_size, cfg.lr_size)
    lr_roll = rollout(op, ic_lr, cfg.horizon)
    ic_hr = np.stack([upsample_bilinear(f.astype(np.float64), *hshape)
                      for f in ic_lr]).astype(np.float32)
    sr_roll = rollout(op, ic_hr, cfg.horizon)
    return {"lr": lr_roll, "nosr": sr_roll.astype(np.float64)}


def decode_stage(cfg: ExperimentConfig, lr_roll: np.ndarray, hshape, imf, ddpm,
                 b: int, seed: int, with_ddim: bool = True) -> dict[str, np.ndarray]:
    """Per-seed generative refinement of one low-resolution rollout."""
    imf_net, imf_stats = imf
    out = {}
    out["meno"] = np.stack([
        meno_decode(imf_net, lr_roll[t], cfg.tau,
                    Rng(seed + b * 100_000 + t), imf_stats, hshape)
        for t in range(lr_roll.shape[0])])
    if with_ddim:
        ddpm_net, ddpm_stats, sched = ddpm
        out["ddim"] = np.stack([
            ddim_enhance(ddpm_net, lr_roll[t], cfg.ddim_noise_level, cfg.ddim_steps,
                         sched, Rng(seed + 50_000_000 + b * 100_000 + t),
                         ddpm_stats, hshape)
            for t in range(lr_roll.shape[0])])
    return out


def _pipeline_rollouts(cfg: ExperimentConfig, hr: TrajectorySet, op: OperatorNet,
                       imf, ddpm, b: int) -> dict[str, np.ndarray]:
    """The three high-resolution predictions for test trajectory b."""
    hshape = hr.trajectories.shape[-2:]
    outs = base_rollouts(cfg, hr, op, b)
    outs.update(decode_stage(cfg, outs["lr"], hshape, imf, ddpm, b, cfg.seed))
    return outs


def _format_float(x) -> str:
    return repr(float(x))


def _write_metric_rows(path: Path, rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        fh.write("pipeline,metric,frame,mean,sem\n")
        for pipeline, metric, frame, mean, sem in rows:
            fh.write(f"{pipeline},{metric},{frame},{_format_float(mean)},{_format_float(sem)}\n")


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Evaluate all three pipelines on every test trajectory; write CSV + JSON."""
    hr, op, imf, ddpm = _load_bundle(cfg)
    arr = hr.trajectories.astype(np.float64)
    n_traj = arr.shape[0]
    truth_full = arr[:, 1:cfg.horizon + 1]
    preds = {name: [] for name in PIPELINES}
    for b in range(n_traj):
        outs = _pipeline_rollouts(cfg, hr, op, imf, ddpm, b)
        for name in PIPELINES:
            preds[name].append(outs[name])
    preds = {name: np.stack(v) for name, v in preds.items()}

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    summary: dict = {"config": asdict(cfg), "n_trajectories": int(n_traj),
                     "hr_provenance": hr.provenance, "pipelines": {}}
    sw = cfg.short_window
    for name in PIPELINES:
        entry: dict = {}
        if "rl2" in cfg.metrics:
            rep = relative_l2(preds[name][:, :sw], truth_full[:, :sw])
            entry["rl2_mean"] = rep.aggregate
            entry["rl2_frame_mean"] = rep.frame_mean.tolist()
            rows += [(name, "rl2", f, rep.frame_mean[f], rep.frame_sem[f]) for f in range(sw)]
        if "ssim" in cfg.metrics:
            rep = ssim_report(truth_full[:, :sw], preds[name][:, :sw])
            entry["ssim_mean"] = rep.aggregate
            rows += [(name, "ssim", f, rep.frame_mean[f], rep.frame_sem[f]) for f in range(sw)]
        if "psdd" in cfg.metrics:
            per_traj = [psdd(preds[name][b], truth_full[b]) for b in range(n_traj)]
            entry["psdd_per_trajectory"] = per_traj
            entry["psdd_mean"] = float(np.mean(per_traj))
            rows.append((name, "psdd", -1, float(np.mean(per_traj)),
                         float(np.std(per_traj, ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0))
        if "acf" in cfg.metrics:
            lags, mean, sem = autocorrelation(preds[name], max_lag=cfg.horizon - 1)
            entry["acf"] = {"lags": lags.tolist(), "mean": mean.tolist(), "sem": sem.tolist()}
        if "fe" in cfg.metrics and hr.quantity is Quantity.ORDER_PARAMETER:
            fe_cfg = FreeEnergyConfig.from_lambda(0.01 * 0.02, 0.02,
                                                  hr.domain_size / arr.shape[-1])
            rep = free_energy(TrajectorySet(preds[name].astype(np.float32), hr.dt,
                                            hr.domain_size, hr.quantity, hr.split),
                              fe_cfg)
            entry["free_energy_mean"] = rep.frame_mean.tolist()
        summary["pipelines"][name] = entry

    if "psdd" in cfg.metrics:
        meno_p = np.array(summary["pipelines"]["meno"]["psdd_per_trajectory"])
        nosr_p = np.array(summary["pipelines"]["nosr"]["psdd_per_trajectory"])
        summary["meno_psdd_win_fraction"] = float(np.mean(meno_p < nosr_p))
    # advantage rows, (baseline - ours)/baseline for down metrics, flipped for up
    adv = {}
    if "rl2" in cfg.metrics:
        base = summary["pipelines"]["nosr"]["rl2_mean"]
        adv["rl2_pct"] = 100.0 * (base - summary["pipelines"]["meno"]["rl2_mean"]) / base
    if "ssim" in cfg.metrics:
        base = summary["pipelines"]["nosr"]["ssim_mean"]
        adv["ssim_pct"] = 100.0 * (summary["pipelines"]["meno"]["ssim_mean"] - base) / base
    if "psdd" in cfg.metrics:
        base = summary["pipelines"]["nosr"]["psdd_mean"]
        adv["psdd_pct"] = 100.0 * (base - summary["pipelines"]["meno"]["psdd_mean"]) / base
    summary["advantage_vs_nosr"] = adv

    _write_metric_rows(out_dir / "metrics.csv", rows)
    if "spec" in cfg.metrics:
        with open(out_dir / "spectra.csv", "w") as fh:
            fh.write("pipeline,k,energy\n")
            for name in list(PIPELINES) + ["truth"]:
                fld = truth_full[0, -1] if name == "truth" else preds[name][0, -1]
                ks, es = energy_spectrum(fld)
                for k, e in zip(ks, es):
                    fh.write(f"{name},{k},{_format_float(e)}\n")
    if "acf" in cfg.metrics:
        with open(out_dir / "acf.csv", "w") as fh:
            fh.write("pipeline,lag,mean,sem\n")
            for name in PIPELINES:
                acf = summary["pipelines"][name]["acf"]
                for lag, m, s in zip(acf["lags"], acf["mean"], acf["sem"]):
                    fh.write(f"{name},{lag},{_format_float(m)},{_format_float(s)}\n")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


# ---------------------------------------------------------------------------
# inference timing
# ---------------------------------------------------------------------------

def _single_thread():
    try:
        import numba
        prev = numba.get_num_threads()
        numba.set_num_threads(1)
        return prev
    except ImportError:
        return None


def _restore_threads(prev):
    if prev is not None:
        import numba
        numba.set_num_threads(prev)


def benchmark_inference(cfg: ExperimentConfig, timed_frames: int = 50,
                        warmup: int = 5) -> list[TimingRecord]:
    """Per-frame wall time of each full pipeline (operator step + upsample +
    refinement). Decode runs single-threaded so frame times are comparable."""
    if timed_frames < 50:
        raise ValueError("need at least 50 timed frames")
    hr, op, (imf_net, imf_stats), (ddpm_net, ddpm_stats, sched) = _load_bundle(cfg)
    arr = hr.trajectories
    hshape = arr.shape[-2:]
    window = downsample_strided(arr[0, :op.cfg.n_in], cfg.lr_size, cfg.lr_size)
    note = "single-threaded decode, CPU"
    records = []
    prev = _single_thread()
    try:
        def time_pipeline(name, frame_fn, evals):
            nonlocal window
            w = window.copy()
            times = []
            for i in range(warmup + timed_frames):
                t0 = time.perf_counter()
                pred = op.predict(w[None])[0]
                w = np.concatenate([w[1:], pred[None]], axis=0)
                frame_fn(pred, i)
                if i >= warmup:
                    times.append(time.perf_counter() - t0)
            times = np.array(times)
            records.append(TimingRecord(name, float(times.mean()), float(times.std()),
                                        evals, note))

        time_pipeline(
            "meno",
            lambda pred, i: meno_decode(imf_net, pred, cfg.tau, Rng(i), imf_stats, hshape),
            evals=1)
        time_pipeline(
            "ddim",
            lambda pred, i: ddim_enhance(ddpm_net, pred, cfg.ddim_noise_level,
                                         cfg.ddim_steps, sched, Rng(i), ddpm_stats, hshape),
            evals=cfg.ddim_steps)
    finally:
        _restore_threads(prev)
    return records


# ---------------------------------------------------------------------------
# seed-repeat study
# ---------------------------------------------------------------------------

def seed_study(cfg: ExperimentConfig, n_seeds: int, with_ddim: bool = False) -> dict:
    """Repeat the decode stage under different seeds; report metric spreads.

    The operator rollouts are seed-independent and computed once; the direct
    SR pipeline has no randomness, so its spread is structurally zero (checked).
    """
    if n_seeds < 2:
        raise ValueError("need at least 2 seeds")
    hr, op, imf, ddpm = _load_bundle(cfg)
    arr = hr.trajectories.astype(np.float64)
    hshape = arr.shape[-2:]
    truth = arr[:, 1:cfg.horizon + 1]
    n_traj = arr.shape[0]
    bases = [base_rollouts(cfg, hr, op, b) for b in range(n_traj)]
    nosr = np.stack([base["nosr"] for base in bases])
    sw = cfg.short_window
    nosr_rl2 = relative_l2(nosr[:, :sw], truth[:, :sw]).aggregate

    per_seed = {"meno_rl2": [], "meno_psdd": []}
    if with_ddim:
        per_seed["ddim_rl2"] = []
    for s in range(n_seeds):
        decs = [decode_stage(cfg, bases[b]["lr"], hshape, imf, ddpm, b,
                             cfg.seed + s, with_ddim=with_ddim)
                for b in range(n_traj)]
        meno = np.stack([d["meno"] for d in decs])
        per_seed["meno_rl2"].append(relative_l2(meno[:, :sw], truth[:, :sw]).aggregate)
        per_seed["meno_psdd"].append(float(np.mean([psdd(meno[b], truth[b])
                                                    for b in range(n_traj)])))
        if with_ddim:
            ddim = np.stack([d["ddim"] for d in decs])
            per_seed["ddim_rl2"].append(relative_l2(ddim[:, :sw], truth[:, :sw]).aggregate)
    out = {"nosr_rl2": {"mean": nosr_rl2, "std": 0.0, "values": [nosr_rl2] * n_seeds}}
    for key, vals in per_seed.items():
        vals = np.array(vals)
        out[key] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)),
                    "values": vals.tolist()}
    return out


# ---------------------------------------------------------------------------
# long-horizon drift
# ---------------------------------------------------------------------------

def drift_study(cfg: ExperimentConfig, out_path=None) -> dict:
    """Per-frame relative L2 of all three pipelines over the long horizon."""
    if cfg.horizon < 3 * cfg.short_window:
        raise ValueError("drift horizon should be at least 3x the short window")
    hr, op, imf, ddpm = _load_bundle(cfg)
    arr = hr.trajectories.astype(np.float64)
    truth = arr[:, 1:cfg.horizon + 1]
    preds = {name: [] for name in PIPELINES}
    for b in range(arr.shape[0]):
        outs = _pipeline_rollouts(cfg, hr, op, imf, ddpm, b)
        for name in PIPELINES:
            preds[name].append(outs[name])
    curves = {}
    for name in PIPELINES:
        rep = relative_l2(np.stack(preds[name]), truth)
        curves[name] = {"mean": rep.frame_mean.tolist(), "sem": rep.frame_sem.tolist()}
    if out_path is not None:
        with open(out_path, "w") as fh:
            fh.write("pipeline,frame,rl2_mean,rl2_sem\n")
            for name in PIPELINES:
                for f, (m, s) in enumerate(zip(curves[name]["mean"], curves[name]["sem"])):
                    fh.write(f"{name},{f},{_format_float(m)},{_format_float(s)}\n")
    return curves
