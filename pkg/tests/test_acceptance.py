"""The acceptance gate: one test per criterion, each printing a PASS line
with its measured values. The heavyweight desk pipeline runs once as a session
fixture; the determinism criterion runs it a second time and byte-compares.
"""

import filecmp
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import central_diff, relerr
from meno import autodiff as ad
from meno.autodiff import Tensor
from meno.decoder import (DecoderConfig, DecoderNet, DiffusionSchedule, cfm_loss,
                          ddim_refine, imf_loss, make_interpolant_batch)
from meno.field import Quantity, Split, TrajectorySet
from meno.metrics import (FreeEnergyConfig, autocorrelation, free_energy,
                          gaussian_kernel1d, psdd, ssim)
from meno.operator import OperatorConfig, OperatorNet
from meno.rng import Rng
from meno.reproduce import run_desk_suite

RNG = np.random.default_rng(2024)


@pytest.fixture(scope="session")
def desk_suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_run1")
    t0 = time.perf_counter()
    result = run_desk_suite(out, seed=0)
    result["_wall_seconds"] = time.perf_counter() - t0
    result["_out"] = Path(out)
    return result


def _f64_net_params(net):
    for p in net.params.values():
        p.data = p.data.astype(np.float64)


def _param_direction_check(loss_fn, params, tol=1e-4, n_dirs=4):
    """Directional FD check of reverse-mode gradients in parameter space."""
    grads = ad.grad(loss_fn(), params)
    rng = np.random.default_rng(7)
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(p.data.shape) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        h = 1e-5
        saved = [p.data.copy() for p in params]
        for p, d in zip(params, dirs):
            p.data = p.data + h * d
        up = float(loss_fn().data)
        for p, s, d in zip(params, saved, dirs):
            p.data = s - h * d
        down = float(loss_fn().data)
        for p, s in zip(params, saved):
            p.data = s
        fd = (up - down) / (2 * h)
        scale = max(abs(analytic), abs(fd), 1e-8)
        assert abs(analytic - fd) / scale < tol


def test_criterion_1_differentiation_oracle():
    """Reverse gradients and JVPs of every repo architecture vs central FD."""
    t0 = time.perf_counter()

    # operator architecture, double precision
    op = OperatorNet(OperatorConfig(n_in=1, hidden=6, layers=2, modes=3, seed=0))
    _f64_net_params(op)
    op.params["proj.w2"].data = RNG.standard_normal((6, 1)) * 0.3
    x_op = RNG.standard_normal((2, 1, 12, 12))
    w_op = RNG.standard_normal((2, 12, 12))

    def op_loss():
        out = op.forward(Tensor(x_op))
        return (out * Tensor(w_op)).sum()

    _param_direction_check(op_loss, op.param_list())

    # decoder architecture, double precision
    dec = DecoderNet(DecoderConfig(base=6, mults=(1, 2), res_blocks=1, emb_dim=8, seed=1))
    _f64_net_params(dec)
    dec.params["head.w"].data = RNG.standard_normal(dec.params["head.w"].data.shape) * 0.2
    z = RNG.standard_normal((2, 1, 12, 12))
    r = np.array([0.2, 0.6])
    t = np.array([0.7, 0.9])
    w_dec = RNG.standard_normal((2, 1, 12, 12))

    def dec_loss():
        out = dec.forward(Tensor(z), Tensor(r), Tensor(t))
        return (out * Tensor(w_dec)).sum()

    _param_direction_check(dec_loss, dec.param_list())

    # JVP vs central differences on both nets
    v = RNG.standard_normal(z.shape)
    out = dec.forward(Tensor(z, tangent=v), Tensor(r, tangent=np.zeros(2)),
                      Tensor(t, tangent=np.ones(2)))
    h = 1e-5
    fd = (dec.forward(Tensor(z + h * v), Tensor(r), Tensor(t + h)).data
          - dec.forward(Tensor(z - h * v), Tensor(r), Tensor(t - h)).data) / (2 * h)
    assert relerr(out.tangent, fd, floor=1e-5) < 1e-4

    vx = RNG.standard_normal(x_op.shape)
    out_op = op.forward(Tensor(x_op, tangent=vx))
    fd_op = (op.forward(Tensor(x_op + h * vx)).data
             - op.forward(Tensor(x_op - h * vx)).data) / (2 * h)
    assert relerr(out_op.tangent, fd_op, floor=1e-5) < 1e-4

    # vJp/Jvp duality on both composites
    for fwd, x, tan_shape in ((lambda q: dec.forward(q, Tensor(r), Tensor(t)), z, z.shape),
                              (lambda q: op.forward(q), x_op, x_op.shape)):
        vv = RNG.standard_normal(tan_shape)
        out = fwd(Tensor(x, tangent=vv))
        g = RNG.standard_normal(out.shape)
        leaf = ad.param(x, dtype=np.float64)
        loss = (fwd(leaf) * Tensor(g)).sum()
        (vjp,) = ad.grad(loss, [leaf])
        lhs = float((g * out.tangent).sum())
        rhs = float((vjp * vv).sum())
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12) < 1e-10

    elapsed = time.perf_counter() - t0
    assert elapsed < 60
    print(f"\n[criterion 1] PASS: FD match < 1e-4, duality < 1e-10, {elapsed:.1f}s")


def test_criterion_2a_meanflow_identity_residual():
    x0 = RNG.standard_normal((8, 8))
    rng = Rng(3)
    b = 8
    t = 0.2 + 0.8 * rng.uniform(b)
    r = rng.uniform(b) * t
    eps = rng.normal((b, 1, 8, 8))
    z = (1 - t)[:, None, None, None] * x0[None, None] + t[:, None, None, None] * eps
    v = eps - x0[None, None]
    zt = Tensor(z, tangent=v)
    tt = Tensor(t, tangent=np.ones(b))
    inv = ad.reciprocal(tt).reshape((b, 1, 1, 1))
    u = (zt - Tensor(x0[None, None])) * inv
    residual = u.data - (v - (t - r)[:, None, None, None] * u.tangent)
    worst = np.abs(residual).max()
    assert worst < 1e-8
    print(f"\n[criterion 2a] PASS: analytic identity residual {worst:.2e} < 1e-8")


def test_criterion_2b_point_mass_one_step_sampling(point_mass_imf):
    net, stats, x0 = point_mass_imf["net"], point_mass_imf["stats"], point_mass_imf["x0"]
    rng = Rng(7)
    errs = []
    for _ in range(5):
        z = rng.normal(x0.shape)
        u = net.predict_velocity(z[None, None].astype(np.float32),
                                 np.zeros(1, np.float32), np.ones(1, np.float32))[0, 0]
        xhat = stats.decode(z - u)
        errs.append(np.linalg.norm(xhat - x0) / np.linalg.norm(x0))
    err = float(np.mean(errs))
    assert err < 0.05
    assert point_mass_imf["seconds"] < 300
    print(f"\n[criterion 2b] PASS: recovery rel L2 {err:.4f} < 0.05 "
          f"(training {point_mass_imf['seconds']:.0f}s < 300s)")


def test_criterion_3_degenerate_interval_identity():
    net = DecoderNet(DecoderConfig(base=8, mults=(1, 2), res_blocks=1, emb_dim=8, seed=5))
    for p in net.params.values():
        p.data = p.data + 0.1 * Rng(11).normal(p.data.shape).astype(np.float32)
    t = RNG.random(8).astype(np.float32)
    batch = make_interpolant_batch(RNG.standard_normal((8, 16, 16)), Rng(4), t=t, r=t)
    a = float(imf_loss(net, batch).data)
    b = float(cfm_loss(net, batch).data)
    assert a == b
    print(f"\n[criterion 3] PASS: imf == cfm bit-for-bit at r=t ({a!r})")


def test_criterion_4_ddim_inversion_oracle():
    sched = DiffusionSchedule()
    x0 = RNG.standard_normal((12, 12))

    def oracle(x, s):
        ab = sched.alpha_bars[s]
        return (x - np.sqrt(ab) * x0) / np.sqrt(1 - ab)

    worst = 0.0
    for s0 in (10, 137, 400, 999, 1000):
        out = ddim_refine(oracle, RNG.standard_normal((12, 12)), s0, 1, sched, Rng(s0))
        worst = max(worst, np.abs(out - x0).max() / np.abs(x0).max())
    assert worst < 1e-10
    print(f"\n[criterion 4] PASS: oracle inversion error {worst:.2e} < 1e-10")


def test_criterion_5_solver_physics(desk_suite):
    t0 = time.perf_counter()
    ch = desk_suite["details"]["ch_physics"]
    kf = desk_suite["details"]["kf_physics"]
    assert ch["mass_conserved"], ch
    assert ch["energy_all_non_increasing"], ch
    assert kf["laminar_ok"], kf
    assert kf["single_mode_decay_ok"], kf
    assert time.perf_counter() - t0 < 600
    print(f"\n[criterion 5] PASS: mass drift {ch['mass_drift_1000_steps']:.2e} < 1e-10, "
          f"energy decay {ch['energy_runs_monotone']}/{ch['energy_runs_total']} runs, "
          f"laminar {kf['laminar_error']:.2e} < 1e-4, "
          f"decay {kf['single_mode_decay_error']:.2e} < 1e-8")


def test_criterion_6_metrics_oracles():
    x = RNG.standard_normal((16, 16))
    assert abs(ssim(x, x) - 1.0) < 1e-9

    # separable vs brute-force direct 2D windows
    from test_metrics import _ssim_brute_force
    from meno.metrics import SsimConfig
    cfg = SsimConfig(window=7, sigma=1.5)
    y = x + 0.3 * RNG.standard_normal((16, 16))
    sep_err = abs(ssim(x, y, cfg) - _ssim_brute_force(x, y, cfg))
    assert sep_err < 1e-8

    stack = RNG.standard_normal((3, 16, 16))
    assert psdd(stack, stack) == 0.0
    assert psdd(stack, stack + 4.2) < 1e-12

    arr = RNG.standard_normal((1, 48, 4, 4))
    _, mean_fft, _ = autocorrelation(arr, max_lag=47)
    from test_metrics import _acf_direct
    direct = np.mean([_acf_direct(arr[0, :, i, j], 47, True)
                      for i in range(4) for j in range(4)], axis=0)
    acf_err = np.abs(mean_fft - direct).max()
    assert acf_err < 1e-10

    n = 32
    ts = TrajectorySet(np.zeros((1, 2, n, n), dtype=np.float32), 0.1, 1.0,
                       Quantity.ORDER_PARAMETER, Split.TEST)
    fe = free_energy(ts, FreeEnergyConfig.from_lambda(0.01, 0.01, 1 / n))
    assert np.allclose(fe.per_frame, 25.0, rtol=1e-12)
    print(f"\n[criterion 6] PASS: ssim sep err {sep_err:.1e}, acf err {acf_err:.1e}, "
          f"fe(0) = {fe.per_frame[0, 0]} = 25 exactly")


def test_criterion_7_directional_fidelity(desk_suite):
    exp = desk_suite["details"]["experiment"]
    win = exp["psdd_win_fraction"]
    assert win >= 0.7, f"MENO PSDD beat NO-SR on only {win:.0%} of test trajectories"
    assert exp["rl2_meno"] < exp["rl2_ddim"], exp
    assert desk_suite["_wall_seconds"] < 1800, "pipeline exceeded 30 min"
    print(f"\n[criterion 7] PASS: PSDD win fraction {win:.2f} >= 0.7, "
          f"RL2 meno {exp['rl2_meno']:.3f} < ddim {exp['rl2_ddim']:.3f}, "
          f"wall {desk_suite['_wall_seconds']:.0f}s < 1800s")


def test_criterion_8_speed_analogue(desk_suite):
    timing = json.loads((desk_suite["_out"] / "timing.json").read_text())
    by_name = {r["pipeline"]: r for r in timing["records"]}
    assert by_name["meno"]["net_evals_per_frame"] == 1
    assert by_name["ddim"]["net_evals_per_frame"] == 20
    ratio = timing["ddim_over_meno_ratio"]
    assert ratio >= 5.0, f"ddim/meno wall ratio {ratio:.1f} below 5"
    print(f"\n[criterion 8] PASS: eval counts 1 vs 20, wall ratio {ratio:.1f} >= 5")


def test_criterion_9_tau_trend(desk_suite):
    sweep = desk_suite["details"]["sweep"]
    assert sweep["best_tau_4x"] > sweep["best_tau_2x"], sweep
    print(f"\n[criterion 9] PASS: best tau 4x {sweep['best_tau_4x']} > "
          f"2x {sweep['best_tau_2x']}")


def test_criterion_10_reproduce_determinism(desk_suite, tmp_path_factory):
    out2 = tmp_path_factory.mktemp("desk_run2")
    run_desk_suite(out2, seed=0)
    report1 = desk_suite["_out"] / "report"
    report2 = Path(out2) / "report"

    files1 = sorted(p.relative_to(report1) for p in report1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(report2) for p in report2.rglob("*") if p.is_file())
    assert files1 == files2
    mismatches = [str(rel) for rel in files1
                  if (report1 / rel).read_bytes() != (report2 / rel).read_bytes()]
    assert not mismatches, f"non-identical report files: {mismatches}"
    print(f"\n[criterion 10] PASS: {len(files1)} report files byte-identical across runs")


def test_suite_checks_all_green(desk_suite):
    failed = [k for k, v in desk_suite["checks"].items() if not v]
    assert not failed, f"suite checks failed: {failed}"
    print(f"\n[suite] PASS: {len(desk_suite['checks'])} desk-suite checks green")
