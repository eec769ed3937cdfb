import numpy as np
import pytest

from meno import autodiff as ad
from meno.autodiff import Tensor
from meno.field import (
    Quantity,
    Split,
    TrajectorySet,
    downsample_strided,
    upsample_fourier,
)
from meno.metrics import relative_l2
from meno.operator import (
    OperatorConfig,
    OperatorNet,
    load_operator,
    rollout,
    rollout_set,
    rollout_sr,
    save_operator,
    sliding_windows,
    spectral_layer,
    train_operator,
)
from meno.rng import Rng
from meno.simulate import CahnHilliardConfig, generate_ch_dataset

RNG = np.random.default_rng(31)


def _identity_weights(c, m):
    wr = np.zeros((c, c, 2 * m, 2 * m))
    for i in range(c):
        wr[i, i] = 1.0
    return wr, np.zeros_like(wr)


class TestSpectralLayer:
    def test_identity_multiplier_full_modes(self):
        c, n = 3, 16
        wr, wi = _identity_weights(c, n // 2)
        v = RNG.standard_normal((2, c, n, n))
        out = spectral_layer(v, wr, wi, modes=n // 2)
        assert np.abs(out.data - v).max() < 1e-12

    def test_pointwise_bypass_identity(self):
        c, n = 3, 16
        wr = np.zeros((c, c, 8, 8))
        v = RNG.standard_normal((2, c, n, n))
        out = spectral_layer(v, wr, np.zeros_like(wr), modes=4,
                             pw=np.eye(c), pb=np.zeros(c))
        assert np.abs(out.data - v).max() < 1e-12

    def test_mode_outside_retained_set_is_killed(self):
        c, n, m = 2, 16, 3
        wr, wi = _identity_weights(c, m)
        xs = np.arange(n) / n
        v = np.tile(np.cos(2 * np.pi * 6 * xs), (2, c, n, 1))  # |kx| = 6 > m
        out = spectral_layer(v, wr, wi, modes=m)
        assert np.abs(out.data).max() < 1e-12

    def test_output_spectrum_zero_outside_retained_modes(self):
        c, n, m = 2, 16, 3
        wr = RNG.standard_normal((c, c, 2 * m, 2 * m))
        wi = RNG.standard_normal((c, c, 2 * m, 2 * m))
        v = RNG.standard_normal((1, c, n, n))
        out = spectral_layer(v, wr, wi, modes=m).data
        spec = np.fft.fft2(out, axes=(-2, -1))
        freqs = np.fft.fftfreq(n) * n
        kx, ky = np.meshgrid(freqs, freqs)
        outside = (np.abs(kx) > m) | (np.abs(ky) > m)
        assert np.abs(spec[..., outside]).max() < 1e-10 * np.abs(spec).max()

    def test_translation_equivariance(self):
        c, n, m = 2, 16, 4
        wr = RNG.standard_normal((c, c, 2 * m, 2 * m))
        wi = RNG.standard_normal((c, c, 2 * m, 2 * m))
        v = RNG.standard_normal((1, c, n, n))
        out = spectral_layer(v, wr, wi, modes=m).data
        shifted_in = np.roll(v, (3, 5), axis=(-2, -1))
        out_shifted = spectral_layer(shifted_in, wr, wi, modes=m).data
        assert np.abs(np.roll(out, (3, 5), axis=(-2, -1)) - out_shifted).max() < 1e-10

    def test_modes_exceeding_nyquist_rejected(self):
        wr, wi = _identity_weights(2, 5)
        with pytest.raises(ValueError, match="Nyquist"):
            spectral_layer(RNG.standard_normal((1, 2, 8, 8)), wr, wi, modes=5)


class TestOperatorForward:
    def test_untrained_net_predicts_zero(self):
        net = OperatorNet(OperatorConfig(hidden=8, layers=2, modes=4, seed=0))
        out = net.predict(RNG.standard_normal((2, 1, 16, 16)).astype(np.float32))
        assert np.array_equal(out, np.zeros((2, 16, 16), dtype=np.float32))

    def test_resolution_consistency_band_limited(self):
        net = OperatorNet(OperatorConfig(hidden=32, layers=4, modes=8, seed=0))
        net.params["proj.w2"].data = (
            Rng(123).normal((32, 1)) / np.sqrt(32)).astype(np.float32)
        rng = Rng(5)
        spec = np.zeros((32, 32), dtype=complex)
        freqs = np.fft.fftfreq(32) * 32
        kx, ky = np.meshgrid(freqs, freqs)
        mask = (np.abs(kx) < 7) & (np.abs(ky) < 7)
        spec[mask] = rng.normal(int(mask.sum())) + 1j * rng.normal(int(mask.sum()))
        coarse = np.real(np.fft.ifft2(spec))
        coarse /= np.abs(coarse).max()
        fine = upsample_fourier(coarse, 64, 64)
        out_coarse = net.predict(coarse[None, None].astype(np.float32))[0]
        out_fine = net.predict(fine[None, None].astype(np.float32))[0]
        rel = (np.linalg.norm(downsample_strided(out_fine, 32, 32) - out_coarse)
               / np.linalg.norm(out_coarse))
        assert rel < 1e-3

    def test_grid_below_modes_rejected(self):
        net = OperatorNet(OperatorConfig(hidden=8, layers=1, modes=8))
        with pytest.raises(ValueError, match="modes"):
            net.predict(np.zeros((1, 1, 8, 8), dtype=np.float32))


@pytest.fixture(scope="module")
def pf_small():
    cfg = CahnHilliardConfig(grid_n=32, frames=12, frame_interval=150,
                             eps_int=0.03, seed=21)
    hr = generate_ch_dataset(cfg, runs=8)
    lr_arr = downsample_strided(hr.trajectories, 16, 16)
    train = TrajectorySet(lr_arr[:6], hr.dt, hr.domain_size, hr.quantity,
                          Split.TRAIN, hr.provenance + "|lr16")
    val = TrajectorySet(lr_arr[6:], hr.dt, hr.domain_size, hr.quantity,
                        Split.VAL, hr.provenance + "|lr16")
    return train, val


@pytest.fixture(scope="module")
def trained_pf(pf_small):
    train, _ = pf_small
    net = OperatorNet(OperatorConfig(n_in=1, hidden=24, layers=3, modes=6, seed=3))
    curve = train_operator(net, train, epochs=40, lr=2e-3, batch_size=32, seed=4)
    return net, curve


class TestTraining:
    def test_constant_dataset_fits_to_machine_floor(self):
        arr = np.full((2, 6, 16, 16), 0.5, dtype=np.float32)
        ts = TrajectorySet(arr, 0.1, 1.0, Quantity.ORDER_PARAMETER, Split.TRAIN)
        net = OperatorNet(OperatorConfig(hidden=16, layers=2, modes=4, seed=1))
        curve = train_operator(net, ts, epochs=200, lr=1e-2, batch_size=16, seed=0)
        assert len(curve) <= 400
        assert curve[-1] < 1e-8

    def test_loss_drops_tenfold_on_pf(self, trained_pf):
        _, curve = trained_pf
        assert np.all(np.isfinite(curve))
        assert curve[-1] < np.mean(curve[:3]) / 10

    def test_trained_beats_persistence_one_step(self, pf_small, trained_pf):
        _, val = pf_small
        net, _ = trained_pf
        arr = val.trajectories
        pred = np.stack([net.predict(arr[b, :-1, None]) for b in range(arr.shape[0])])
        truth = arr[:, 1:]
        model_rl2 = relative_l2(pred, truth).aggregate
        persist_rl2 = relative_l2(arr[:, :-1], truth).aggregate
        assert model_rl2 < persist_rl2

    def test_equal_seed_training_bit_identical(self):
        arr = (0.1 * np.random.default_rng(0).standard_normal((2, 5, 16, 16))).astype(np.float32)
        ts = TrajectorySet(arr, 0.1, 1.0, Quantity.ORDER_PARAMETER, Split.TRAIN)

        def run():
            net = OperatorNet(OperatorConfig(hidden=8, layers=2, modes=4, seed=7))
            train_operator(net, ts, epochs=3, lr=1e-3, batch_size=4, seed=2)
            return net.named_arrays()

        a, b = run(), run()
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_too_few_frames_rejected(self):
        arr = np.zeros((1, 2, 16, 16), dtype=np.float32)
        ts = TrajectorySet(arr, 0.1, 1.0, Quantity.ORDER_PARAMETER, Split.TRAIN)
        with pytest.raises(ValueError):
            sliding_windows(ts, n_in=2)


class TestRollout:
    def test_horizon_zero_empty(self, trained_pf):
        net, _ = trained_pf
        out = rollout(net, np.zeros((1, 16, 16), dtype=np.float32), horizon=0)
        assert out.shape == (0, 16, 16)

    def test_horizon_one_equals_forward(self, trained_pf, pf_small):
        net, _ = trained_pf
        _, val = pf_small
        window = val.trajectories[0, :1]
        out = rollout(net, window, horizon=1)
        direct = net.predict(window[None])[0]
        assert np.array_equal(out[0], direct)

    def test_error_accumulates_with_horizon(self, trained_pf, pf_small):
        net, _ = trained_pf
        _, val = pf_small
        preds = rollout_set(net, val, horizon=10)
        truth = val.trajectories[:, 1:11]
        rep = relative_l2(preds.trajectories, truth)
        assert rep.frame_mean[0] < rep.frame_mean[9]

    def test_sr_horizon_one_equals_fine_forward(self, trained_pf):
        net, _ = trained_pf
        fine = np.random.default_rng(3).standard_normal((1, 32, 32)).astype(np.float32)
        out = rollout_sr(net, fine, horizon=1)
        assert np.array_equal(out[0], net.predict(fine[None])[0])

    def test_sr_consistent_with_lr_rollout_on_band_limited_input(self, trained_pf, pf_small):
        net, _ = trained_pf
        _, val = pf_small
        coarse = val.trajectories[0, :1]
        fine = upsample_fourier(coarse.astype(np.float64), 32, 32).astype(np.float32)
        lr_step = rollout(net, coarse, horizon=1)[0]
        sr_step = rollout_sr(net, fine, horizon=1)[0]
        rel = (np.linalg.norm(downsample_strided(sr_step, 16, 16) - lr_step)
               / np.linalg.norm(lr_step))
        assert rel < 1e-3


class TestCheckpoint:
    def test_save_load_round_trip(self, trained_pf, tmp_path):
        net, _ = trained_pf
        path = tmp_path / "op.ck"
        save_operator(path, net, data_provenance="ch:test|lr16", extra={"note": 1})
        loaded, meta = load_operator(path)
        assert meta["data_provenance"] == "ch:test|lr16"
        assert meta["config"]["hidden"] == net.cfg.hidden
        x = np.random.default_rng(0).standard_normal((1, 1, 16, 16)).astype(np.float32)
        assert np.array_equal(loaded.predict(x), net.predict(x))
