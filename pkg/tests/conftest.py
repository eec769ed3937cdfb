import time

import numpy as np
import pytest


def _band_limited_field(n: int, seed: int, cutoff: float = 0.2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    spec = np.fft.fft2(rng.standard_normal((n, n)))
    fy = np.abs(np.fft.fftfreq(n))[:, None]
    fx = np.abs(np.fft.fftfreq(n))[None, :]
    f = np.real(np.fft.ifft2(spec * (fy < cutoff) * (fx < cutoff)))
    return (f / f.std()).astype(np.float32)


@pytest.fixture(scope="session")
def point_mass_imf():
    """One-step decoder trained on a single repeated 32x32 field (shared by
    module tests and the acceptance suite; wall time is part of the record)."""
    from meno.decoder import DecoderConfig, DecoderNet, train_decoder

    x0 = _band_limited_field(32, seed=0)
    ds = np.tile(x0, (1, 3, 1, 1))
    net = DecoderNet(DecoderConfig(base=12, mults=(1, 2), res_blocks=1, emb_dim=16, seed=0))
    t0 = time.perf_counter()
    curve, stats = train_decoder(net, ds, "imf", iters=1200, lr=1e-3, batch_size=8, seed=1)
    elapsed = time.perf_counter() - t0
    return {"net": net, "stats": stats, "x0": x0, "curve": curve, "seconds": elapsed}


@pytest.fixture(scope="session")
def point_mass_ddpm():
    """Epsilon decoder trained on a single repeated 24x24 field."""
    from meno.decoder import DecoderConfig, DecoderNet, DiffusionSchedule, train_decoder

    x0 = _band_limited_field(24, seed=0)
    ds = np.tile(x0, (1, 3, 1, 1))
    sched = DiffusionSchedule()
    net = DecoderNet(DecoderConfig(base=12, mults=(1, 2), res_blocks=1, emb_dim=16, seed=0))
    curve, stats = train_decoder(net, ds, "ddpm", iters=2200, lr=2e-3, batch_size=8,
                                 seed=1, sched=sched)
    return {"net": net, "stats": stats, "x0": x0, "curve": curve, "sched": sched}


def relerr(a, b, floor=1e-8):
    """Coordinate-wise relative error with a floor against near-zero entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor + 1e-3 * np.abs(b).max(initial=0.0))
    return np.max(np.abs(a - b) / scale)


def central_diff(f, x, h=1e-5):
    """Dense central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g
