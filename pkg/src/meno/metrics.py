"""Evaluation metrics: relative L2, Gaussian-window SSIM, power-spectrum
discrepancy, isotropic energy spectra, FFT autocorrelation, and the
Ginzburg-Landau free energy. All metrics are deterministic pure functions and
accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .field import Quantity, TrajectorySet

EPS_NUM = 1e-12

# dof correction used in every SEM here: sample std (ddof=1) / sqrt(B)
SEM_DDOF = 1


@dataclass(frozen=True)
class MetricReport:
    name: str
    per_frame: np.ndarray   # (B, T)
    frame_mean: np.ndarray  # (T,)
    frame_sem: np.ndarray   # (T,)
    aggregate: float

    @classmethod
    def from_per_frame(cls, name: str, per_frame: np.ndarray) -> "MetricReport":
        per_frame = np.asarray(per_frame, dtype=np.float64)
        if not np.all(np.isfinite(per_frame)):
            raise ValueError(f"{name}: non-finite metric values")
        b = per_frame.shape[0]
        mean = per_frame.mean(axis=0)
        if b > 1:
            sem = per_frame.std(axis=0, ddof=SEM_DDOF) / np.sqrt(b)
        else:
            sem = np.zeros_like(mean)
        return cls(name, per_frame, mean, sem, float(per_frame.mean()))


def _as_btHW(x) -> np.ndarray:
    if isinstance(x, TrajectorySet):
        x = x.trajectories
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ValueError(f"expected (B,T,H,W), got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# relative L2
# ---------------------------------------------------------------------------

def relative_l2(pred, truth) -> MetricReport:
    """Per-step batch-averaged ||pred - truth||_2 / ||truth||_2."""
    p = _as_btHW(pred)
    t = _as_btHW(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    num = np.sqrt(((p - t) ** 2).sum(axis=(-2, -1)))
    den = np.sqrt((t ** 2).sum(axis=(-2, -1)))
    if np.any(den == 0):
        raise ValueError("truth frame with zero norm")
    return MetricReport.from_per_frame("relative_l2", num / den)


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.k1 <= 0 or self.k2 <= 0 or self.sigma <= 0:
            raise ValueError("sigma, k1, k2 must be positive")


def gaussian_kernel1d(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    xs = np.arange(window) - half
    k = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _smooth_axis(x: np.ndarray, kern: np.ndarray, axis: int) -> np.ndarray:
    # same-size separable pass; symmetric (edge-reflect) fill keeps the window
    # weights summing to one, which makes SSIM exactly affine invariant
    k = len(kern)
    p = k // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (p, p)
    xp = np.pad(x, pad, mode="symmetric")
    win = sliding_window_view(xp, k, axis=axis)
    return win @ kern


def _gaussian_smooth(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    return _smooth_axis(_smooth_axis(x, kern, -1), kern, -2)


def ssim(x: np.ndarray, y: np.ndarray, cfg: SsimConfig = SsimConfig()) -> float:
    """Mean SSIM of y against reference x (2D fields, data range from x)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"ssim expects two equal-shape 2D fields, got {x.shape}, {y.shape}")
    data_range = float(x.max() - x.min())
    if data_range == 0.0:
        return 1.0 if np.allclose(x, y, rtol=0, atol=1e-12) else 0.0
    c1 = (cfg.k1 * data_range) ** 2
    c2 = (cfg.k2 * data_range) ** 2
    kern = gaussian_kernel1d(cfg.window, cfg.sigma)
    mu_x = _gaussian_smooth(x, kern)
    mu_y = _gaussian_smooth(y, kern)
    var_x = _gaussian_smooth(x * x, kern) - mu_x ** 2
    var_y = _gaussian_smooth(y * y, kern) - mu_y ** 2
    cov = _gaussian_smooth(x * y, kern) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(ssim_map.mean())


def ssim_report(truth, pred, cfg: SsimConfig = SsimConfig()) -> MetricReport:
    """Frame-wise SSIM of predictions against reference truth."""
    t = _as_btHW(truth)
    p = _as_btHW(pred)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    b, nt = t.shape[:2]
    vals = np.empty((b, nt))
    for i in range(b):
        for j in range(nt):
            vals[i, j] = ssim(t[i, j], p[i, j], cfg)
    return MetricReport.from_per_frame("ssim", vals)


# ---------------------------------------------------------------------------
# power spectrum density discrepancy
# ---------------------------------------------------------------------------

def _normalized_psd(batch: np.ndarray) -> np.ndarray:
    """Overflow-safe normalized power spectrum per sample, (N,H,W) -> (N,H,W)."""
    x = batch - batch.mean(axis=(-2, -1), keepdims=True)
    F = np.fft.fftshift(np.fft.fft2(x, axes=(-2, -1)), axes=(-2, -1))
    re, im = np.real(F), np.imag(F)
    s = np.maximum(np.abs(re), np.abs(im)).max(axis=(-2, -1), keepdims=True)
    s = np.maximum(s, EPS_NUM)
    re = re / s
    im = im / s
    p = re ** 2 + im ** 2
    return p / (p.sum(axis=(-2, -1), keepdims=True) + EPS_NUM)


def psdd(x_batch: np.ndarray, y_batch: np.ndarray) -> float:
    """Batch-mean l1 distance between normalized power spectra."""
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 3:
        raise ValueError(f"psdd expects matching (N,H,W) stacks, got {x.shape}, {y.shape}")
    px = _normalized_psd(x)
    py = _normalized_psd(y)
    return float(np.abs(px - py).mean(axis=(-2, -1)).mean())


def psdd_report(pred, truth) -> MetricReport:
    """One PSDD value per trajectory (frames pooled as the PSD batch)."""
    p = _as_btHW(pred)
    t = _as_btHW(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    vals = np.array([[psdd(p[i], t[i])] for i in range(p.shape[0])])
    return MetricReport.from_per_frame("psdd", vals)


# ---------------------------------------------------------------------------
# isotropic energy spectrum
# ---------------------------------------------------------------------------

def energy_spectrum(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Radially binned |F|^2 over integer wavenumber shells, DC excluded."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError(f"energy_spectrum expects a square 2D field, got {f.shape}")
    n = f.shape[0]
    F = np.fft.fft2(f)
    power = np.abs(F) ** 2
    freqs = np.fft.fftfreq(n) * n
    kx, ky = np.meshgrid(freqs, freqs)
    shell = np.rint(np.sqrt(kx ** 2 + ky ** 2)).astype(int)
    kmax = shell.max()
    e = np.zeros(kmax + 1)
    np.add.at(e, shell.ravel(), power.ravel())
    ks = np.arange(1, kmax + 1)
    return ks, e[1:]


# ---------------------------------------------------------------------------
# temporal autocorrelation (Wiener-Khinchin)
# ---------------------------------------------------------------------------

def autocorrelation(ts, max_lag: int, unbiased: bool = True):
    """Mean temporal autocorrelation over pixels, batch mean and SEM per lag.

    FFT-based linear (non-circular) autocorrelation: de-mean each pixel's time
    series, zero-pad to >= 2T-1, take the inverse transform of the power
    spectrum, then normalize by (T - lag) (unbiased) or T and by the lag-0
    value. Returns (lags, mean_rho, sem_rho).
    """
    arr = _as_btHW(ts)
    b, t = arr.shape[:2]
    if max_lag >= t:
        raise ValueError(f"max_lag {max_lag} must be < T = {t}")
    series = np.moveaxis(arr, 1, -1)  # (B, H, W, T)
    series = series - series.mean(axis=-1, keepdims=True)
    n_fft = 1 << int(np.ceil(np.log2(2 * t - 1)))
    spec = np.fft.rfft(series, n=n_fft, axis=-1)
    r = np.fft.irfft(spec * np.conj(spec), n=n_fft, axis=-1)[..., : max_lag + 1]
    lags = np.arange(max_lag + 1)
    denom = (t - lags) if unbiased else np.full(max_lag + 1, t)
    gamma = r / denom
    rho = gamma / (gamma[..., :1] + EPS_NUM)
    per_b = rho.mean(axis=(1, 2))  # (B, L+1)
    mean = per_b.mean(axis=0)
    if b > 1:
        sem = per_b.std(axis=0, ddof=SEM_DDOF) / np.sqrt(b)
    else:
        sem = np.zeros_like(mean)
    return lags, mean, sem


# ---------------------------------------------------------------------------
# Cahn-Hilliard free energy
# ---------------------------------------------------------------------------

_LAMBDA_FACTOR = 3.0 / (2.0 * np.sqrt(2.0))


@dataclass(frozen=True)
class FreeEnergyConfig:
    surface_tension: float
    eps_interface: float
    dx: float

    def __post_init__(self):
        if min(self.surface_tension, self.eps_interface, self.dx) <= 0:
            raise ValueError("all free-energy parameters must be positive")

    @property
    def lam(self) -> float:
        return self.surface_tension * _LAMBDA_FACTOR * self.eps_interface

    @classmethod
    def from_lambda(cls, lam: float, eps_interface: float, dx: float) -> "FreeEnergyConfig":
        return cls(lam / (_LAMBDA_FACTOR * eps_interface), eps_interface, dx)


def free_energy_density(phi: np.ndarray, cfg: FreeEnergyConfig) -> np.ndarray:
    """(lam/2)|grad phi|^2 + (lam/(4 eps^2))(phi^2-1)^2 with periodic central differences."""
    lam = cfg.lam
    dphix = (np.roll(phi, -1, axis=-1) - np.roll(phi, 1, axis=-1)) / (2 * cfg.dx)
    dphiy = (np.roll(phi, -1, axis=-2) - np.roll(phi, 1, axis=-2)) / (2 * cfg.dx)
    grad2 = dphix ** 2 + dphiy ** 2
    bulk = (phi ** 2 - 1.0) ** 2
    return 0.5 * lam * grad2 + lam / (4.0 * cfg.eps_interface ** 2) * bulk


def free_energy(ts, cfg: FreeEnergyConfig) -> MetricReport:
    """Domain-integrated free energy per frame, batch mean and SEM."""
    if isinstance(ts, TrajectorySet) and ts.quantity is not Quantity.ORDER_PARAMETER:
        raise ValueError(f"free energy needs an order-parameter field, got {ts.quantity}")
    phi = _as_btHW(ts)
    density = free_energy_density(phi, cfg)
    f = density.sum(axis=(-2, -1)) * cfg.dx ** 2
    return MetricReport.from_per_frame("free_energy", f)
