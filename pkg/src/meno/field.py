"""Grid fields, trajectory containers, resampling and FFT conventions.

All physical domains in this repo are periodic squares. The FFT convention is
numpy's: unnormalized forward transform, inverse carries the 1/(H*W) factor,
so ``ifft2(fft2(f)) == f`` and Parseval reads ``sum |f|^2 == sum |F|^2 / (HW)``.
Every module uses the wrappers below so the convention is fixed in one place.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field

import numpy as np


class Quantity(str, enum.Enum):
    ORDER_PARAMETER = "order_parameter"
    VORTICITY = "vorticity"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def fft2(f: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT over the last two axes."""
    return np.fft.fft2(f, axes=(-2, -1))


def ifft2(F: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT over the last two axes (carries the 1/(HW) factor)."""
    return np.fft.ifft2(F, axes=(-2, -1))


def _validate_grid(data: np.ndarray) -> None:
    if data.ndim < 2:
        raise ValueError(f"grid must have at least 2 dims, got shape {data.shape}")
    h, w = data.shape[-2], data.shape[-1]
    if h < 4 or w < 4:
        raise ValueError(f"grid must be at least 4x4, got {h}x{w}")
    if not np.all(np.isfinite(data)):
        raise ValueError("grid contains non-finite values")


@dataclass(frozen=True)
class Field:
    """A 2D scalar grid with physical metadata. Immutable after construction."""

    data: np.ndarray  # (H, W), row-major, y first
    domain_size: float
    quantity: Quantity

    def __post_init__(self):
        data = np.asarray(self.data)
        _validate_grid(data)
        if data.ndim != 2:
            raise ValueError(f"Field data must be 2D, got shape {data.shape}")
        if self.domain_size <= 0:
            raise ValueError(f"domain_size must be positive, got {self.domain_size}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "quantity", Quantity(self.quantity))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dx(self) -> float:
        return self.domain_size / self.data.shape[1]

    @property
    def dy(self) -> float:
        return self.domain_size / self.data.shape[0]


@dataclass(frozen=True)
class TrajectorySet:
    """Batched time series of fields sharing grid, dt and provenance."""

    trajectories: np.ndarray  # (B, T, H, W) float32
    dt: float
    domain_size: float
    quantity: Quantity
    split: Split
    provenance: str = ""

    def __post_init__(self):
        arr = np.asarray(self.trajectories, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError(f"trajectories must be (B,T,H,W), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 2:
            raise ValueError(f"need B >= 1 and T >= 2, got B={arr.shape[0]}, T={arr.shape[1]}")
        _validate_grid(arr)
        if self.dt <= 0 or self.domain_size <= 0:
            raise ValueError("dt and domain_size must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "trajectories", arr)
        object.__setattr__(self, "quantity", Quantity(self.quantity))
        object.__setattr__(self, "split", Split(self.split))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.trajectories.shape

    def frame(self, b: int, t: int) -> Field:
        return Field(self.trajectories[b, t], self.domain_size, self.quantity)

    def with_data(self, arr: np.ndarray, split: Split | None = None,
                  provenance: str | None = None) -> "TrajectorySet":
        return TrajectorySet(
            arr, self.dt, self.domain_size, self.quantity,
            self.split if split is None else split,
            self.provenance if provenance is None else provenance,
        )


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def upsample_bilinear(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear interpolation with periodic wrap, acting on the last two axes.

    Grids sample the periodic domain at positions i*L/N starting at 0, so an
    integer-ratio upsample places target points exactly on source points and
    returns the source values there bit-exactly.
    """
    h, w = arr.shape[-2], arr.shape[-1]
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} smaller than source {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite input")
    if target_h == h and target_w == w:
        return arr.copy()

    uy = np.arange(target_h) * (h / target_h)
    ux = np.arange(target_w) * (w / target_w)
    i0 = np.floor(uy).astype(np.intp) % h
    j0 = np.floor(ux).astype(np.intp) % w
    i1 = (i0 + 1) % h
    j1 = (j0 + 1) % w
    fy = (uy - np.floor(uy)).astype(arr.dtype)
    fx = (ux - np.floor(ux)).astype(arr.dtype)

    # lerp along y, then along x; written as f0 + f*(f1-f0) so constants are exact
    a0 = np.take(arr, i0, axis=-2)
    a1 = np.take(arr, i1, axis=-2)
    ry = a0 + fy[:, None] * (a1 - a0)
    b0 = np.take(ry, j0, axis=-1)
    b1 = np.take(ry, j1, axis=-1)
    return b0 + fx * (b1 - b0)


def _spectral_axis_map(n: int, m: int):
    """(src_idx, dst_idx, weight) groups mapping length-n DFT bins into length m.

    For even n the Nyquist bin is split half-and-half between +n/2 and -n/2 in
    the target; for real signals this is exactly the minimal-bandwidth trig
    interpolant, so sample points are reproduced.
    """
    half = n // 2
    groups = [(np.arange(0, half), np.arange(0, half), 1.0)]
    neg = np.arange(half + 1, n)
    groups.append((neg, neg + (m - n), 1.0))
    if n % 2 == 0:
        nyq = np.array([half])
        if m > n:
            groups.append((nyq, nyq, 0.5))
            groups.append((nyq, np.array([m - half]), 0.5))
        else:
            groups.append((nyq, nyq, 1.0))
    else:
        groups[0] = (np.arange(0, half + 1), np.arange(0, half + 1), 1.0)
    return groups


def upsample_fourier(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Spectral zero-padding upsample (exact for band-limited fields)."""
    h, w = arr.shape[-2], arr.shape[-1]
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} smaller than source {h}x{w}")
    F = fft2(arr)
    out = np.zeros(arr.shape[:-2] + (target_h, target_w), dtype=complex)
    for sy, dy, wy in _spectral_axis_map(h, target_h):
        for sx, dx, wx in _spectral_axis_map(w, target_w):
            out[..., dy[:, None], dx[None, :]] += (wy * wx) * F[..., sy[:, None], sx[None, :]]
    return np.real(ifft2(out)) * (target_h * target_w / (h * w))


def upsample_uniform(f: Field, target_h: int, target_w: int,
                     method: str = "bilinear") -> Field:
    """The uniform upsampler: bilinear periodic by default, spectral behind a flag."""
    if method == "bilinear":
        data = upsample_bilinear(f.data, target_h, target_w)
    elif method == "fourier":
        data = upsample_fourier(f.data, target_h, target_w)
    else:
        raise ValueError(f"unknown upsample method {method!r}")
    return Field(data, f.domain_size, f.quantity)


def downsample_strided(arr: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Strided subsampling on the last two axes; dims must divide evenly."""
    h, w = arr.shape[-2], arr.shape[-1]
    if h % target_h != 0 or w % target_w != 0:
        raise ValueError(f"source {h}x{w} not divisible by target {target_h}x{target_w}")
    return arr[..., :: h // target_h, :: w // target_w].copy()


def downsample(f: Field, target_h: int, target_w: int) -> Field:
    return Field(downsample_strided(f.data, target_h, target_w), f.domain_size, f.quantity)
