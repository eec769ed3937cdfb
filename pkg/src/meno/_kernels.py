"""Hot numeric kernels: periodic 2D convolution and its gradients.

The convolution here is the single dominant cost of decoder training, so it
comes in two interchangeable implementations:

* a numba ``@njit(parallel=True)`` path (default when numba imports), and
* a pure-numpy path built on ``sliding_window_view`` + BLAS ``tensordot``.

Set ``MENO_NUMBA=0`` in the environment to force the numpy path. Both paths
are deterministic for a fixed input (accumulation order does not depend on
thread count). ``benchmarks/bench_kernels.py`` compares them.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _env_flag(name: str, default: bool) -> bool:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in ("0", "false", "no", "off")


try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

NUMBA_ENABLED = HAS_NUMBA and _env_flag("MENO_NUMBA", True)


def _pad_wrap(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), mode="wrap")


def _check_conv_args(x: np.ndarray, w: np.ndarray) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4D input/weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ValueError(f"kernel dims must be odd, got {w.shape[2:]}")


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------

def conv2d_forward_numpy(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[b,co,y,x] = sum_{ci,ky,kx} x[b,ci,y+ky-kh//2,x+kx-kw//2] w[co,ci,ky,kx], periodic."""
    _check_conv_args(x, w)
    kh, kw = w.shape[2], w.shape[3]
    xp = _pad_wrap(x, kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,Ci,H,W,kh,kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B,H,W,Co)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _grad_weight_numpy(xp: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,Ci,H,W,kh,kw)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (Co,Ci,kh,kw)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(parallel=True, fastmath=True, cache=True)
    def _conv2d_forward_nb(xp, w, out):
        B, Ci, Hp, Wp = xp.shape
        Co, _, kh, kw = w.shape
        H = Hp - kh + 1
        W = Wp - kw + 1
        for idx in prange(B * Co):
            b = idx // Co
            co = idx % Co
            o = out[b, co]
            for ci in range(Ci):
                xc = xp[b, ci]
                for ky in range(kh):
                    for kx in range(kw):
                        wv = w[co, ci, ky, kx]
                        for y in range(H):
                            xrow = xc[y + ky]
                            orow = o[y]
                            for x in range(W):
                                orow[x] += wv * xrow[x + kx]

    @njit(parallel=True, fastmath=True, cache=True)
    def _conv2d_grad_w_nb(xp, g, gw):
        B, Ci, Hp, Wp = xp.shape
        Co = g.shape[1]
        H = g.shape[2]
        W = g.shape[3]
        kh = Hp - H + 1
        kw = Wp - W + 1
        for idx in prange(Co * Ci):
            co = idx // Ci
            ci = idx % Ci
            for ky in range(kh):
                for kx in range(kw):
                    acc = xp[0, 0, 0, 0] * 0
                    for b in range(B):
                        for y in range(H):
                            grow = g[b, co, y]
                            xrow = xp[b, ci, y + ky]
                            for x in range(W):
                                acc += grow[x] * xrow[x + kx]
                    gw[co, ci, ky, kx] = acc

    def conv2d_forward_numba(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        _check_conv_args(x, w)
        kh, kw = w.shape[2], w.shape[3]
        xp = _pad_wrap(x, kh, kw)
        out = np.zeros((x.shape[0], w.shape[0], x.shape[2], x.shape[3]), dtype=x.dtype)
        _conv2d_forward_nb(xp, np.ascontiguousarray(w), out)
        return out

    def _grad_weight_numba(xp: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
        gw = np.zeros((g.shape[1], xp.shape[1], kh, kw), dtype=g.dtype)
        _conv2d_grad_w_nb(xp, np.ascontiguousarray(g), gw)
        return gw


# ---------------------------------------------------------------------------
# dispatching API
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Periodic same-size 2D convolution, (B,Ci,H,W) x (Co,Ci,kh,kw) -> (B,Co,H,W)."""
    if NUMBA_ENABLED:
        return conv2d_forward_numba(x, w)
    return conv2d_forward_numpy(x, w)


def conv2d_grad_input(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the conv input: periodic conv of g with the flipped,
    channel-transposed kernel (exact adjoint of conv2d_forward)."""
    w_adj = np.ascontiguousarray(w[:, :, ::-1, ::-1].swapaxes(0, 1))
    if NUMBA_ENABLED:
        return conv2d_forward_numba(g, w_adj)
    return conv2d_forward_numpy(g, w_adj)


def conv2d_grad_weight(x: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient w.r.t. the conv weights: gw[co,ci,ky,kx] = sum_{b,y,x} g*x_padded."""
    xp = _pad_wrap(x, kh, kw)
    if NUMBA_ENABLED:
        return _grad_weight_numba(xp, g, kh, kw)
    return _grad_weight_numpy(xp, g, kh, kw)
