"""Fourier neural operator: pointwise lifting, truncated spectral kernel
layers with a pointwise linear bypass, and a zero-initialized projection head.
Weights are resolution-agnostic (fixed mode count, free grid), which is what
enables zero-shot super-resolution rollouts on finer grids."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .field import Quantity, Split, TrajectorySet
from .rng import Rng


@dataclass(frozen=True)
class OperatorConfig:
    n_in: int = 1          # autoregressive context length
    hidden: int = 32       # lifted channel width
    layers: int = 4
    modes: int = 8         # retained modes per axis (per corner)
    seed: int = 0


def _channel_dense(v: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise linear map over channels of a (B,C,H,W) tensor."""
    bsz, c, h, width = v.shape
    flat = v.transpose((0, 2, 3, 1)).reshape((bsz * h * width, c))
    out = ad.matmul(flat, w) + b
    return out.reshape((bsz, h, width, w.shape[1])).transpose((0, 3, 1, 2))


class OperatorNet:
    def __init__(self, cfg: OperatorConfig, rng: Rng | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else Rng(cfg.seed)
        c, m = cfg.hidden, cfg.modes
        p = {}
        p["lift.w"] = self._dense_init(rng, cfg.n_in, c)
        p["lift.b"] = ad.param(np.zeros(c))
        for l in range(cfg.layers):
            scale = 1.0 / (c * c)
            p[f"spec{l}.wr"] = ad.param(scale * rng.normal((c, c, 2 * m, 2 * m)))
            p[f"spec{l}.wi"] = ad.param(scale * rng.normal((c, c, 2 * m, 2 * m)))
            p[f"spec{l}.pw"] = self._dense_init(rng, c, c)
            p[f"spec{l}.pb"] = ad.param(np.zeros(c))
        p["proj.w1"] = self._dense_init(rng, c, c)
        p["proj.b1"] = ad.param(np.zeros(c))
        p["proj.w2"] = ad.param(np.zeros((c, 1)))  # zero-init: untrained net predicts 0
        p["proj.b2"] = ad.param(np.zeros(1))
        self.params = p

    @staticmethod
    def _dense_init(rng: Rng, fan_in: int, fan_out: int) -> Tensor:
        return ad.param(rng.normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in))

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint missing parameter {k}")
            if arrays[k].shape != v.data.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {v.data.shape}")
            v.data = arrays[k].astype(v.data.dtype).copy()

    # -- forward -------------------------------------------------------------

    def forward(self, a, params: dict | None = None) -> Tensor:
        """(B, n_in, H, W) window -> (B, H, W) next-frame prediction."""
        p = self.params if params is None else params
        x = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float32))
        bsz, n_in, h, w = x.shape
        if n_in != self.cfg.n_in:
            raise ValueError(f"expected {self.cfg.n_in} input frames, got {n_in}")
        if h < 2 * self.cfg.modes or w < 2 * self.cfg.modes:
            raise ValueError(f"grid {h}x{w} below 2*modes = {2 * self.cfg.modes}")
        v = _channel_dense(x, p["lift.w"], p["lift.b"])
        for l in range(self.cfg.layers):
            spec = ad.spectral_mul(v, p[f"spec{l}.wr"], p[f"spec{l}.wi"],
                                   self.cfg.modes, self.cfg.modes)
            bypass = _channel_dense(v, p[f"spec{l}.pw"], p[f"spec{l}.pb"])
            v = ad.gelu(spec + bypass)
        v = ad.gelu(_channel_dense(v, p["proj.w1"], p["proj.b1"]))
        out = _channel_dense(v, p["proj.w2"], p["proj.b2"])
        return out.reshape((bsz, h, w))

    def predict(self, a: np.ndarray) -> np.ndarray:
        """Inference path: detached parameters, no tape."""
        detached = {k: Tensor(v.data) for k, v in self.params.items()}
        return self.forward(np.asarray(a, dtype=np.float32), params=detached).data


def spectral_layer(v, wr, wi, modes: int, pw=None, pb=None, activation=None):
    """One kernel-integration layer on raw arrays; test-friendly entry point.

    out = activation(spectral_multiply(v) + pointwise(v)); activation=None
    means identity, pw=None skips the bypass.
    """
    vt = v if isinstance(v, Tensor) else Tensor(np.asarray(v))
    wrt = wr if isinstance(wr, Tensor) else Tensor(np.asarray(wr))
    wit = wi if isinstance(wi, Tensor) else Tensor(np.asarray(wi))
    out = ad.spectral_mul(vt, wrt, wit, modes, modes)
    if pw is not None:
        pwt = pw if isinstance(pw, Tensor) else Tensor(np.asarray(pw))
        pbt = pb if isinstance(pb, Tensor) else Tensor(np.zeros(pwt.shape[1], dtype=vt.dtype))
        out = out + _channel_dense(vt, pwt, pbt)
    if activation is not None:
        out = activation(out)
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def sliding_windows(ts: TrajectorySet, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    """All (input window, next frame) pairs from every trajectory."""
    arr = ts.trajectories
    b, t, h, w = arr.shape
    if t < n_in + 1:
        raise ValueError(f"need at least {n_in + 1} frames, got {t}")
    xs, ys = [], []
    for s in range(t - n_in):
        xs.append(arr[:, s:s + n_in])
        ys.append(arr[:, s + n_in])
    return (np.concatenate(xs, axis=0).astype(np.float32),
            np.concatenate(ys, axis=0).astype(np.float32))


def train_operator(net: OperatorNet, ds: TrajectorySet, epochs: int, lr: float,
                   batch_size: int = 32, seed: int = 0,
                   weight_decay: float = 0.0) -> list[float]:
    """Minimize next-frame MSE over sliding windows; returns the loss curve."""
    xs, ys = sliding_windows(ds, net.cfg.n_in)
    n = xs.shape[0]
    params = net.param_list()
    state = ad.AdamState.for_params(params, lr=lr, weight_decay=weight_decay)
    rng = Rng(seed)
    curve = []
    for _ in range(epochs):
        order = np.argsort(rng.uniform(n))
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            pred = net.forward(xs[idx])
            diff = pred - Tensor(ys[idx])
            loss = (diff * diff).mean()
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(f"operator training diverged at step {len(curve)}: loss={value}")
            grads = ad.grad(loss, params)
            ad.adam_step(state, params, grads)
            curve.append(value)
    return curve


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------

def rollout(net: OperatorNet, a0: np.ndarray, horizon: int) -> np.ndarray:
    """Autoregressive rollout from an (n_in, H, W) window -> (horizon, H, W)."""
    a0 = np.asarray(a0, dtype=np.float32)
    if a0.ndim != 3 or a0.shape[0] != net.cfg.n_in:
        raise ValueError(f"initial window must be ({net.cfg.n_in}, H, W), got {a0.shape}")
    window = a0.copy()
    frames = []
    for step in range(horizon):
        pred = net.predict(window[None])[0]
        if not np.all(np.isfinite(pred)):
            raise RuntimeError(f"non-finite rollout prediction at step {step}")
        frames.append(pred)
        window = np.concatenate([window[1:], pred[None]], axis=0)
    if not frames:
        return np.empty((0,) + a0.shape[1:], dtype=np.float32)
    return np.stack(frames).astype(np.float32)


def rollout_sr(net: OperatorNet, a0_hr: np.ndarray, horizon: int) -> np.ndarray:
    """Zero-shot super-resolution: the same weights run directly on the fine grid."""
    return rollout(net, a0_hr, horizon)


def rollout_set(net: OperatorNet, ts: TrajectorySet, horizon: int,
                provenance_suffix: str = "rollout") -> TrajectorySet:
    """Roll out from each trajectory's initial window; package as a TrajectorySet."""
    arr = ts.trajectories
    n_in = net.cfg.n_in
    preds = np.stack([rollout(net, arr[b, :n_in], horizon) for b in range(arr.shape[0])])
    return ts.with_data(preds, provenance=f"{ts.provenance}|{provenance_suffix}")


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_operator(path, net: OperatorNet, data_provenance: str, extra: dict | None = None) -> None:
    from .autodiff import save_checkpoint
    meta = {
        "kind": "operator",
        "config": asdict(net.cfg),
        "data_provenance": data_provenance,
    }
    if extra:
        meta.update(extra)
    save_checkpoint(path, net.named_arrays(), meta)


def load_operator(path) -> tuple[OperatorNet, dict]:
    from .autodiff import load_checkpoint
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "operator":
        raise ValueError(f"{path} is not an operator checkpoint")
    net = OperatorNet(OperatorConfig(**meta["config"]))
    net.load_arrays(arrays)
    return net, meta
