"""Generative refinement decoders on the high-resolution grid.

One network skeleton (a time-conditioned convolutional encoder-decoder with
periodic convolutions) serves two objectives:

* average-velocity regression along the linear noise interpolant, trained with
  the direct target identity so a single displacement step maps a noised field
  back to data, and
* epsilon-prediction diffusion (the multi-step baseline), sampled with the
  deterministic accelerated update rule.

Convention throughout: t = 0 is data, t = 1 is noise, z_t = (1-t) x + t eps,
conditional velocity v = eps - x.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff.optim import clip_global_norm
from .field import TrajectorySet, upsample_bilinear
from .rng import Rng


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecoderConfig:
    base: int = 16
    mults: tuple = (1, 2, 2)
    res_blocks: int = 2
    emb_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mults", tuple(self.mults))
        if self.base < 1 or self.res_blocks < 1 or self.emb_dim % 2:
            raise ValueError("bad decoder configuration")


COORD_FREQS = (1, 2, 4, 8)


def _coord_channels(b: int, h: int, w: int, dtype) -> np.ndarray:
    ys = np.arange(h) / h
    xs = np.arange(w) / w
    chans = []
    for k in COORD_FREQS:
        chans.append(np.tile(np.sin(2 * np.pi * k * ys)[:, None], (1, w)))
        chans.append(np.tile(np.cos(2 * np.pi * k * ys)[:, None], (1, w)))
        chans.append(np.tile(np.sin(2 * np.pi * k * xs)[None, :], (h, 1)))
        chans.append(np.tile(np.cos(2 * np.pi * k * xs)[None, :], (h, 1)))
    stack = np.stack(chans)
    return np.broadcast_to(stack[None], (b, len(chans), h, w)).astype(dtype)


def _embedding_freqs(dim: int) -> np.ndarray:
    # times live in [0,1]; keeping the top frequency modest keeps d(emb)/dt
    # O(10), which the directional-derivative term of the training objective
    # multiplies directly
    half = dim // 2
    return np.exp(np.linspace(0.0, math.log(16.0), half)).astype(np.float32)


class DecoderNet:
    """u(z, r, t) (or epsilon(x_t, t) with r pinned to 0 in diffusion mode)."""

    def __init__(self, cfg: DecoderConfig, rng: Rng | None = None):
        self.cfg = cfg
        self.eval_count = 0
        rng = rng if rng is not None else Rng(cfg.seed)
        chs = [cfg.base * m for m in cfg.mults]
        e = cfg.emb_dim
        p = {}
        p["emb.w1"] = self._dense(rng, 2 * e, 2 * e)
        p["emb.b1"] = ad.param(np.zeros(2 * e))
        p["emb.w2"] = self._dense(rng, 2 * e, e)
        p["emb.b2"] = ad.param(np.zeros(e))
        # stem sees the field plus fixed multi-frequency coordinate channels;
        # periodic convs alone are translation-equivariant and could never
        # synthesize position-locked structure (and the forced flow is
        # genuinely y-dependent), so grid location must enter as input
        p["stem.w"] = self._conv(rng, chs[0], 1 + 4 * len(COORD_FREQS))
        p["stem.b"] = ad.param(np.zeros(chs[0]))
        for s, c in enumerate(chs):
            for b in range(cfg.res_blocks):
                self._add_res_block(p, rng, f"down{s}.res{b}", c, e)
            if s < len(chs) - 1:
                p[f"down{s}.pool.w"] = self._conv(rng, chs[s + 1], c)
                p[f"down{s}.pool.b"] = ad.param(np.zeros(chs[s + 1]))
        self._add_res_block(p, rng, "mid", chs[-1], e)
        for s in reversed(range(len(chs) - 1)):
            p[f"up{s}.conv.w"] = self._conv(rng, chs[s], chs[s + 1])
            p[f"up{s}.conv.b"] = ad.param(np.zeros(chs[s]))
            p[f"up{s}.merge.w"] = self._conv(rng, chs[s], 2 * chs[s])
            p[f"up{s}.merge.b"] = ad.param(np.zeros(chs[s]))
            for b in range(cfg.res_blocks):
                self._add_res_block(p, rng, f"up{s}.res{b}", chs[s], e)
        p["head.w"] = ad.param(np.zeros((1, chs[0], 3, 3)))  # zero-init output
        p["head.b"] = ad.param(np.zeros(1))
        self.params = p

    @staticmethod
    def _dense(rng: Rng, fan_in: int, fan_out: int) -> Tensor:
        return ad.param(rng.normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in))

    @staticmethod
    def _conv(rng: Rng, c_out: int, c_in: int, k: int = 3) -> Tensor:
        return ad.param(rng.normal((c_out, c_in, k, k)) * np.sqrt(1.0 / (c_in * k * k)))

    def _add_res_block(self, p, rng: Rng, name: str, c: int, e: int) -> None:
        p[f"{name}.w1"] = self._conv(rng, c, c)
        p[f"{name}.b1"] = ad.param(np.zeros(c))
        # multiplicative + additive conditioning; the scale path is essential
        # (the target velocity field carries time-dependent input gain) and
        # both start at zero so the time path switches on gradually
        p[f"{name}.scale.w"] = ad.param(np.zeros((e, c)))
        p[f"{name}.scale.b"] = ad.param(np.zeros(c))
        p[f"{name}.shift.w"] = ad.param(np.zeros((e, c)))
        p[f"{name}.shift.b"] = ad.param(np.zeros(c))
        p[f"{name}.w2"] = self._conv(rng, c, c)
        p[f"{name}.b2"] = ad.param(np.zeros(c))

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint missing parameter {k}")
            v.data = arrays[k].astype(v.data.dtype).copy()

    # -- building blocks ------------------------------------------------------

    @staticmethod
    def _pool2(x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        return x.reshape((b, c, h // 2, 2, w // 2, 2)).mean(axis=(3, 5))

    @staticmethod
    def _up2(x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        expanded = ad.broadcast_to(x.reshape((b, c, h, 1, w, 1)), (b, c, h, 2, w, 2))
        return expanded.reshape((b, c, 2 * h, 2 * w))

    def _time_embedding(self, r: Tensor, t: Tensor, p) -> Tensor:
        half = self.cfg.emb_dim // 2
        freqs = Tensor(_embedding_freqs(self.cfg.emb_dim).reshape(1, half).astype(r.dtype))

        def enc(s: Tensor) -> Tensor:
            arg = ad.mul(s.reshape((s.shape[0], 1)), freqs)
            return ad.concat([ad.sin(arg), ad.cos(arg)], axis=1)

        emb = ad.concat([enc(r), enc(t)], axis=1)
        h = ad.gelu(ad.matmul(emb, p["emb.w1"]) + p["emb.b1"])
        return ad.matmul(h, p["emb.w2"]) + p["emb.b2"]

    def _res_block(self, x: Tensor, emb: Tensor, name: str, p) -> Tensor:
        h = ad.conv2d(ad.gelu(x), p[f"{name}.w1"], p[f"{name}.b1"])
        scale = ad.matmul(emb, p[f"{name}.scale.w"]) + p[f"{name}.scale.b"]
        shift = ad.matmul(emb, p[f"{name}.shift.w"]) + p[f"{name}.shift.b"]
        b, c = scale.shape
        h = h * (scale.reshape((b, c, 1, 1)) + 1.0) + shift.reshape((b, c, 1, 1))
        h = ad.conv2d(ad.gelu(h), p[f"{name}.w2"], p[f"{name}.b2"])
        return x + h

    # -- forward ---------------------------------------------------------------

    def forward(self, z, r, t, params: dict | None = None) -> Tensor:
        """(B,1,H,W), (B,), (B,) -> (B,1,H,W). Output shape equals input shape."""
        p = self.params if params is None else params
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        r = r if isinstance(r, Tensor) else Tensor(np.asarray(r, dtype=z.dtype))
        t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=z.dtype))
        if z.data.ndim != 4 or z.shape[1] != 1:
            raise ValueError(f"decoder input must be (B,1,H,W), got {z.shape}")
        self.eval_count += 1

        emb = self._time_embedding(r, t, p)
        coords = Tensor(_coord_channels(z.shape[0], z.shape[2], z.shape[3], z.dtype))
        h = ad.conv2d(ad.concat([z, coords], axis=1), p["stem.w"], p["stem.b"])
        skips = []
        n_stages = len(self.cfg.mults)
        for s in range(n_stages):
            for b in range(self.cfg.res_blocks):
                h = self._res_block(h, emb, f"down{s}.res{b}", p)
            if s < n_stages - 1:
                skips.append(h)
                h = ad.conv2d(self._pool2(h), p[f"down{s}.pool.w"], p[f"down{s}.pool.b"])
        h = self._res_block(h, emb, "mid", p)
        for s in reversed(range(n_stages - 1)):
            h = ad.conv2d(self._up2(h), p[f"up{s}.conv.w"], p[f"up{s}.conv.b"])
            h = ad.concat([h, skips.pop()], axis=1)
            h = ad.conv2d(h, p[f"up{s}.merge.w"], p[f"up{s}.merge.b"])
            for b in range(self.cfg.res_blocks):
                h = self._res_block(h, emb, f"up{s}.res{b}", p)
        return ad.conv2d(ad.gelu(h), p["head.w"], p["head.b"])

    def predict(self, z: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Inference path: detached parameters, no tape."""
        detached = {k: Tensor(v.data) for k, v in self.params.items()}
        return self.forward(np.asarray(z, dtype=np.float32),
                            np.asarray(r, dtype=np.float32),
                            np.asarray(t, dtype=np.float32), params=detached).data

    # -- average-velocity parameterization ------------------------------------

    # u is formed from a clean-field prediction, u = (z - f)/(t + floor): the
    # 1/t input gain the average velocity carries is analytic instead of
    # learned, which is what makes desk-scale training converge
    T_FLOOR = 0.01

    def velocity(self, z, r, t, params: dict | None = None) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        r = r if isinstance(r, Tensor) else Tensor(np.asarray(r, dtype=z.dtype))
        t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=z.dtype))
        f = self.forward(z, r, t, params=params)
        b = z.shape[0]
        inv = ad.reciprocal(t + np.float32(self.T_FLOOR)).reshape((b, 1, 1, 1))
        return (z - f) * inv

    def predict_velocity(self, z: np.ndarray, r: np.ndarray, t: np.ndarray) -> np.ndarray:
        detached = {k: Tensor(v.data) for k, v in self.params.items()}
        return self.velocity(np.asarray(z, dtype=np.float32),
                             np.asarray(r, dtype=np.float32),
                             np.asarray(t, dtype=np.float32), params=detached).data

    # -- epsilon parameterization (diffusion mode, r pinned to 0) -------------

    def eps_from_clean(self, x_t, alpha_bar, t_norm, params: dict | None = None) -> Tensor:
        """eps_hat = (x_t - sqrt(ab) f) / sqrt(1 - ab), from the same clean-field head."""
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(np.asarray(x_t, dtype=np.float32))
        b = x_t.shape[0]
        t_norm = np.asarray(t_norm, dtype=np.float32)
        f = self.forward(x_t, Tensor(np.zeros(b, dtype=np.float32)), Tensor(t_norm),
                         params=params)
        ab = np.asarray(alpha_bar, dtype=np.float32).reshape(b, 1, 1, 1)
        scale = Tensor(np.sqrt(ab))
        inv = Tensor((1.0 / np.sqrt(1.0 - ab)).astype(np.float32))
        return (x_t - scale * f) * inv

    def predict_eps(self, x_t: np.ndarray, s: int, sched: "DiffusionSchedule") -> np.ndarray:
        detached = {k: Tensor(v.data) for k, v in self.params.items()}
        ab = np.full(x_t.shape[0], sched.alpha_bars[s])
        t_norm = np.full(x_t.shape[0], s / sched.steps, dtype=np.float32)
        return self.eps_from_clean(np.asarray(x_t, dtype=np.float32), ab, t_norm,
                                   params=detached).data


# ---------------------------------------------------------------------------
# interpolant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InterpolantBatch:
    """z = (1-t) x + t eps with conditional velocity v = eps - x, 0 <= r <= t <= 1."""

    x: np.ndarray    # (B,1,H,W) clean fields
    eps: np.ndarray  # (B,1,H,W) standard normal
    t: np.ndarray    # (B,)
    r: np.ndarray    # (B,)
    z: np.ndarray    # (B,1,H,W)
    v: np.ndarray    # (B,1,H,W)

    def __post_init__(self):
        if np.any(self.r < 0) or np.any(self.r > self.t) or np.any(self.t > 1):
            raise ValueError("need 0 <= r <= t <= 1")


def sample_times(batch: int, rng: Rng, interval_frac: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """t ~ U(0,1); with probability interval_frac the interval is [0, t] (the
    slice one-step decoding evaluates), otherwise degenerate (r = t)."""
    t = rng.uniform(batch)
    r = np.where(rng.uniform(batch) < interval_frac, 0.0, t)
    return t, r


def make_interpolant_batch(x: np.ndarray, rng: Rng,
                           t: np.ndarray | None = None,
                           r: np.ndarray | None = None,
                           interval_frac: float = 0.5) -> InterpolantBatch:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[:, None]
    b = x.shape[0]
    eps = rng.normal(x.shape).astype(np.float32)
    if t is None:
        t, r = sample_times(b, rng, interval_frac)
    elif r is None:
        r = t.copy()
    t = np.asarray(t, dtype=np.float32)
    r = np.asarray(r, dtype=np.float32)
    tb = t.reshape(b, 1, 1, 1)
    z = (1.0 - tb) * x + tb * eps
    v = eps - x
    return InterpolantBatch(x=x, eps=eps, t=t, r=r, z=z, v=v)


def make_interpolant(x_field, rng: Rng, t: float | None = None,
                     r: float | None = None) -> InterpolantBatch:
    """Single-sample convenience wrapper around make_interpolant_batch."""
    data = x_field.data if not isinstance(x_field, np.ndarray) and hasattr(x_field, "data") \
        else np.asarray(x_field)
    tt = None if t is None else np.array([t])
    rr = None if r is None else np.array([r])
    return make_interpolant_batch(data[None], rng, t=tt, r=rr)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _time_weight(t: np.ndarray, like: np.ndarray) -> Tensor:
    """Per-sample weight (t + floor) applied to the velocity residual.

    The velocity parameterization carries a 1/(t + floor) input gain, so the
    unweighted residual gives near-zero times a ~1/t^2 loss share and training
    never settles; this weight makes every time contribute a bounded,
    x-prediction-like term. Shared by both losses so the degenerate-interval
    identity stays exact.
    """
    w = (t + DecoderNet.T_FLOOR).reshape(-1, 1, 1, 1).astype(like.dtype)
    return Tensor(w)


ADAPTIVE_C = 1.0


def _weighted_residual_loss(diff: Tensor) -> Tensor:
    """Mean of per-sample squared residuals, each scaled by the (detached)
    factor 1/(residual + c).

    Small residuals train at essentially full strength; samples whose residual
    is dominated by the noisy directional-derivative term get their pull
    bounded, which is what keeps small-batch training from diverging. The
    factor is detached, so gradients keep the plain regression direction.
    """
    per_sample = (diff * diff).mean(axis=tuple(range(1, len(diff.shape))))
    w = ADAPTIVE_C / (per_sample.data + ADAPTIVE_C)
    return (Tensor(w.astype(diff.dtype)) * per_sample).mean()


def _finish_loss(diff: Tensor, batch: InterpolantBatch, weighting: str) -> Tensor:
    if weighting == "desk":
        return _weighted_residual_loss(diff * _time_weight(batch.t, batch.z))
    if weighting == "plain":
        return (diff * diff).mean()
    raise ValueError(f"unknown weighting {weighting!r}")


def cfm_loss(net, batch: InterpolantBatch, weighting: str = "desk") -> Tensor:
    """Conditional velocity matching on the degenerate interval r = t.

    weighting="plain" is the bare mean squared residual; "desk" adds the time
    and residual-suppression factors that small-batch training needs. The same
    factors appear in imf_loss, so the r=t identity holds under either.
    """
    if not np.array_equal(batch.r, batch.t):
        raise ValueError("cfm_loss requires r == t for the whole batch")
    u = net.velocity(batch.z, batch.t, batch.t)
    diff = u - Tensor(batch.v)
    return _finish_loss(diff, batch, weighting)


def imf_loss(net, batch: InterpolantBatch, weighting: str = "desk") -> Tensor:
    """Direct regression of V = u + (t-r) sg(du/dt) onto the conditional velocity.

    du/dt is the exact forward-mode directional derivative of u(z, r, t) along
    (v, 0, 1); the stop-gradient blocks all gradient flow through it.
    """
    b = batch.z.shape[0]
    z = Tensor(batch.z, tangent=batch.v)
    r = Tensor(batch.r, tangent=np.zeros_like(batch.r))
    t = Tensor(batch.t, tangent=np.ones_like(batch.t))
    u = net.velocity(z, r, t)
    du = u.tangent
    if du is None or not np.all(np.isfinite(du)):
        bad = "no tangent" if du is None else \
            f"t={batch.t[~np.isfinite(du).all(axis=(1, 2, 3))]}, r={batch.r[~np.isfinite(du).all(axis=(1, 2, 3))]}"
        raise RuntimeError(f"non-finite directional derivative in imf_loss ({bad})")
    gap = (batch.t - batch.r).reshape(b, 1, 1, 1).astype(batch.z.dtype)
    v_pred = u + Tensor(gap) * ad.stop_gradient(Tensor(du))
    diff = v_pred - Tensor(batch.v)
    return _finish_loss(diff, batch, weighting)


# ---------------------------------------------------------------------------
# diffusion schedule and baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear beta schedule; alpha_bar[0] = 1 by convention, alpha_bar[t] for t in 1..T."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if not (0 < self.beta_start < self.beta_end < 1):
            raise ValueError("need 0 < beta_start < beta_end < 1")

    @property
    def betas(self) -> np.ndarray:
        return np.linspace(self.beta_start, self.beta_end, self.steps)

    @property
    def alpha_bars(self) -> np.ndarray:
        ab = np.empty(self.steps + 1)
        ab[0] = 1.0
        ab[1:] = np.cumprod(1.0 - self.betas)
        return ab


def ddpm_forward(x: np.ndarray, t_diff: int, sched: DiffusionSchedule,
                 rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Exact forward noising x_t = sqrt(ab_t) x + sqrt(1-ab_t) eps."""
    if not 1 <= t_diff <= sched.steps:
        raise ValueError(f"diffusion step {t_diff} outside 1..{sched.steps}")
    x = np.asarray(x, dtype=np.float64)
    ab = sched.alpha_bars[t_diff]
    eps = rng.normal(x.shape)
    return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps, eps


def ddim_step_indices(s0: int, k: int) -> np.ndarray:
    """Strictly increasing 0 = tau_0 < ... < tau_K = s0."""
    if k < 1:
        raise ValueError("DDIM needs at least one step")
    taus = np.unique(np.round(np.linspace(0, s0, k + 1)).astype(int))
    if len(taus) != k + 1:
        raise ValueError(f"cannot place {k} distinct DDIM steps below noise level {s0}")
    return taus


def ddim_refine(eps_fn, z: np.ndarray, s0: int, k: int, sched: DiffusionSchedule,
                rng: Rng) -> np.ndarray:
    """SDEdit-style refinement: noise z to level s0, then K deterministic updates.

    eps_fn(x, s) predicts the injected noise at integer step s; it is called
    exactly K times.
    """
    taus = ddim_step_indices(s0, k)
    ab = sched.alpha_bars
    x, _ = ddpm_forward(z, s0, sched, rng)
    for i in range(len(taus) - 1, 0, -1):
        s, u = taus[i], taus[i - 1]
        eps_hat = eps_fn(x, s)
        x0_hat = (x - np.sqrt(1.0 - ab[s]) * eps_hat) / np.sqrt(ab[s])
        x = np.sqrt(ab[u]) * x0_hat + np.sqrt(1.0 - ab[u]) * eps_hat
    return x


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def encode(self, arr: np.ndarray) -> np.ndarray:
        return (arr - self.mean) / self.std

    def decode(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.std + self.mean

    @classmethod
    def from_data(cls, arr: np.ndarray) -> "NormStats":
        sd = float(np.std(arr))
        if sd == 0:
            sd = 1.0
        return cls(float(np.mean(arr)), sd)


def ddpm_loss(net: DecoderNet, x: np.ndarray, sched: DiffusionSchedule, rng: Rng) -> Tensor:
    """Noise-prediction MSE at uniformly sampled schedule steps (r pinned to 0)."""
    b = x.shape[0]
    t_diff = rng.integers(1, sched.steps + 1, b)
    ab = sched.alpha_bars[t_diff].reshape(b, 1, 1, 1)
    eps = rng.normal(x.shape)
    x_t = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps
    t_norm = (t_diff / sched.steps).astype(np.float32)
    pred = net.eps_from_clean(x_t.astype(np.float32), sched.alpha_bars[t_diff], t_norm)
    diff = pred - Tensor(eps.astype(np.float32))
    return _weighted_residual_loss(diff)


def train_decoder(net: DecoderNet, ds: TrajectorySet | np.ndarray, objective: str,
                  iters: int, lr: float, batch_size: int = 4, seed: int = 0,
                  weight_decay: float = 1e-4,
                  sched: DiffusionSchedule | None = None,
                  stats: NormStats | None = None,
                  clip_norm: float | None = None,
                  cosine_decay: bool = False,
                  interval_frac: float = 0.5,
                  ema_decay: float | None = None) -> tuple[list[float], NormStats]:
    """Adam-train the decoder on i.i.d. frames of a high-resolution dataset.

    Frames are standardized with training-split statistics (stored in the
    checkpoint and reused at decode time). Deterministic under a fixed seed.
    Optional stabilizers for the self-referential objective: global-norm
    gradient clipping, cosine learning-rate decay, and an exponential moving
    average of the weights that is copied into the net at the end (the
    deployed model is the EMA).
    """
    if objective not in ("imf", "ddpm"):
        raise ValueError(f"unknown objective {objective!r}")
    arr = ds.trajectories if isinstance(ds, TrajectorySet) else np.asarray(ds)
    frames = arr.reshape(-1, 1, *arr.shape[-2:]).astype(np.float32)
    if stats is None:
        stats = NormStats.from_data(frames)
    frames = stats.encode(frames)
    if sched is None:
        sched = DiffusionSchedule()
    rng = Rng(seed)
    params = net.param_list()
    state = ad.AdamState.for_params(params, lr=lr, weight_decay=weight_decay)
    ema = [p.data.copy() for p in params] if ema_decay else None
    curve = []
    n = frames.shape[0]
    for it in range(iters):
        if cosine_decay:
            state.lr = lr * 0.5 * (1.0 + math.cos(math.pi * it / iters))
        idx = rng.integers(0, n, batch_size)
        x = frames[idx]
        if objective == "imf":
            batch = make_interpolant_batch(x, rng, interval_frac=interval_frac)
            loss = imf_loss(net, batch)
        else:
            loss = ddpm_loss(net, x, sched, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise RuntimeError(f"decoder training diverged at iteration {it}")
        grads = ad.grad(loss, params)
        if clip_norm:
            grads = clip_global_norm(grads, clip_norm)
        ad.adam_step(state, params, grads)
        if ema is not None:
            for buf, p in zip(ema, params):
                buf *= ema_decay
                buf += (1.0 - ema_decay) * p.data
        curve.append(value)
    if ema is not None:
        for buf, p in zip(ema, params):
            p.data = buf.copy()
    return curve, stats


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def meno_decode(net: DecoderNet, a_lr: np.ndarray, tau: float, rng: Rng,
                stats: NormStats, hr_shape: tuple[int, int],
                literal_displacement: bool = False) -> np.ndarray:
    """One-step refinement of a low-resolution field (exactly one net call).

    Upsample, blend with fresh noise at strength tau, then apply the one-step
    displacement x_hat = z - tau * u(z, 0, tau). The literal_displacement
    switch drops the tau factor (the as-written inference rule; see README).
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    a_lr = np.asarray(a_lr, dtype=np.float64)
    up = upsample_bilinear(a_lr, *hr_shape)
    z = (1.0 - tau) * stats.encode(up) + tau * rng.normal(up.shape)
    u = net.predict_velocity(z[None, None].astype(np.float32),
                             np.zeros(1, dtype=np.float32),
                             np.full(1, tau, dtype=np.float32))[0, 0]
    x_hat = z - (u if literal_displacement else tau * u)
    return stats.decode(x_hat)


def ddim_enhance(net: DecoderNet, a_lr: np.ndarray, noise_level: int, k: int,
                 sched: DiffusionSchedule, rng: Rng, stats: NormStats,
                 hr_shape: tuple[int, int]) -> np.ndarray:
    """Multi-step diffusion refinement of a low-resolution field (K net calls)."""
    if noise_level > sched.steps:
        raise ValueError(f"noise level {noise_level} exceeds schedule length {sched.steps}")
    a_lr = np.asarray(a_lr, dtype=np.float64)
    up = stats.encode(upsample_bilinear(a_lr, *hr_shape))

    def eps_fn(x, s):
        return net.predict_eps(x[None, None], int(s), sched)[0, 0].astype(np.float64)

    out = ddim_refine(eps_fn, up, noise_level, k, sched, rng)
    return stats.decode(out)


def noise_sweep(net: DecoderNet, lr_fields: np.ndarray, hr_fields: np.ndarray,
                taus, rng_seed: int, stats: NormStats) -> list[tuple[float, float]]:
    """Mean relative L2 of one-step decodes against truth, one row per tau.

    Uses ground-truth low-resolution inputs (not operator predictions).
    """
    taus = list(taus)
    if not taus:
        raise ValueError("empty tau grid")
    lr_fields = np.asarray(lr_fields)
    hr_fields = np.asarray(hr_fields)
    if lr_fields.shape[0] != hr_fields.shape[0]:
        raise ValueError("need matching (lr, hr) pairs")
    hr_shape = hr_fields.shape[-2:]
    rows = []
    for tau in taus:
        rng = Rng(rng_seed)
        errs = []
        for i in range(lr_fields.shape[0]):
            dec = meno_decode(net, lr_fields[i], tau, rng, stats, hr_shape)
            truth = hr_fields[i].astype(np.float64)
            errs.append(np.linalg.norm(dec - truth) / np.linalg.norm(truth))
        rows.append((float(tau), float(np.mean(errs))))
    return rows


def best_tau(rows: list[tuple[float, float]]) -> float:
    return min(rows, key=lambda row: row[1])[0]


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_decoder(path, net: DecoderNet, objective: str, stats: NormStats,
                 data_provenance: str, sched: DiffusionSchedule | None = None,
                 extra: dict | None = None) -> None:
    meta = {
        "kind": "decoder",
        "objective": objective,
        "config": asdict(net.cfg),
        "norm_mean": stats.mean,
        "norm_std": stats.std,
        "data_provenance": data_provenance,
    }
    if sched is not None:
        meta["schedule"] = asdict(sched)
    if extra:
        meta.update(extra)
    ad.save_checkpoint(path, net.named_arrays(), meta)


def load_decoder(path) -> tuple[DecoderNet, NormStats, dict]:
    arrays, meta = ad.load_checkpoint(path)
    if meta.get("kind") != "decoder":
        raise ValueError(f"{path} is not a decoder checkpoint")
    cfg_dict = dict(meta["config"])
    cfg_dict["mults"] = tuple(cfg_dict["mults"])
    net = DecoderNet(DecoderConfig(**cfg_dict))
    net.load_arrays(arrays)
    return net, NormStats(meta["norm_mean"], meta["norm_std"]), meta
