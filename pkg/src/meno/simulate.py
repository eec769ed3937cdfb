"""Ground-truth data generation: a semi-implicit spectral Cahn-Hilliard solver
and a pseudo-spectral vorticity solver for 2D Navier-Stokes with sinusoidal
(Kolmogorov) body forcing. Both run on doubly periodic square grids and are
pure functions of (config, seed)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .field import Field, Quantity, Split, TrajectorySet, fft2, ifft2
from .provenance import make_provenance
from .rng import Rng


class SolverBlowupError(RuntimeError):
    pass


class CflViolationError(RuntimeError):
    pass


def _wavenumbers(n: int, domain: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=domain / n)


# ---------------------------------------------------------------------------
# Cahn-Hilliard
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CahnHilliardConfig:
    grid_n: int = 64
    domain_size: float = 1.0
    mobility: float = 1.0
    lam: float = 0.01          # energy-scale coefficient in the chemical potential
    eps_int: float = 0.02      # interface thickness parameter
    dt_solver: float = 1e-4
    frames: int = 25
    frame_interval: int = 100  # solver steps between recorded frames
    noise_amp: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.mobility, self.lam, self.eps_int, self.dt_solver) <= 0:
            raise ValueError("mobility, lam, eps_int and dt_solver must be positive")
        if self.grid_n < 4 or self.frames < 2 or self.frame_interval < 1:
            raise ValueError("bad grid/frame configuration")


class _ChOps:
    """Precomputed spectral symbols for one grid."""

    def __init__(self, cfg: CahnHilliardConfig):
        k = _wavenumbers(cfg.grid_n, cfg.domain_size)
        kx, ky = np.meshgrid(k, k)
        self.ksq = kx ** 2 + ky ** 2
        self.k4 = self.ksq ** 2
        m, lam, eps, dt = cfg.mobility, cfg.lam, cfg.eps_int, cfg.dt_solver
        self.explicit_factor = dt * m * self.ksq
        self.implicit_denom = 1.0 + dt * m * lam * eps * self.k4
        self.nonlin_coef = lam / eps


def ch_step_array(phi: np.ndarray, cfg: CahnHilliardConfig, ops: _ChOps | None = None) -> np.ndarray:
    """One semi-implicit step: explicit double-well term, implicit biharmonic.

    phi_hat' = (phi_hat - dt M k^2 Nhat(phi)) / (1 + dt M lam eps k^4)
    with N(phi) = lam phi (phi^2 - 1) / eps.
    """
    if ops is None:
        ops = _ChOps(cfg)
    nonlin = ops.nonlin_coef * phi * (phi * phi - 1.0)
    phi_hat = fft2(phi)
    n_hat = fft2(nonlin)
    new_hat = (phi_hat - ops.explicit_factor * n_hat) / ops.implicit_denom
    out = np.real(ifft2(new_hat))
    peak = np.abs(out).max()
    if not np.isfinite(peak) or peak > 10.0:
        raise SolverBlowupError(
            f"Cahn-Hilliard blow-up: max|phi| = {peak:.3g}, reduce dt_solver ({cfg.dt_solver})")
    return out


def ch_step(phi: Field, cfg: CahnHilliardConfig) -> Field:
    return Field(ch_step_array(np.asarray(phi.data, dtype=np.float64), cfg),
                 cfg.domain_size, Quantity.ORDER_PARAMETER)


def generate_ch_dataset(cfg: CahnHilliardConfig, runs: int,
                        split: Split = Split.TRAIN) -> TrajectorySet:
    """Batch of phase-separation trajectories from phi = 0 plus seeded noise.

    Run r uses stream seed + r; frames are recorded every frame_interval steps
    (the raw noisy initial condition itself is not a recorded frame).
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    ops = _ChOps(cfg)
    n = cfg.grid_n
    base = Rng(cfg.seed)
    phi = np.empty((runs, n, n))
    for r in range(runs):
        phi[r] = cfg.noise_amp * base.spawn(r).normal((n, n))
    frames = np.empty((runs, cfg.frames, n, n), dtype=np.float32)
    for f in range(cfg.frames):
        for _ in range(cfg.frame_interval):
            try:
                phi = ch_step_array(phi, cfg, ops)
            except SolverBlowupError as exc:
                raise SolverBlowupError(f"run batch aborted at frame {f}: {exc}") from exc
        frames[:, f] = phi.astype(np.float32)
    return TrajectorySet(
        frames,
        dt=cfg.dt_solver * cfg.frame_interval,
        domain_size=cfg.domain_size,
        quantity=Quantity.ORDER_PARAMETER,
        split=split,
        provenance=make_provenance("ch", cfg),
    )


def ch_free_energy_params(cfg: CahnHilliardConfig) -> tuple[float, float]:
    """(lam_fe, eps_fe) so the metrics-module functional is the solver's Lyapunov energy.

    The solver's energy density lam/eps W(phi) + lam eps/2 |grad phi|^2 equals
    the metric form lam_fe/2 |grad|^2 + lam_fe/(4 eps_fe^2) (phi^2-1)^2 with
    lam_fe = lam * eps_int and eps_fe = eps_int.
    """
    return cfg.lam * cfg.eps_int, cfg.eps_int


# ---------------------------------------------------------------------------
# Kolmogorov flow
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KolmogorovConfig:
    grid_n: int = 64
    domain_size: float = 2.0 * np.pi
    viscosity: float = 0.02
    forcing_n: int = 4
    dt_solver: float = 5e-3
    frames: int = 30
    frame_interval: int = 50
    spinup_steps: int = 3000
    init_amp: float = 2.0      # rms vorticity of the random solenoidal IC
    init_peak_k: float = 4.0   # spectral peak of the IC
    seed: int = 0
    advection: bool = True
    forcing: bool = True
    cfl_max: float = 0.8
    blowup_max: float = 1e3

    def __post_init__(self):
        if self.viscosity <= 0 or self.dt_solver <= 0:
            raise ValueError("viscosity and dt_solver must be positive")
        if self.forcing_n < 1 or int(self.forcing_n) != self.forcing_n:
            raise ValueError("forcing_n must be a positive integer")


class _KfOps:
    """Spectral operators for the ETD1 vorticity scheme.

    Diffusion is integrated exactly (integrating factor); the nonlinear term
    and forcing enter through phi1 = (1 - e^{-nu k^2 dt})/(nu k^2), so the
    forced linear problem has the exact steady state and an unforced single
    mode decays by exactly e^{-nu k^2 dt} per step.
    """

    def __init__(self, cfg: KolmogorovConfig):
        n = cfg.grid_n
        k = _wavenumbers(n, cfg.domain_size)
        self.kx, self.ky = np.meshgrid(k, k)
        self.ksq = self.kx ** 2 + self.ky ** 2
        ksq_safe = self.ksq.copy()
        ksq_safe[0, 0] = 1.0
        self.inv_ksq = 1.0 / ksq_safe
        self.inv_ksq[0, 0] = 0.0
        a = cfg.viscosity * self.ksq * cfg.dt_solver
        self.decay = np.exp(-a)
        with np.errstate(divide="ignore", invalid="ignore"):
            self.phi1 = np.where(self.ksq > 0,
                                 (1.0 - self.decay) / (cfg.viscosity * self.ksq),
                                 cfg.dt_solver)
        kmax = np.abs(k).max()
        self.dealias = (np.abs(self.kx) < (2.0 / 3.0) * kmax) & \
                       (np.abs(self.ky) < (2.0 / 3.0) * kmax)
        ys = np.arange(n) * (cfg.domain_size / n)
        # curl of f = (sin(n y), 0) is -n cos(n y)
        curl_f = -cfg.forcing_n * np.cos(cfg.forcing_n * ys)[:, None] * np.ones((1, n))
        self.f_hat = fft2(curl_f) if cfg.forcing else np.zeros((n, n), dtype=complex)
        self.dx = cfg.domain_size / n


def _kf_velocity(omega_hat: np.ndarray, ops: _KfOps) -> tuple[np.ndarray, np.ndarray]:
    psi_hat = omega_hat * ops.inv_ksq
    u = np.real(ifft2(1j * ops.ky * psi_hat))
    v = np.real(ifft2(-1j * ops.kx * psi_hat))
    return u, v


def ns_step_array(omega: np.ndarray, cfg: KolmogorovConfig,
                  ops: _KfOps | None = None) -> np.ndarray:
    if ops is None:
        ops = _KfOps(cfg)
    omega_hat = fft2(omega)
    if cfg.advection:
        u, v = _kf_velocity(omega_hat, ops)
        speed = max(np.abs(u).max(), np.abs(v).max())
        cfl = speed * cfg.dt_solver / ops.dx
        if cfl > cfg.cfl_max:
            raise CflViolationError(
                f"CFL {cfl:.2f} > {cfg.cfl_max} (max speed {speed:.2f}); reduce dt_solver")
        wx = np.real(ifft2(1j * ops.kx * omega_hat))
        wy = np.real(ifft2(1j * ops.ky * omega_hat))
        n_hat = ops.dealias * fft2(-(u * wx + v * wy))
    else:
        n_hat = 0.0
    new_hat = ops.decay * omega_hat + ops.phi1 * (n_hat + ops.f_hat)
    out = np.real(ifft2(new_hat))
    peak = np.abs(out).max()
    if not np.isfinite(peak) or peak > cfg.blowup_max:
        raise SolverBlowupError(f"vorticity blow-up: max|omega| = {peak:.3g}")
    return out


def ns_step(omega: Field, cfg: KolmogorovConfig) -> Field:
    return Field(ns_step_array(np.asarray(omega.data, dtype=np.float64), cfg),
                 cfg.domain_size, Quantity.VORTICITY)


def _kf_initial(cfg: KolmogorovConfig, rng: Rng) -> np.ndarray:
    """Random solenoidal vorticity with a decaying spectrum peaked at init_peak_k."""
    n = cfg.grid_n
    k = _wavenumbers(n, cfg.domain_size)
    kx, ky = np.meshgrid(k, k)
    kmag = np.sqrt(kx ** 2 + ky ** 2)
    amp = kmag * np.exp(-(kmag / cfg.init_peak_k) ** 2)
    phase = fft2(rng.normal((n, n)))
    omega = np.real(ifft2(amp * phase))
    omega -= omega.mean()
    rms = np.sqrt((omega ** 2).mean())
    return omega * (cfg.init_amp / max(rms, 1e-30))


def generate_kf_dataset(cfg: KolmogorovConfig, runs: int,
                        split: Split = Split.TRAIN) -> TrajectorySet:
    """Trajectories of the statistically stationary forced flow.

    Run r draws its initial condition from stream seed + r, evolves through
    spinup_steps discarded steps, then records `frames` snapshots every
    frame_interval steps.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    ops = _KfOps(cfg)
    n = cfg.grid_n
    base = Rng(cfg.seed)
    omega = np.empty((runs, n, n))
    for r in range(runs):
        omega[r] = _kf_initial(cfg, base.spawn(r))
    for _ in range(cfg.spinup_steps):
        omega = ns_step_array(omega, cfg, ops)
    frames = np.empty((runs, cfg.frames, n, n), dtype=np.float32)
    for f in range(cfg.frames):
        for _ in range(cfg.frame_interval):
            omega = ns_step_array(omega, cfg, ops)
        frames[:, f] = omega.astype(np.float32)
    return TrajectorySet(
        frames,
        dt=cfg.dt_solver * cfg.frame_interval,
        domain_size=cfg.domain_size,
        quantity=Quantity.VORTICITY,
        split=split,
        provenance=make_provenance("kf", cfg),
    )


def kf_energy_balance(ts: TrajectorySet, cfg: KolmogorovConfig) -> tuple[float, float]:
    """Time/batch-averaged energy injection <u_x sin(n y)> and dissipation nu <omega^2>."""
    ops = _KfOps(cfg)
    n = cfg.grid_n
    ys = np.arange(n) * (cfg.domain_size / n)
    fx = np.sin(cfg.forcing_n * ys)[:, None]
    omega = ts.trajectories.astype(np.float64)
    omega_hat = fft2(omega)
    u, _ = _kf_velocity(omega_hat, ops)
    injection = float((u * fx).mean())
    dissipation = float(cfg.viscosity * (omega ** 2).mean())
    return injection, dissipation


def kf_divergence_max(ts: TrajectorySet, cfg: KolmogorovConfig) -> float:
    """Max |div u| of the streamfunction-derived velocity (structurally ~0)."""
    ops = _KfOps(cfg)
    omega_hat = fft2(ts.trajectories.astype(np.float64))
    u, v = _kf_velocity(omega_hat, ops)
    div = np.real(ifft2(1j * ops.kx * fft2(u) + 1j * ops.ky * fft2(v)))
    scale = max(np.abs(u).max(), np.abs(v).max(), 1.0)
    return float(np.abs(div).max() / scale)


def laminar_steady_vorticity(cfg: KolmogorovConfig) -> np.ndarray:
    """Analytic low-Re steady state: omega = -cos(n y)/(nu n)."""
    n = cfg.grid_n
    ys = np.arange(n) * (cfg.domain_size / n)
    return (-np.cos(cfg.forcing_n * ys) / (cfg.viscosity * cfg.forcing_n))[:, None] * np.ones((1, n))


def with_seed(cfg, seed: int):
    return replace(cfg, seed=seed)
