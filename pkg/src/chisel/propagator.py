"""Time evolution of ``i d(phi)/d(tau) = [-d2/dxi2 - i V] phi``.

Strang splitting with the potential half-steps outside::

    exp(-V dtau/2) . F^-1 exp(-i (kappa+q)**2 dtau) F . exp(-V dtau/2)

The scheme is exact when either the kinetic or the absorptive term vanishes
and second order otherwise.  Also here: the open two-level model the
absorptive potential derives from, and the Raman-Nath (kinetic-free) limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from chisel.core import Grid, WaveState, check_resolution
from chisel.errors import ConfigurationError, NumericalError, ParameterError

#: dtau * max(V) must stay below this.
POTENTIAL_STEP_GUARD = 0.1
#: dtau * kappa_max**2 must stay below this.
KINETIC_STEP_GUARD = 0.5
#: dtau * Gamma/omega_r must stay below this in the two-level model.
STIFFNESS_GUARD = 0.2


@dataclass(frozen=True)
class EvolveConfig:
    dtau: float
    tau_final: float
    observer_stride: int = 0
    renormalize: bool = False

    def __post_init__(self):
        if not self.dtau > 0:
            raise ConfigurationError("dtau must be positive")
        if self.tau_final < 0:
            raise ConfigurationError("tau_final must be non-negative")
        if self.observer_stride < 0:
            raise ConfigurationError("observer_stride must be non-negative")


@dataclass
class Trajectory:
    snapshots: list[WaveState]
    final: WaveState


def _potential_field(V, grid: Grid) -> tuple[np.ndarray, float | None]:
    """Accept a potential object or a sampled field; also return its stationary width if known."""
    if hasattr(V, "sample"):
        return V.sample(grid), V.stationary_width()
    field_ = np.asarray(V, dtype=float)
    if field_.shape != (grid.size,):
        raise ConfigurationError(f"potential has shape {field_.shape}, grid has {grid.size} points")
    return field_, None


def check_step(V: np.ndarray, grid: Grid, dtau: float, quasimomentum: float = 0.0) -> None:
    vmax = float(np.max(V)) if V.size else 0.0
    if np.any(V < 0):
        raise ParameterError("potential must be non-negative (absorption only)")
    if dtau * vmax >= POTENTIAL_STEP_GUARD:
        raise ConfigurationError(
            f"dtau*max(V) = {dtau * vmax:.3g} violates the potential-step guard {POTENTIAL_STEP_GUARD}"
        )
    kmax = grid.kappa_max + abs(quasimomentum)
    if dtau * kmax**2 >= KINETIC_STEP_GUARD:
        raise ConfigurationError(
            f"dtau*kappa_max^2 = {dtau * kmax**2:.3g} violates the kinetic-phase guard {KINETIC_STEP_GUARD}"
        )


def auto_dtau(V, grid: Grid, quasimomentum: float = 0.0, safety: float = 0.5) -> float:
    """Largest step satisfying both guards, times ``safety``."""
    field_, _ = _potential_field(V, grid)
    vmax = max(float(np.max(field_)), 1e-300)
    kmax = grid.kappa_max + abs(quasimomentum)
    return safety * min(POTENTIAL_STEP_GUARD / vmax, KINETIC_STEP_GUARD / kmax**2)


class SplitStepper:
    """Precomputed Strang step for one grid, potential, step size and quasimomentum."""

    def __init__(self, grid: Grid, V: np.ndarray, dtau: float, quasimomentum: float = 0.0,
                 check: bool = True):
        if check:
            check_step(V, grid, dtau, quasimomentum)
        self.grid = grid
        self.dtau = dtau
        self.half_potential = np.exp(-0.5 * dtau * V)
        self.kinetic = np.exp(-1j * dtau * (grid.kappa + quasimomentum) ** 2)

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        psi = self.half_potential * psi
        psi = np.fft.ifft(self.kinetic * np.fft.fft(psi))
        return self.half_potential * psi


def split_step(state: WaveState, V, dtau: float) -> WaveState:
    """One Strang step of size ``dtau``."""
    field_, _ = _potential_field(V, state.grid)
    stepper = SplitStepper(state.grid, field_, dtau, state.quasimomentum)
    psi = stepper(state.amplitudes)
    if not np.all(np.isfinite(psi)):
        raise NumericalError("non-finite amplitudes after step 1")
    return state.replace(amplitudes=psi, tau=state.tau + dtau)


def _run(stepper: SplitStepper, psi: np.ndarray, n_steps: int, renormalize: bool,
         log_scale: float, step_offset: int = 0, on_step=None):
    dxi = stepper.grid.dxi
    for i in range(n_steps):
        psi = stepper(psi)
        if renormalize:
            norm = dxi * np.vdot(psi, psi).real
            if not (np.isfinite(norm) and norm > 0):
                raise NumericalError(f"numerical blowup at step {step_offset + i + 1}")
            psi = psi / math.sqrt(norm)
            log_scale += math.log(norm)
        elif not np.isfinite(psi[0]) or (i % 64 == 63 and not np.all(np.isfinite(psi))):
            raise NumericalError(f"numerical blowup at step {step_offset + i + 1}")
        if on_step is not None:
            on_step(step_offset + i + 1, psi, log_scale)
    if not np.all(np.isfinite(psi)):
        raise NumericalError(f"numerical blowup by step {step_offset + n_steps}")
    return psi, log_scale


def _steps_for(duration: float, dtau: float) -> tuple[int, float]:
    """Step count and (slightly reduced) step size landing exactly on ``duration``."""
    if duration <= 0:
        return 0, dtau
    n = max(1, math.ceil(duration / dtau - 1e-9))
    return n, duration / n


def evolve(initial: WaveState, V, cfg: EvolveConfig) -> Trajectory:
    """Propagate to ``cfg.tau_final`` with snapshots every ``observer_stride`` steps."""
    grid = initial.grid
    field_, width = _potential_field(V, grid)
    check_resolution(grid, width)
    n_steps, dtau = _steps_for(cfg.tau_final, cfg.dtau)
    if n_steps == 0:
        return Trajectory([initial], initial)
    stepper = SplitStepper(grid, field_, dtau, initial.quasimomentum)
    snapshots = [initial]
    tau0 = initial.tau

    def observe(i, psi, log_scale):
        if i % cfg.observer_stride == 0 and i != n_steps:
            snapshots.append(initial.replace(amplitudes=psi, tau=tau0 + i * dtau, log_scale=log_scale))

    psi, log_scale = _run(stepper, initial.amplitudes, n_steps, cfg.renormalize,
                          initial.log_scale, on_step=observe if cfg.observer_stride else None)
    final = initial.replace(amplitudes=psi, tau=tau0 + cfg.tau_final, log_scale=log_scale)
    snapshots.append(final)
    return Trajectory(snapshots, final)


def evolve_to_times(initial: WaveState, V, taus, dtau: float, renormalize: bool = False) -> list[WaveState]:
    """States at each of the (non-decreasing) times ``taus``, using steps no larger than ``dtau``.

    Each interval between requested times gets its own equal sub-steps so that
    every requested time is hit exactly.
    """
    grid = initial.grid
    field_, width = _potential_field(V, grid)
    check_resolution(grid, width)
    check_step(field_, grid, dtau, initial.quasimomentum)
    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) < 0) or (taus.size and taus[0] < initial.tau):
        raise ConfigurationError("requested times must be non-decreasing and not before the initial time")
    out = []
    psi, log_scale, tau = initial.amplitudes, initial.log_scale, initial.tau
    steppers: dict[float, SplitStepper] = {}
    done = 0
    for target in taus:
        n, h = _steps_for(target - tau, dtau)
        if n:
            stepper = steppers.get(h)
            if stepper is None:
                stepper = steppers.setdefault(h, SplitStepper(grid, field_, h, initial.quasimomentum, check=False))
            psi, log_scale = _run(stepper, psi, n, renormalize, log_scale, step_offset=done)
            done += n
        tau = float(target)
        out.append(initial.replace(amplitudes=psi, tau=tau, log_scale=log_scale))
    return out


def raman_nath_evolve(initial: WaveState, V, tau: float) -> WaveState:
    """Kinetic-free evolution: pure local attenuation ``exp(-V tau)``."""
    field_, _ = _potential_field(V, initial.grid)
    return initial.replace(amplitudes=initial.amplitudes * np.exp(-field_ * tau), tau=initial.tau + tau)


def survival(state: WaveState) -> float:
    return state.survival


# ---------------------------------------------------------------------------
# open two-level model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoLevelState:
    ground: np.ndarray = field(repr=False)
    excited: np.ndarray = field(repr=False)
    grid: Grid
    tau: float = 0.0

    def __post_init__(self):
        for name in ("ground", "excited"):
            arr = np.array(getattr(self, name), dtype=complex)
            if arr.shape != (self.grid.size,):
                raise ConfigurationError(f"{name} amplitudes do not match the grid")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_ground(cls, state: WaveState) -> "TwoLevelState":
        return cls(state.amplitudes, np.zeros_like(state.amplitudes), state.grid, state.tau)

    @property
    def ground_norm(self) -> float:
        return float(self.grid.dxi * np.sum(np.abs(self.ground) ** 2))

    @property
    def excited_norm(self) -> float:
        return float(self.grid.dxi * np.sum(np.abs(self.excited) ** 2))

    @property
    def norm(self) -> float:
        return self.ground_norm + self.excited_norm

    def ground_state(self) -> WaveState:
        return WaveState(self.ground, self.grid, self.tau)


def _local_two_level_propagator(coupling: np.ndarray, gamma_half: float, dtau: float):
    """Entries of ``exp(-i A dtau)`` with ``A = [[0, c], [c, -i g]]`` per grid point.

    Shifting by ``-i g/2`` leaves ``B = [[i g/2, c], [c, -i g/2]]`` with
    ``B**2 = w**2`` and ``w**2 = c**2 - g**2/4``, so
    ``exp(-i B h) = cos(w h) - i h sinc(w h) B``; both are even in ``w``.
    """
    w = np.sqrt((coupling**2 - 0.25 * gamma_half**2).astype(complex))
    wh = w * dtau
    cos = np.cos(wh)
    small = np.abs(wh) < 1e-8
    safe = np.where(small, 1.0, wh)
    sinc = np.where(small, 1.0 - wh**2 / 6.0, np.sin(safe) / safe)
    pref = np.exp(-0.5 * gamma_half * dtau)
    b11 = 0.5j * gamma_half
    u_gg = pref * (cos - 1j * dtau * sinc * b11)
    u_ee = pref * (cos + 1j * dtau * sinc * b11)
    u_ge = pref * (-1j * dtau * sinc * coupling)
    return u_gg, u_ge, u_ee


@dataclass
class TwoLevelTrajectory:
    snapshots: list[TwoLevelState]
    final: TwoLevelState


def evolve_two_level(initial: TwoLevelState, omega0_over_gamma: float, gamma_over_omega_r: float,
                     cfg: EvolveConfig, kinetic: bool = True) -> TwoLevelTrajectory:
    """Resonant open two-level atom in a standing wave.

    Integrates::

        i dg/dtau = -g'' + (W/2) sin(xi) e
        i de/dtau = -e'' + (W/2) sin(xi) g - i (G/2) e

    with ``W = Omega0/omega_r`` and ``G = Gamma/omega_r``; the excited level
    decays out of the system.  Adiabatic elimination of ``e`` gives the
    absorptive potential ``s sin(xi)**2`` with ``s = W**2/(2 G)``.
    """
    if gamma_over_omega_r < 10:
        raise ConfigurationError("two-level model needs Gamma/omega_r >= 10")
    if omega0_over_gamma < 0:
        raise ParameterError("Omega0/Gamma must be non-negative")
    grid = initial.grid
    gamma_bar = gamma_over_omega_r
    omega_bar = omega0_over_gamma * gamma_over_omega_r
    n_steps, dtau = _steps_for(cfg.tau_final, cfg.dtau)
    if cfg.dtau * gamma_bar >= STIFFNESS_GUARD:
        raise ConfigurationError(
            f"dtau*Gamma/omega_r = {cfg.dtau * gamma_bar:.3g} violates the stiffness guard {STIFFNESS_GUARD}"
        )
    if kinetic and cfg.dtau * grid.kappa_max**2 >= KINETIC_STEP_GUARD:
        raise ConfigurationError("dtau violates the kinetic-phase guard")
    u = grid.xi_over_pi
    sin_xi = np.sin(math.pi * (u - np.rint(u))) * np.where(np.rint(u) % 2, -1.0, 1.0)
    coupling = 0.5 * omega_bar * sin_xi
    u_gg, u_ge, u_ee = _local_two_level_propagator(coupling, 0.5 * gamma_bar, 0.5 * dtau)
    kin = np.exp(-1j * dtau * grid.kappa**2)

    g, e = initial.ground.copy(), initial.excited.copy()
    snapshots = [initial]
    for i in range(n_steps):
        g, e = u_gg * g + u_ge * e, u_ge * g + u_ee * e
        if kinetic:
            g = np.fft.ifft(kin * np.fft.fft(g))
            e = np.fft.ifft(kin * np.fft.fft(e))
        g, e = u_gg * g + u_ge * e, u_ge * g + u_ee * e
        if not (np.isfinite(g[0]) and np.isfinite(e[0])):
            raise NumericalError(f"numerical blowup at step {i + 1}")
        if cfg.observer_stride and (i + 1) % cfg.observer_stride == 0 and i + 1 != n_steps:
            snapshots.append(TwoLevelState(g, e, grid, initial.tau + (i + 1) * dtau))
    final = TwoLevelState(g, e, grid, initial.tau + cfg.tau_final)
    if n_steps:
        snapshots.append(final)
    return TwoLevelTrajectory(snapshots, final)
