"""Units, parameters, grids, absorptive potentials and initial states.

Everything downstream works in dimensionless units: position ``xi = k x``,
time ``tau = omega_r t`` and a single absorption coupling
``s = Omega0**2 / (2 omega_r Gamma)``.  In these units the metastable-state
amplitude obeys::

    i d(phi)/d(tau) = -d2(phi)/d(xi)2 - i V(xi) phi,     V(xi) = s sin(xi)**2

and the quadratic node approximation is ``V = s xi**2``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Union

import numpy as np
from scipy import constants

from chisel.errors import ConfigurationError, ParameterError, ShapeError

#: Minimum number of grid points per stationary packet width.
POINTS_PER_WIDTH = 8


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicalParams:
    """Laboratory constants of the atom-light system.

    ``rabi_frequency`` is Omega0 in units of the linewidth; all rates are in
    rad/s, the wavenumber in 1/m and velocities in m/s.
    """

    rabi_frequency: float
    linewidth: float
    recoil_frequency: float
    wavenumber: float
    longitudinal_velocity: float = 50.0
    dv_l: float = 0.0
    dv_t: float = 0.0

    def __post_init__(self):
        for name in ("rabi_frequency", "linewidth", "recoil_frequency", "wavenumber",
                     "longitudinal_velocity"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ParameterError(f"{name} must be positive, got {value!r}")
        if self.dv_l < 0 or self.dv_t < 0:
            raise ParameterError("velocity spreads must be non-negative")
        if self.recoil_frequency / self.linewidth > 0.1:
            warnings.warn(
                f"omega_r/Gamma = {self.recoil_frequency / self.linewidth:.3g} is not small; "
                "the absorptive (adiabatic) picture is questionable",
                stacklevel=2,
            )

    @classmethod
    def from_species(cls, rabi_frequency: float, path=None, **overrides) -> "PhysicalParams":
        """Build parameters from a species file (default: bundled metastable argon)."""
        data = load_species(path)
        k = 2 * math.pi / (data["wavelength_nm"] * 1e-9)
        mass = data["mass_amu"] * constants.atomic_mass
        values = dict(
            rabi_frequency=rabi_frequency,
            linewidth=data["linewidth_per_s"],
            recoil_frequency=constants.hbar * k**2 / (2 * mass),
            wavenumber=k,
            longitudinal_velocity=data["longitudinal_velocity_m_s"],
            dv_l=data["dv_l_fwhm_m_s"],
            dv_t=data["dv_t_fwhm_m_s"],
        )
        values.update(overrides)
        return cls(**values)

    @property
    def omega_r_over_gamma(self) -> float:
        return self.recoil_frequency / self.linewidth

    def tau_from_dz(self, dz_um, velocity: float | None = None):
        """Dimensionless interaction time for an interaction length in micrometres."""
        v = self.longitudinal_velocity if velocity is None else velocity
        return self.recoil_frequency * np.asarray(dz_um, dtype=float) * 1e-6 / v

    def dz_from_tau(self, tau, velocity: float | None = None):
        v = self.longitudinal_velocity if velocity is None else velocity
        return np.asarray(tau, dtype=float) * v / self.recoil_frequency * 1e6

    def kappa_from_transverse_velocity(self, v_t):
        """Transverse momentum M v_t in units of hbar k."""
        return np.asarray(v_t, dtype=float) * self.wavenumber / (2 * self.recoil_frequency)


def load_species(path=None) -> dict:
    if path is None:
        text = resources.files("chisel.data").joinpath("argon.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


@dataclass(frozen=True)
class DimensionlessParams:
    """The single absorption coupling ``s``; ``omega0_bar = omega0/omega_r = 2 sqrt(s)``."""

    s: float

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise ParameterError(f"absorption strength s must be positive, got {self.s!r}")

    @property
    def omega0_bar(self) -> float:
        return 2.0 * math.sqrt(self.s)

    @classmethod
    def from_ratios(cls, omega0_over_gamma: float, omega_r_over_gamma: float) -> "DimensionlessParams":
        if omega0_over_gamma <= 0 or omega_r_over_gamma <= 0:
            raise ParameterError("Omega0/Gamma and omega_r/Gamma must be positive")
        return cls(omega0_over_gamma**2 / (2.0 * omega_r_over_gamma))


def reduce_params(p: PhysicalParams) -> DimensionlessParams:
    """Collapse the laboratory constants onto ``s = Omega0**2/(2 omega_r Gamma)``."""
    omega0 = p.rabi_frequency * p.linewidth
    return DimensionlessParams(omega0**2 / (2.0 * p.recoil_frequency * p.linewidth))


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Periodic lattice of ``periods`` standing-wave periods (length pi each in xi)."""

    periods: int
    points_per_period: int

    def __post_init__(self):
        if self.periods < 1:
            raise ConfigurationError("need at least one period")
        if self.points_per_period < 8:
            raise ConfigurationError("need at least 8 points per period")
        n = self.periods * self.points_per_period
        if n & (n - 1):
            raise ConfigurationError(
                f"total point count {self.periods}*{self.points_per_period}={n} is not a power of two"
            )

    @property
    def size(self) -> int:
        return self.periods * self.points_per_period

    @property
    def length(self) -> float:
        return self.periods * math.pi

    @property
    def dxi(self) -> float:
        return math.pi / self.points_per_period

    @cached_property
    def xi_over_pi(self) -> np.ndarray:
        # exact for power-of-two point counts, so node positions are exact
        j = np.arange(self.size)
        return -self.periods / 2 + j / self.points_per_period

    @cached_property
    def xi(self) -> np.ndarray:
        return math.pi * self.xi_over_pi

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Signed integer m of each spectral bin in FFT order (kappa = 2 m / periods)."""
        return np.rint(np.fft.fftfreq(self.size, d=1.0 / self.size)).astype(int)

    @cached_property
    def kappa(self) -> np.ndarray:
        return 2.0 * self.mode_index / self.periods

    @property
    def dkappa(self) -> float:
        return 2.0 / self.periods

    @property
    def kappa_max(self) -> float:
        return float(np.max(np.abs(self.kappa)))

    def order_bin(self, n: int) -> int:
        """FFT bin index holding momentum kappa = 2 n."""
        if abs(n) * self.periods > self.size // 2 - 1 and n != 0:
            raise ConfigurationError(f"order {n} is beyond the grid's momentum range")
        return (n * self.periods) % self.size


def make_grid(periods: int, points_per_period: int) -> Grid:
    return Grid(int(periods), int(points_per_period))


def check_resolution(grid: Grid, width: float | None) -> None:
    """Reject grids that cannot resolve a packet of the given stationary width."""
    if width is None:
        return
    if width < POINTS_PER_WIDTH * grid.dxi:
        raise ConfigurationError(
            f"stationary width {width:.4g} is below {POINTS_PER_WIDTH} grid spacings "
            f"(dxi = {grid.dxi:.4g}); increase points_per_period"
        )


def spectral_transform(amplitudes: np.ndarray, grid: Grid) -> np.ndarray:
    """Unitary transform to momentum amplitudes, phases referenced to xi = 0.

    ``a_m = L**-0.5 * sum_j psi_j exp(-i kappa_m xi_j) dxi`` in FFT order, so that
    ``sum |a_m|**2 == dxi * sum |psi_j|**2``.
    """
    sign = np.where(grid.mode_index % 2, -1.0, 1.0)
    return np.fft.fft(amplitudes) * (grid.dxi / math.sqrt(grid.length)) * sign


def inverse_spectral_transform(coefficients: np.ndarray, grid: Grid) -> np.ndarray:
    sign = np.where(grid.mode_index % 2, -1.0, 1.0)
    return np.fft.ifft(coefficients * sign) * (math.sqrt(grid.length) / grid.dxi)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticImaginary:
    """``V = s xi**2``: the node expansion of the standing wave."""

    s: float

    def __post_init__(self):
        if self.s < 0:
            raise ParameterError("absorption strength must be non-negative")

    def sample(self, grid: Grid) -> np.ndarray:
        return self.s * grid.xi**2

    def stationary_width(self) -> float | None:
        return 2**0.25 * self.s**-0.25 if self.s > 0 else None


@dataclass(frozen=True)
class SinusoidalImaginary:
    """``V = s sin(xi)**2``: resonant standing wave, nodes at multiples of pi."""

    s: float

    def __post_init__(self):
        if self.s < 0:
            raise ParameterError("absorption strength must be non-negative")

    def sample(self, grid: Grid) -> np.ndarray:
        u = grid.xi_over_pi
        return self.s * np.sin(math.pi * (u - np.rint(u))) ** 2

    def stationary_width(self) -> float | None:
        return 2**0.25 * self.s**-0.25 if self.s > 0 else None


@dataclass(frozen=True)
class PowerLaw:
    """``V = 2 s (q xi / k)**(2 n)`` with ``s = Omega0**2/(2 Gamma omega_r)``.

    ``cap_widths`` optionally saturates V at its value ``cap_widths``
    stationary widths from the centre.  Far outside the packet the potential
    only has to absorb; capping it keeps the step guard affordable for
    steep wells without touching the region the packet occupies.
    """

    n: int
    q_over_k: float
    s: float
    cap_widths: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("power-law index n must be >= 1")
        if self.q_over_k <= 0 or self.s < 0:
            raise ParameterError("q/k must be positive and s non-negative")
        if self.cap_widths is not None and not self.cap_widths > 0:
            raise ParameterError("cap_widths must be positive")

    @property
    def coefficient(self) -> float:
        return 2.0 * self.s * self.q_over_k ** (2 * self.n)

    def sample(self, grid: Grid) -> np.ndarray:
        v = self.coefficient * grid.xi ** (2 * self.n)
        if self.cap_widths is not None and self.s > 0:
            v = np.minimum(v, self.coefficient * (self.cap_widths * self.stationary_width()) ** (2 * self.n))
        return v

    def stationary_width(self) -> float | None:
        # balance of kinetic 1/w**2 against c w**(2n)
        if self.s == 0:
            return None
        return self.coefficient ** (-1.0 / (2 * self.n + 2))


@dataclass(frozen=True)
class CustomPotential:
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.samples, dtype=float)
        if values.ndim != 1:
            raise ShapeError("custom potential must be one-dimensional")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ParameterError("custom potential must be finite and non-negative")
        object.__setattr__(self, "samples", values)

    def sample(self, grid: Grid) -> np.ndarray:
        if self.samples.shape != (grid.size,):
            raise ShapeError(f"custom potential has {self.samples.size} samples, grid has {grid.size}")
        return self.samples.copy()

    def stationary_width(self) -> float | None:
        return None


PotentialSpec = Union[QuadraticImaginary, SinusoidalImaginary, PowerLaw, CustomPotential]


def sample_potential(spec: PotentialSpec, grid: Grid) -> np.ndarray:
    return spec.sample(grid)


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WaveState:
    """Sampled metastable amplitude.

    ``amplitudes`` hold the lattice-periodic part ``u`` of a Bloch state
    ``exp(i q xi) u(xi)``; for ``quasimomentum = 0`` this is the wavefunction
    itself.  ``log_scale`` is the log of the density factor removed by
    renormalisation, so ``survival = norm * exp(log_scale)``.
    """

    amplitudes: np.ndarray = field(repr=False)
    grid: Grid
    tau: float = 0.0
    log_scale: float = 0.0
    quasimomentum: float = 0.0

    def __post_init__(self):
        psi = np.array(self.amplitudes, dtype=complex)
        if psi.shape != (self.grid.size,):
            raise ShapeError(f"state has shape {psi.shape}, grid has {self.grid.size} points")
        if not np.all(np.isfinite(psi)):
            raise ParameterError("state amplitudes must be finite")
        psi.setflags(write=False)
        object.__setattr__(self, "amplitudes", psi)

    @property
    def norm(self) -> float:
        return float(self.grid.dxi * np.sum(np.abs(self.amplitudes) ** 2))

    @property
    def log_survival(self) -> float:
        return math.log(self.norm) + self.log_scale

    @property
    def survival(self) -> float:
        return math.exp(self.log_survival)

    def full_amplitudes(self) -> np.ndarray:
        """Wavefunction including the Bloch phase ``exp(i q xi)``."""
        if self.quasimomentum == 0:
            return self.amplitudes.copy()
        return self.amplitudes * np.exp(1j * self.quasimomentum * self.grid.xi)

    def replace(self, **changes) -> "WaveState":
        values = dict(amplitudes=self.amplitudes, grid=self.grid, tau=self.tau,
                      log_scale=self.log_scale, quasimomentum=self.quasimomentum)
        values.update(changes)
        return WaveState(**values)


def on_comb(kappa0: float, grid: Grid, atol: float = 1e-9) -> bool:
    m = kappa0 / grid.dkappa
    return abs(m - round(m)) < atol


def make_initial_state(grid: Grid, kind: str = "uniform", kappa0: float = 0.0,
                       samples=None, quasimomentum: float = 0.0) -> WaveState:
    """Unit-norm initial state: ``uniform``, ``plane_wave`` (on-comb kappa0) or ``custom``."""
    if kind == "uniform":
        psi = np.ones(grid.size, dtype=complex)
    elif kind == "plane_wave":
        if not on_comb(kappa0, grid):
            raise ConfigurationError(
                f"kappa0={kappa0} is not on the momentum comb (spacing {grid.dkappa}); "
                "use quasimomentum for off-comb incidence"
            )
        m = round(kappa0 / grid.dkappa)
        # integer arithmetic keeps exp(i kappa0 xi) exact on the comb
        phase = (m * np.arange(grid.size)) % grid.size / grid.size
        psi = np.exp(2j * math.pi * phase) * np.exp(1j * kappa0 * grid.xi[0])
    elif kind == "custom":
        if samples is None:
            raise ConfigurationError("custom initial state needs samples")
        psi = np.asarray(samples, dtype=complex)
        if psi.shape != (grid.size,):
            raise ShapeError(f"custom state has {psi.size} samples, grid has {grid.size}")
    else:
        raise ConfigurationError(f"unknown initial state kind {kind!r}")
    norm = grid.dxi * np.sum(np.abs(psi) ** 2)
    if not norm > 0:
        raise ParameterError("initial state has zero norm")
    return WaveState(psi / math.sqrt(norm), grid, quasimomentum=float(quasimomentum))
