"""Momentum spectra, diffraction orders, thin-probe interferometry and fringe fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import jv

from chisel.core import Grid, WaveState, inverse_spectral_transform, spectral_transform
from chisel.errors import ConfigurationError, NoFringeError, ParameterError

#: Fraction of the norm allowed outside the order bins before warning.
LEAKAGE_THRESHOLD = 1e-10


@dataclass(frozen=True, eq=False)
class MomentumSpectrum:
    kappa: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)
    rms_width: float

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def momentum_spectrum(state: WaveState) -> MomentumSpectrum:
    """Unitary transform of the state; ``kappa`` includes the quasimomentum."""
    amps = spectral_transform(state.amplitudes, state.grid)
    kappa = state.grid.kappa + state.quasimomentum
    w = np.abs(amps) ** 2
    total = w.sum()
    if total > 0:
        mean = np.sum(w * kappa) / total
        width = math.sqrt(np.sum(w * (kappa - mean) ** 2) / total)
    else:
        width = 0.0
    return MomentumSpectrum(kappa, amps, width)


@dataclass(frozen=True, eq=False)
class DiffractionTable:
    """Orders ``-n_max..n_max`` with complex amplitudes and efficiencies.

    ``mode`` is ``"normalized"`` (efficiencies sum to one over the reported
    orders), ``"survival"`` (fractions of the surviving flux) or ``"raw"``
    (fractions of the incident flux).
    """

    orders: np.ndarray
    amplitudes: np.ndarray = field(repr=False)
    efficiencies: np.ndarray
    mode: str

    def amplitude(self, n: int) -> complex:
        return complex(self.amplitudes[self._index(n)])

    def efficiency(self, n: int) -> float:
        return float(self.efficiencies[self._index(n)])

    def _index(self, n: int) -> int:
        n_max = (len(self.orders) - 1) // 2
        if abs(n) > n_max:
            raise ConfigurationError(f"order {n} not in table (n_max={n_max})")
        return n + n_max


_MODES = ("normalized", "survival", "raw")


def diffraction_amplitudes(state: WaveState, n_max: int, mode: str = "normalized",
                           windows: bool = False) -> DiffractionTable:
    """Read diffraction orders at ``kappa = 2n`` (plus any quasimomentum).

    With ``windows=True`` the efficiency of order ``n`` integrates the spectrum
    over the band ``[2n - 1, 2n + 1)`` around it instead of the single bin.
    """
    if mode not in _MODES:
        raise ConfigurationError(f"unknown normalisation mode {mode!r}")
    grid = state.grid
    amps = spectral_transform(state.amplitudes, grid)
    weights = np.abs(amps) ** 2
    orders = np.arange(-n_max, n_max + 1)
    bins = np.array([grid.order_bin(int(n)) for n in orders])
    a = amps[bins]
    if windows:
        # window n collects absolute momenta in [2n - 1, 2n + 1)
        label = np.floor((grid.kappa + state.quasimomentum + 1.0) / 2.0).astype(int)
        eta = np.array([weights[label == n].sum() for n in orders])
    else:
        eta = weights[bins]
    total = weights.sum()
    if total > 0:
        on_comb = weights[grid.mode_index % grid.periods == 0].sum()
        leak = 1.0 - on_comb / total
        if leak > LEAKAGE_THRESHOLD and not windows:
            warnings.warn(
                f"{leak:.2e} of the norm lies between diffraction orders; the state is not "
                "lattice periodic (nonzero quasimomentum or broken periodicity?)",
                stacklevel=2,
            )
    if mode == "normalized":
        eta = eta / eta.sum()
    elif mode == "survival":
        eta = eta / total
    else:
        eta = eta * math.exp(state.log_scale)
    return DiffractionTable(orders, a, eta, mode)


# ---------------------------------------------------------------------------
# thin probe grating
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    """Thin standing-wave probe with transmission ``exp(i eta_c (1 + cos(2 xi - phi_s)))``.

    The phase/absorption follows the probe intensity, which never goes
    negative, so ``|t| <= 1`` whenever ``Im(eta_c) >= 0``.  ``j_max``
    truncates the transmission to its harmonics ``|j| <= j_max``.
    """

    eta_c: complex
    phi_s: float = 0.0
    j_max: int | None = None

    def __post_init__(self):
        if complex(self.eta_c).imag < 0:
            raise ParameterError("Im(eta_c) must be >= 0: an absorptive probe cannot amplify")
        if self.j_max is not None and self.j_max < 0:
            raise ParameterError("j_max must be non-negative")

    def with_phase(self, phi_s: float) -> "ProbeSpec":
        return ProbeSpec(self.eta_c, phi_s, self.j_max)

    def coefficients(self, j) -> np.ndarray:
        """Fourier coefficients ``g_j`` with ``t = sum_j g_j exp(2 i j xi)``."""
        j = np.asarray(j)
        eta = complex(self.eta_c)
        g = np.exp(1j * eta) * (1j) ** j * jv(j, eta) * np.exp(-1j * j * self.phi_s)
        if self.j_max is not None:
            g = np.where(np.abs(j) <= self.j_max, g, 0.0)
        return g

    def transmission(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        eta = complex(self.eta_c)
        if self.j_max is None:
            return np.exp(1j * eta * (1.0 + np.cos(2.0 * xi - self.phi_s)))
        j = np.arange(-self.j_max, self.j_max + 1)
        return np.exp(2j * np.multiply.outer(xi, j)) @ self.coefficients(j)


def apply_probe(state: WaveState, probe: ProbeSpec) -> WaveState:
    """Multiply by the probe transmission (no propagation inside the probe)."""
    return state.replace(amplitudes=state.amplitudes * probe.transmission(state.grid.xi))


@dataclass(frozen=True, eq=False)
class Fringe:
    phi_s: np.ndarray
    intensity: np.ndarray
    order: int


class FringeFit(NamedTuple):
    theta: float
    sigma_theta: float
    offset: float
    amplitude: float


def _check_phase_sampling(phi_s: np.ndarray) -> None:
    if phi_s.size < 8:
        raise ConfigurationError("need at least 8 phase samples")
    span = (phi_s.max() - phi_s.min()) * phi_s.size / (phi_s.size - 1)
    if span < 2 * math.pi * (1 - 1e-9):
        raise ConfigurationError("phase samples must cover a full 2*pi period")


def default_phases(steps: int) -> np.ndarray:
    return 2 * math.pi * np.arange(steps) / steps


def fringe_scan(state: WaveState, probe: ProbeSpec, order: int, phi_s) -> Fringe:
    """Raw intensity in output ``order`` for each probe position ``phi_s``."""
    phi_s = np.asarray(phi_s, dtype=float)
    _check_phase_sampling(phi_s)
    intensity = np.empty(phi_s.size)
    for i, phi in enumerate(phi_s):
        probed = apply_probe(state, probe.with_phase(phi))
        table = diffraction_amplitudes(probed, abs(order), mode="raw")
        intensity[i] = table.efficiency(order)
    return Fringe(phi_s, intensity, order)


def fit_fringe_phase(f: Fringe) -> FringeFit:
    """Linear least squares fit of ``A + B cos(phi_s - theta)``; theta in (-pi, pi]."""
    phi = np.asarray(f.phi_s, dtype=float)
    _check_phase_sampling(phi)
    y = np.asarray(f.intensity, dtype=float)
    X = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    offset, c, s = coef
    amplitude = math.hypot(c, s)
    dof = max(phi.size - 3, 1)
    resid = y - X @ coef
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(X.T @ X)
    if amplitude > 0:
        var_b = (c**2 * cov[1, 1] + s**2 * cov[2, 2] + 2 * c * s * cov[1, 2]) / amplitude**2
    else:
        var_b = cov[1, 1]
    scale = max(abs(offset), np.max(np.abs(y)), np.finfo(float).tiny)
    if amplitude <= 2 * math.sqrt(var_b) or amplitude <= 1e-12 * scale:
        raise NoFringeError(f"fringe amplitude {amplitude:.3g} is not distinguishable from zero")
    var_theta = (s**2 * cov[1, 1] + c**2 * cov[2, 2] - 2 * c * s * cov[1, 2]) / amplitude**4
    theta = math.atan2(s, c)
    if theta <= -math.pi:
        theta += 2 * math.pi
    return FringeFit(theta, math.sqrt(max(var_theta, 0.0)), float(offset), amplitude)


def wrap_phase(x: float) -> float:
    """Map onto (-pi, pi]."""
    y = math.remainder(x, 2 * math.pi)
    return math.pi if y == -math.pi else y


@dataclass(frozen=True)
class ProtocolResult:
    """Outcome of the reference-subtracted order-3 phase measurement."""

    delta: float
    theta_long: FringeFit
    theta_ref: FringeFit
    order: int

    @property
    def phi2_estimate(self) -> float:
        """``|phi2|`` from the two-beam law ``phi(m-1) - phi(m-2) = (2m - 3) phi2``."""
        return self.delta / (2 * self.order - 3)


def phase_protocol(dz_long: float, dz_ref: float, state_at: Callable[[float], WaveState],
                   probe: ProbeSpec, order: int = 3, phi_steps: int = 64,
                   phi_offset: float = 0.0) -> ProtocolResult:
    """Measure ``|phi(2) - phi(1)|`` by differencing fringe phases at two interaction lengths.

    ``state_at`` maps an interaction length to the packet leaving the
    absorptive wave.  Subtracting the short-length fringe phase removes the
    probe's own offset phase.  For ``order = 3`` the fringe is the
    interference of orders 1 and 2 shifted by one and two probe harmonics.
    ``phi_offset`` moves the origin of the probe-position scan.
    """
    if order < 2:
        raise ConfigurationError("protocol needs an output order >= 2")
    phases = default_phases(phi_steps) + phi_offset
    fit_long = fit_fringe_phase(fringe_scan(state_at(dz_long), probe, order, phases))
    if dz_long == dz_ref:
        fit_ref = fit_long
    else:
        fit_ref = fit_fringe_phase(fringe_scan(state_at(dz_ref), probe, order, phases))
    delta = abs(wrap_phase(fit_long.theta - fit_ref.theta))
    return ProtocolResult(delta, fit_long, fit_ref, order)


def state_from_orders(grid: Grid, amplitudes: dict[int, complex]) -> WaveState:
    """Lattice-periodic state with the given diffraction-order amplitudes (unit norm)."""
    coeffs = np.zeros(grid.size, dtype=complex)
    for n, a in amplitudes.items():
        coeffs[grid.order_bin(int(n))] = a
    psi = inverse_spectral_transform(coeffs, grid)
    norm = grid.dxi * np.sum(np.abs(psi) ** 2)
    return WaveState(psi / math.sqrt(norm), grid)
