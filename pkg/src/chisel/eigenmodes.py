"""Slowest-decaying ("ground") modes of ``H = -d2/dxi2 - i V`` and scaling fits.

The ground mode is found the physical way: propagate with renormalisation
until only the mode with the smallest decay rate is left.  A dense
eigensolver on small grids is provided as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import eig

from chisel.core import Grid, WaveState, check_resolution, make_initial_state
from chisel.errors import ConvergenceError, DataError
from chisel.propagator import SplitStepper, _potential_field, _run, auto_dtau, check_step


@dataclass(frozen=True, eq=False)
class EigenMode:
    """Unit-norm mode with complex eigenvalue ``E`` (``Im E < 0`` for decay).

    ``E`` is the Rayleigh quotient ``psi^T H psi / psi^T psi`` of the
    converged mode; ``E_propagator`` is the per-step log ratio of the
    propagation, which carries the splitting error of the time step.
    """

    mode: WaveState
    E: complex
    E_propagator: complex
    residual: float
    potential: np.ndarray = field(repr=False)
    tau_used: float = 0.0

    @property
    def decay_rate(self) -> float:
        """Density decay rate ``2 |Im E|``."""
        return -2.0 * self.E.imag


def _kinetic_diag(grid: Grid, quasimomentum: float = 0.0) -> np.ndarray:
    return (grid.kappa + quasimomentum) ** 2


def apply_hamiltonian(psi: np.ndarray, V: np.ndarray, grid: Grid, quasimomentum: float = 0.0) -> np.ndarray:
    """``(-d2/dxi2 - i V) psi`` with the spectral second derivative."""
    return np.fft.ifft(_kinetic_diag(grid, quasimomentum) * np.fft.fft(psi)) - 1j * V * psi


def dense_hamiltonian(V, grid: Grid, quasimomentum: float = 0.0) -> np.ndarray:
    """Dense matrix of the discretised Hamiltonian (small grids only)."""
    field_, _ = _potential_field(V, grid)
    eye = np.eye(grid.size)
    T = np.fft.ifft(_kinetic_diag(grid, quasimomentum)[:, None] * np.fft.fft(eye, axis=0), axis=0)
    return T - 1j * np.diag(field_)


def rayleigh_quotient(psi: np.ndarray, V: np.ndarray, grid: Grid, quasimomentum: float = 0.0) -> complex:
    # unconjugated: H is complex symmetric, so this is stationary at eigenvectors
    Hpsi = apply_hamiltonian(psi, V, grid, quasimomentum)
    return complex(np.dot(psi, Hpsi) / np.dot(psi, psi))


def eigenvalue_residual(mode, E: complex, V, g: Grid, quasimomentum: float = 0.0) -> float:
    """``||(H - E) psi|| / ||psi||`` in the grid's L2 norm."""
    psi = mode.amplitudes if isinstance(mode, WaveState) else np.asarray(mode, dtype=complex)
    field_, _ = _potential_field(V, g)
    r = apply_hamiltonian(psi, field_, g, quasimomentum) - E * psi
    return float(np.linalg.norm(r) / np.linalg.norm(psi))


def _fix_phase(psi: np.ndarray) -> np.ndarray:
    """Make the value at the density maximum real and positive."""
    peak = psi[np.argmax(np.abs(psi))]
    return psi * (abs(peak) / peak)


def ground_mode(V, grid: Grid, tol: float = 1e-10, dtau: float | None = None,
                max_tau: float | None = None, chunk_tau: float | None = None,
                initial: WaveState | None = None) -> EigenMode:
    """Slowest-decaying mode by renormalised propagation (power iteration).

    Propagates in chunks of ``chunk_tau`` and stops once the direction of
    the state changes by less than ``tol`` per unit time between chunks,
    measured as ``1 - |<old|new>|``.
    """
    field_, width = _potential_field(V, grid)
    check_resolution(grid, width)
    q = initial.quasimomentum if initial is not None else 0.0
    if dtau is None:
        dtau = auto_dtau(field_, grid, q)
    check_step(field_, grid, dtau, q)
    vmax = float(np.max(field_))
    scale = width ** 2 if width else 1.0 / max(vmax, 1.0)
    if chunk_tau is None:
        chunk_tau = 0.25 * scale
    if max_tau is None:
        max_tau = max(400.0 * scale, 200.0 * chunk_tau)
    steps = max(1, round(chunk_tau / dtau))
    chunk_tau = steps * dtau
    stepper = SplitStepper(grid, field_, dtau, q, check=False)
    state = initial if initial is not None else make_initial_state(grid)
    psi = state.amplitudes / math.sqrt(state.norm)
    tau = 0.0
    history = []
    while tau < max_tau:
        new, _ = _run(stepper, psi, steps, True, 0.0)
        tau += chunk_tau
        overlap = abs(np.vdot(psi, new)) * grid.dxi
        change = max(1.0 - overlap, 0.0) / chunk_tau
        history.append(change)
        psi = new
        if change < tol:
            break
    else:
        tail = ", ".join(f"{c:.2e}" for c in history[-4:])
        raise ConvergenceError(
            f"ground mode not converged after tau={tau:.3g} (direction change per unit tau: {tail}); "
            "the two slowest-decaying modes may be nearly degenerate"
        )
    # complex log of one un-renormalised step
    nxt = stepper(psi)
    E_prop = complex(1j * np.log(np.vdot(psi, nxt) / np.vdot(psi, psi)) / dtau)
    psi = _fix_phase(psi)
    psi = psi / math.sqrt(grid.dxi * np.vdot(psi, psi).real)
    E = rayleigh_quotient(psi, field_, grid, q)
    res = eigenvalue_residual(psi, E, field_, grid, q)
    mode = WaveState(psi, grid, tau=tau, quasimomentum=q)
    return EigenMode(mode, E, E_prop, res, field_, tau)


def dense_ground_mode(V, grid: Grid, quasimomentum: float = 0.0) -> tuple[complex, np.ndarray]:
    """Smallest-decay eigenpair of :func:`dense_hamiltonian`, normalised like :func:`ground_mode`."""
    w, vecs = eig(dense_hamiltonian(V, grid, quasimomentum))
    k = int(np.argmax(w.imag))
    psi = _fix_phase(vecs[:, k])
    psi = psi / math.sqrt(grid.dxi * np.vdot(psi, psi).real)
    return complex(w[k]), psi


# ---------------------------------------------------------------------------
# shape measures
# ---------------------------------------------------------------------------


def rms_width(state: WaveState) -> float:
    """``sqrt(2 <(xi - <xi>)**2>)``; equals ``w`` for density ``exp(-xi**2/w**2)``."""
    d = np.abs(state.amplitudes) ** 2
    xi = state.grid.xi
    mean = np.sum(d * xi) / np.sum(d)
    return math.sqrt(2.0 * np.sum(d * (xi - mean) ** 2) / np.sum(d))


def width_at_fraction(state: WaveState, fraction: float) -> float:
    """Full width of the central region where density exceeds ``fraction`` of its peak."""
    if not 0 < fraction < 1:
        raise DataError("fraction must lie in (0, 1)")
    d = np.abs(state.amplitudes) ** 2
    d = d / d.max()
    xi = state.grid.xi
    k = int(np.argmax(d))
    level = fraction

    def crossing(step):
        j = k
        while 0 <= j + step < d.size and d[j + step] >= level:
            j += step
        if not 0 <= j + step < d.size:
            raise DataError("density does not fall below the requested fraction inside the domain")
        a, b = d[j], d[j + step]
        return xi[j] + (xi[j + step] - xi[j]) * (a - level) / (a - b)

    return float(crossing(1) - crossing(-1))


def fit_quadratic_phase(state: WaveState, half_window: float) -> float:
    """Density-weighted fit of ``arg psi = c0 + c xi**2`` over ``|xi - xi_peak| < half_window``; returns c."""
    psi = state.amplitudes
    xi = state.grid.xi
    k = int(np.argmax(np.abs(psi)))
    sel = np.abs(xi - xi[k]) < half_window
    if sel.sum() < 5:
        raise DataError("phase window holds fewer than 5 samples")
    phase = np.angle(psi[sel] / psi[k])
    x = (xi[sel] - xi[k]) ** 2
    w = np.abs(psi[sel])
    A = np.column_stack([np.ones_like(x), x]) * w[:, None]
    coef, *_ = np.linalg.lstsq(A, phase * w, rcond=None)
    return float(coef[1])


# ---------------------------------------------------------------------------
# scaling fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalingFit:
    parameter: np.ndarray
    measured: np.ndarray
    slope: float
    stderr: float
    intercept: float
    predicted: float
    floor: float = 0.0

    @property
    def deviation(self) -> float:
        return self.slope - self.predicted

    @property
    def passed(self) -> bool:
        """Slope within two standard errors (or the noise floor) of the prediction."""
        return abs(self.deviation) <= max(2.0 * self.stderr, self.floor)


def fit_scaling(parameter, measured, predicted_exponent: float, floor: float = 1e-6,
                min_span: float = 4.0) -> ScalingFit:
    """Ordinary least squares of ``log(measured)`` on ``log(parameter)``.

    ``floor`` is the smallest slope error treated as significant; exact
    power laws otherwise give a zero standard error and an ill-posed test.
    ``min_span`` is the required ratio between the largest and smallest
    parameter value.
    """
    x = np.asarray(parameter, dtype=float)
    y = np.asarray(measured, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("parameter and measurement arrays must be 1-D and equal length")
    if x.size < 4:
        raise DataError("scaling fit needs at least 4 points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DataError("scaling fit needs positive, finite values")
    if x.max() / x.min() < min_span * (1 - 1e-12):
        raise DataError(f"sweep must span at least a factor of {min_span:g} in the parameter")
    r = stats.linregress(np.log(x), np.log(y))
    return ScalingFit(x, y, float(r.slope), float(r.stderr), float(r.intercept),
                      float(predicted_exponent), floor)
