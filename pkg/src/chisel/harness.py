"""Experiment-level pipelines: interaction-length sweeps, z0 extraction,
velocity averaging, the simulated interferometer and power-law scaling runs.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from chisel.core import (
    POINTS_PER_WIDTH,
    Grid,
    PhysicalParams,
    PowerLaw,
    SinusoidalImaginary,
    WaveState,
    make_grid,
    reduce_params,
    spectral_transform,
)
from chisel.eigenmodes import ScalingFit, fit_scaling, ground_mode, rms_width
from chisel.errors import ConfigurationError, RangeError
from chisel.observables import (
    Fringe,
    FringeFit,
    ProbeSpec,
    ProtocolResult,
    default_phases,
    diffraction_amplitudes,
    fit_fringe_phase,
    fringe_scan,
    wrap_phase,
)
from chisel.propagator import auto_dtau, evolve_to_times, raman_nath_evolve

#: Conversion from a full width at half maximum to a Gaussian standard deviation.
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
#: Line A uses points before the zeroth order has completed this fraction of its fall.
Z0_DECLINE_FRACTION = 0.6
#: Line B uses this trailing fraction of the points.
Z0_PLATEAU_FRACTION = 0.25
#: The trailing fraction of points checked for a plateau, and its allowed relative variation.
PLATEAU_CHECK_FRACTION = 0.2
PLATEAU_TOLERANCE = 0.01


def worker_count() -> int:
    """Thread cap from ``CHISEL_THREADS`` (default: CPU count, at most 8)."""
    raw = os.environ.get("CHISEL_THREADS")
    if raw is None:
        return max(1, min(8, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"CHISEL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("CHISEL_THREADS must be >= 1")
    return n


def _map_keyed(fn: Callable, keys: Sequence) -> dict:
    """Evaluate ``fn`` on each key, possibly in threads; results keyed for order-free merging."""
    keys = list(keys)
    workers = min(worker_count(), len(keys)) if keys else 1
    if workers <= 1:
        return {k: fn(k) for k in keys}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(keys, pool.map(fn, keys)))


# ---------------------------------------------------------------------------
# velocity classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VelocitySettings:
    """Monte-Carlo averaging over Gaussian velocity spreads given as FWHM (m/s)."""

    samples: int = 1
    dv_l_fwhm: float = 0.0
    dv_t_fwhm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")
        if self.dv_l_fwhm < 0 or self.dv_t_fwhm < 0:
            raise ConfigurationError("velocity spreads must be non-negative")


@dataclass(frozen=True)
class VelocityClass:
    v_l: float
    v_t: float = 0.0
    weight: float = 1.0


def draw_velocity_classes(settings: VelocitySettings, v_mean: float) -> list[VelocityClass]:
    """Seeded equal-weight draws; a single class at ``(v_mean, 0)`` without spreads."""
    if settings.dv_l_fwhm == 0 and settings.dv_t_fwhm == 0:
        return [VelocityClass(v_mean, 0.0, 1.0)]
    rng = np.random.default_rng(settings.seed)
    v_l = v_mean + settings.dv_l_fwhm * FWHM_TO_SIGMA * rng.standard_normal(settings.samples)
    v_t = settings.dv_t_fwhm * FWHM_TO_SIGMA * rng.standard_normal(settings.samples)
    if np.any(v_l <= 0):
        raise ConfigurationError("longitudinal spread produced a non-positive velocity; reduce dv_l")
    w = 1.0 / settings.samples
    return [VelocityClass(float(a), float(b), w) for a, b in zip(v_l, v_t)]


def wrap_quasimomentum(kappa: float) -> tuple[float, int]:
    """Split ``kappa`` into ``q`` in ``[-1, 1)`` plus ``2 m``."""
    m = math.floor((kappa + 1.0) / 2.0)
    return kappa - 2.0 * m, m


def tilted_initial_state(grid: Grid, kappa_t: float) -> WaveState:
    """Unit-norm plane wave ``exp(i kappa_t xi)`` stored as Bloch quasimomentum plus periodic part."""
    q, m = wrap_quasimomentum(kappa_t)
    if m != 0:
        warnings.warn(
            f"transverse momentum {kappa_t:.4g} lies outside the first Brillouin zone; wrapped to {q:.4g}",
            stacklevel=2,
        )
    u = np.exp(2j * m * grid.xi) / math.sqrt(grid.length)
    return WaveState(u, grid, quasimomentum=q)


def velocity_average(classes: Sequence[VelocityClass], observable: Callable[[VelocityClass], np.ndarray]):
    """Weighted mean of ``observable`` (an intensity-like array) over velocity classes."""
    if not classes:
        raise ConfigurationError("no velocity classes")
    total_w = math.fsum(c.weight for c in classes)
    if not total_w > 0:
        raise ConfigurationError("velocity class weights must sum to a positive value")
    results = _map_keyed(lambda i: np.asarray(observable(classes[i]), dtype=float), range(len(classes)))
    acc = np.zeros_like(results[0])
    for i in range(len(classes)):
        acc = acc + classes[i].weight * results[i]
    return acc / total_w


# ---------------------------------------------------------------------------
# interaction-length sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """Interaction-length sweep through a sinusoidal absorptive standing wave."""

    omega0_over_gamma: tuple[float, ...]
    dz_um: np.ndarray = field(repr=False)
    n_max: int = 3
    velocity: VelocitySettings = VelocitySettings()
    raman_nath: bool = True
    physical_overrides: dict = field(default_factory=dict)
    points_per_period: int | None = None
    species: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "omega0_over_gamma", tuple(float(x) for x in np.atleast_1d(self.omega0_over_gamma)))
        dz = np.asarray(self.dz_um, dtype=float)
        object.__setattr__(self, "dz_um", dz)
        if dz.ndim != 1 or dz.size < 1:
            raise ConfigurationError("dz grid must be a non-empty 1-D list")
        if np.any(dz < 0) or np.any(np.diff(dz) <= 0):
            raise ConfigurationError("dz grid must be non-negative and strictly increasing")
        if not self.omega0_over_gamma or min(self.omega0_over_gamma) <= 0:
            raise ConfigurationError("omega0_over_gamma values must be positive")
        if self.n_max < 0:
            raise ConfigurationError("n_max must be non-negative")

    def physical(self, omega0_over_gamma: float) -> PhysicalParams:
        return PhysicalParams.from_species(omega0_over_gamma, self.species, **self.physical_overrides)


@dataclass(frozen=True, eq=False)
class EfficiencyCurve:
    """Per-order efficiencies (rows: dz, columns: orders ``-n_max..n_max``)."""

    omega0_over_gamma: float
    dz_um: np.ndarray
    orders: np.ndarray
    eta: np.ndarray
    survival: np.ndarray
    raman_nath_eta: np.ndarray | None = None
    raman_nath_survival: np.ndarray | None = None
    s: float = 0.0

    def order(self, n: int) -> np.ndarray:
        return self.eta[:, n + (len(self.orders) - 1) // 2]

    def raman_nath_order(self, n: int) -> np.ndarray:
        if self.raman_nath_eta is None:
            raise ConfigurationError("sweep was run without the Raman-Nath companion")
        return self.raman_nath_eta[:, n + (len(self.orders) - 1) // 2]


def lattice_grid(s: float, n_max: int = 0, points_per_period: int | None = None) -> Grid:
    """One-period grid with the fewest points resolving the stationary width."""
    width = SinusoidalImaginary(s).stationary_width()
    if points_per_period is None:
        n = 16
        while math.pi / n * POINTS_PER_WIDTH > width or n // 2 - 1 < n_max:
            n *= 2
        points_per_period = n
    return make_grid(1, points_per_period)


def _raw_orders(state: WaveState, n_max: int) -> np.ndarray:
    windows = state.quasimomentum != 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = diffraction_amplitudes(state, n_max, mode="raw", windows=windows)
    return table.efficiencies


def _class_sweep(V, grid: Grid, p: PhysicalParams, dz: np.ndarray, n_max: int, vc: VelocityClass,
                 raman_nath: bool, dtau: float | None) -> np.ndarray:
    """Raw order intensities and survival for one velocity class: shape (len(dz), 2 * (2 n_max + 2))."""
    initial = tilted_initial_state(grid, p.kappa_from_transverse_velocity(vc.v_t))
    taus = p.tau_from_dz(dz, velocity=vc.v_l)
    step = dtau if dtau is not None else auto_dtau(V, grid, initial.quasimomentum)
    states = evolve_to_times(initial, V, taus, step, renormalize=True)
    width = 2 * n_max + 2
    out = np.zeros((dz.size, 2 * width))
    for i, st in enumerate(states):
        out[i, : width - 1] = _raw_orders(st, n_max)
        out[i, width - 1] = st.survival
        if raman_nath:
            rn = raman_nath_evolve(initial, V, float(taus[i]))
            out[i, width: 2 * width - 1] = _raw_orders(rn, n_max)
            out[i, 2 * width - 1] = rn.survival
    return out


def _normalise_rows(raw: np.ndarray) -> np.ndarray:
    return raw / raw.sum(axis=1, keepdims=True)


def run_diffraction_sweep(cfg: SweepConfig, omega0_over_gamma: float | None = None,
                          classes: Sequence[VelocityClass] | None = None,
                          dtau: float | None = None) -> EfficiencyCurve:
    """Efficiencies versus interaction length for one Rabi frequency.

    Intensities are averaged over the velocity classes (drawn from
    ``cfg.velocity`` unless given explicitly) before normalising each row.
    """
    if omega0_over_gamma is None:
        if len(cfg.omega0_over_gamma) != 1:
            raise ConfigurationError("config lists several Rabi frequencies; pick one or use run_sweeps")
        omega0_over_gamma = cfg.omega0_over_gamma[0]
    p = cfg.physical(omega0_over_gamma)
    s = reduce_params(p).s
    V = SinusoidalImaginary(s)
    grid = lattice_grid(s, cfg.n_max, cfg.points_per_period)
    if classes is None:
        classes = draw_velocity_classes(cfg.velocity, p.longitudinal_velocity)
    avg = velocity_average(
        classes, lambda vc: _class_sweep(V, grid, p, cfg.dz_um, cfg.n_max, vc, cfg.raman_nath, dtau)
    )
    width = 2 * cfg.n_max + 2
    eta = _normalise_rows(avg[:, : width - 1])
    rn_eta = _normalise_rows(avg[:, width: 2 * width - 1]) if cfg.raman_nath else None
    rn_surv = avg[:, 2 * width - 1] if cfg.raman_nath else None
    return EfficiencyCurve(omega0_over_gamma, cfg.dz_um.copy(), np.arange(-cfg.n_max, cfg.n_max + 1),
                           eta, avg[:, width - 1], rn_eta, rn_surv, s)


def run_sweeps(cfg: SweepConfig) -> list[EfficiencyCurve]:
    """One curve per Rabi frequency in the config, in config order."""
    return [run_diffraction_sweep(cfg, om) for om in cfg.omega0_over_gamma]


# ---------------------------------------------------------------------------
# z0 extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Z0Result:
    z0: float
    line_a: tuple[float, float]
    line_b: tuple[float, float]
    n_decline: int


def z0_from_series(x, y) -> Z0Result:
    """Crossing of the linear extrapolations of the initial decline and the plateau.

    Line A is fitted to the points before ``y`` completes 60% of its total
    fall; line B to the final 25% of points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 8:
        raise RangeError("z0 extraction needs at least 8 points")
    n_check = max(2, int(math.ceil(PLATEAU_CHECK_FRACTION * x.size)))
    tail = y[-n_check:]
    ref = abs(tail.mean())
    if ref == 0 or np.ptp(tail) > PLATEAU_TOLERANCE * ref:
        raise RangeError(
            f"no plateau: the last {n_check} points vary by {np.ptp(tail) / max(ref, 1e-300):.2%}; "
            "extend the interaction-length range"
        )
    n_b = max(2, int(round(Z0_PLATEAU_FRACTION * x.size)))
    b = np.polyfit(x[-n_b:], y[-n_b:], 1)
    fall = y[0] - y[-n_b:].mean()
    if fall == 0:
        raise RangeError("the curve does not fall; there is no decline to extrapolate")
    past = np.nonzero((y[0] - y) > Z0_DECLINE_FRACTION * fall)[0]
    n_a = max(2, int(past[0]) if past.size else x.size)
    a = np.polyfit(x[:n_a], y[:n_a], 1)
    if a[0] == b[0]:
        raise RangeError("decline and plateau lines are parallel")
    z0 = (b[1] - a[1]) / (a[0] - b[0])
    return Z0Result(float(z0), (float(a[0]), float(a[1])), (float(b[0]), float(b[1])), n_a)


def extract_z0(curve: EfficiencyCurve, order: int = 0) -> float:
    """Characteristic interaction length (um) from the zeroth-order efficiency."""
    return z0_from_series(curve.dz_um, curve.order(order)).z0


# ---------------------------------------------------------------------------
# interferometer on simulated packets
# ---------------------------------------------------------------------------


def averaged_fringe(V, grid: Grid, p: PhysicalParams, dz_um: float, probe: ProbeSpec, order: int,
                    phi_s, classes: Sequence[VelocityClass], dtau: float | None = None) -> Fringe:
    """Order-``order`` fringe after the absorptive wave, intensity-averaged over velocity classes."""
    phi_s = np.asarray(phi_s, dtype=float)

    def one(vc: VelocityClass) -> np.ndarray:
        initial = tilted_initial_state(grid, p.kappa_from_transverse_velocity(vc.v_t))
        tau = float(p.tau_from_dz(dz_um, velocity=vc.v_l))
        step = dtau if dtau is not None else auto_dtau(V, grid, initial.quasimomentum)
        st = evolve_to_times(initial, V, [tau], step, renormalize=True)[-1]
        # one period per grid: every bin is an order, with or without quasimomentum
        return fringe_scan(st, probe, order, phi_s).intensity

    return Fringe(phi_s, velocity_average(classes, one), order)


def simulated_phase_protocol(omega0_over_gamma: float, dz_long_um: float, dz_ref_um: float,
                             probe: ProbeSpec, order: int = 3, phi_steps: int = 64,
                             velocity: VelocitySettings = VelocitySettings(),
                             physical_overrides: dict | None = None,
                             dtau: float | None = None, species: str | None = None) -> tuple[ProtocolResult, Fringe, Fringe]:
    """Reference-subtracted fringe phase for packets simulated with the species constants."""
    p = PhysicalParams.from_species(omega0_over_gamma, species, **(physical_overrides or {}))
    s = reduce_params(p).s
    V = SinusoidalImaginary(s)
    grid = lattice_grid(s, order + (probe.j_max or 0) + 2)
    classes = draw_velocity_classes(velocity, p.longitudinal_velocity)
    phases = default_phases(phi_steps)
    f_long = averaged_fringe(V, grid, p, dz_long_um, probe, order, phases, classes, dtau)
    f_ref = averaged_fringe(V, grid, p, dz_ref_um, probe, order, phases, classes, dtau)
    fit_long: FringeFit = fit_fringe_phase(f_long)
    fit_ref: FringeFit = fit_fringe_phase(f_ref)
    delta = abs(wrap_phase(fit_long.theta - fit_ref.theta))
    return ProtocolResult(delta, fit_long, fit_ref, order), f_long, f_ref


# ---------------------------------------------------------------------------
# power-law scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PowerLawScaling:
    n: int
    omega0_over_gamma: np.ndarray
    t0: np.ndarray
    width: np.ndarray
    t0_fit: ScalingFit
    width_fit: ScalingFit


def _powerlaw_grid(V: PowerLaw, periods: int) -> Grid:
    width = V.stationary_width()
    n = 8
    while math.pi / n * POINTS_PER_WIDTH > width:
        n *= 2
    return make_grid(periods, n)


def powerlaw_zero_order_curve(V: PowerLaw, grid: Grid, taus) -> np.ndarray:
    """Fraction of the surviving flux left in the zero-momentum bin at each time."""
    states = evolve_to_times(WaveState(np.full(grid.size, 1.0 / math.sqrt(grid.length), complex), grid),
                             V, taus, auto_dtau(V, grid), renormalize=True)
    out = np.empty(len(states))
    for i, st in enumerate(states):
        a = spectral_transform(st.amplitudes, grid)
        w = np.abs(a) ** 2
        out[i] = w[0] / w.sum()
    return out


def run_powerlaw_scaling(n: int, q_over_k: float, omega0_over_gamma: Sequence[float],
                         omega_r_over_gamma: float, domain_widths: float = 10.0,
                         cap_widths: float = 3.0, horizon: float = 8.0,
                         points: int = 161) -> PowerLawScaling:
    """Characteristic times and stationary widths of a power-law well across a Rabi sweep.

    The domain is fixed for the whole sweep and spans at least
    ``domain_widths`` of the widest packet.  ``t0`` (units of ``1/Gamma``)
    comes from the z0 crossing estimator applied to the zero-bin fraction
    sampled over ``horizon`` predicted characteristic times; the width is the
    rms width of the converged ground mode.
    """
    om = np.asarray(omega0_over_gamma, dtype=float)
    specs = [PowerLaw(n, q_over_k, x * x / (2.0 * omega_r_over_gamma), cap_widths) for x in om]
    widest = max(v.stationary_width() for v in specs)
    periods = 1
    while periods * math.pi < domain_widths * widest:
        periods *= 2

    def one(i: int):
        V = specs[i]
        grid = _powerlaw_grid(V, periods)
        t_scale = V.stationary_width() ** 2
        taus = np.linspace(0.0, horizon * t_scale, points)
        z0_tau = z0_from_series(taus, powerlaw_zero_order_curve(V, grid, taus)).z0
        w = rms_width(ground_mode(V, grid).mode)
        # same well with the cap one width further out: truncation error estimate
        wider = PowerLaw(V.n, V.q_over_k, V.s, cap_widths + 1.0)
        w_ref = rms_width(ground_mode(wider, _powerlaw_grid(wider, periods)).mode)
        return z0_tau / omega_r_over_gamma, w * q_over_k, abs(math.log(w_ref / w))

    res = _map_keyed(one, range(len(specs)))
    t0 = np.array([res[i][0] for i in range(len(specs))])
    width = np.array([res[i][1] for i in range(len(specs))])
    log_err = np.array([res[i][2] for i in range(len(specs))])
    lx = np.log(om)
    # largest slope shift the per-point truncation errors can produce
    floor = float(np.sum(np.abs(lx - lx.mean())) / np.sum((lx - lx.mean()) ** 2) * log_err.max())
    return PowerLawScaling(n, om, t0, width,
                           fit_scaling(om, t0, -2.0 / (n + 1)),
                           fit_scaling(om, width, -1.0 / (n + 1), floor=max(floor, 1e-9)))
