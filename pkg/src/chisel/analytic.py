"""Closed-form Gaussian solution of the quadratic imaginary potential.

For ``V = s xi**2`` and a uniform start the exact amplitude is::

    phi(xi, tau) = pi**-0.5 * cosh(b tau)**-0.5 * exp(-a xi**2 tanh(b tau) / 2)

with ``a = sqrt(s) exp(-i pi/4)`` and ``b = 2 sqrt(s) exp(+i pi/4)``.  These
functions serve as oracles for the propagator and as standalone outputs.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from chisel.core import DimensionlessParams
from chisel.errors import ParameterError


@dataclass(frozen=True)
class GaussianSolutionParams:
    s: float

    def __post_init__(self):
        if not self.s > 0:
            raise ParameterError("s must be positive")

    @classmethod
    def from_dimensionless(cls, p: DimensionlessParams) -> "GaussianSolutionParams":
        return cls(p.s)

    @property
    def alpha(self) -> complex:
        return math.sqrt(self.s) * cmath.exp(-0.25j * math.pi)

    @property
    def beta(self) -> complex:
        return 2.0 * math.sqrt(self.s) * cmath.exp(0.25j * math.pi)

    @property
    def omega0_bar(self) -> float:
        return 2.0 * math.sqrt(self.s)


def _params(p) -> GaussianSolutionParams:
    if isinstance(p, GaussianSolutionParams):
        return p
    if isinstance(p, DimensionlessParams):
        return GaussianSolutionParams(p.s)
    return GaussianSolutionParams(float(p))


def log_cosh(z):
    """``log cosh z`` on the branch continuous from ``z = 0`` for ``Re z >= 0``.

    Written as ``z + log(1 + exp(-2z)) - log 2``; since ``|exp(-2z)| <= 1`` the
    logarithm never crosses its cut, which is what the square root of cosh
    needs once ``cosh(b tau)`` winds around the origin.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(z.real < 0):
        raise ParameterError("log_cosh branch is defined for Re z >= 0 only")
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


def gaussian_solution(xi, tau, p):
    """Exact amplitude at positions ``xi`` and time ``tau`` (broadcasting)."""
    p = _params(p)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ParameterError("tau must be non-negative")
    xi = np.asarray(xi, dtype=float)
    z = p.beta * tau
    return np.exp(-0.5 * log_cosh(z) - 0.5 * p.alpha * np.tanh(z) * xi**2) / math.sqrt(math.pi)


def gaussian_norm(tau, p):
    """``integral |phi|**2 dxi`` of the exact solution for ``tau > 0``."""
    p = _params(p)
    tau = np.asarray(tau, dtype=float)
    z = p.beta * tau
    re_a = np.real(p.alpha * np.tanh(z))
    return np.exp(-np.real(log_cosh(z))) * np.sqrt(math.pi / re_a) / math.pi


def packet_width(tau, p):
    """``[Re(a tanh(b tau))]**-0.5``; infinite at ``tau = 0``."""
    p = _params(p)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ParameterError("tau must be non-negative")
    with np.errstate(divide="ignore"):
        re_a = np.real(p.alpha * np.tanh(p.beta * tau))
        width = np.where(tau > 0, np.abs(re_a) ** -0.5, np.inf)
    return float(width) if width.ndim == 0 else width


def stationary_width(p) -> float:
    """Exact large-time limit of :func:`packet_width`, ``2**0.25 s**-0.25``."""
    p = _params(p)
    return (math.sqrt(p.s) / math.sqrt(2.0)) ** -0.5


def quoted_stationary_width(p) -> float:
    """The combination ``(omega_r Gamma / Omega0**2)**0.25 = (2 s)**-0.25``.

    Smaller than :func:`stationary_width` by exactly ``sqrt(2)``.
    """
    p = _params(p)
    return (2.0 * p.s) ** -0.25


def decay_rate(p) -> float:
    """Density decay rate of the stationary packet in units of omega_r: ``sqrt(2 s)``."""
    p = _params(p)
    return p.omega0_bar / math.sqrt(2.0)


class PhaseCoefficient(NamedTuple):
    magnitude: float
    sign: int


def quadratic_phase_coefficient(p) -> PhaseCoefficient:
    """Position-space phase ``arg phi = sign * magnitude * xi**2`` of the stationary packet.

    ``magnitude = sqrt(s/8)``; with ``exp(-i H tau)`` evolution the phase of
    ``exp(-a xi**2 / 2)`` is positive.
    """
    p = _params(p)
    return PhaseCoefficient(math.sqrt(p.s) / math.sqrt(8.0), int(np.sign(-p.alpha.imag)))


def phi2(p) -> float:
    """Coefficient of the order phase law, ``-sqrt(2/s)``."""
    p = _params(p)
    return -math.sqrt(2.0 / p.s)


def order_phase(n, p):
    """Phase of diffraction order ``n`` relative to order 0."""
    return phi2(p) * np.asarray(n) ** 2


def asymptotic_order_amplitudes(n_max: int, p) -> np.ndarray:
    """Far-field amplitudes ``a_0..a_n_max`` of the stationary packet, ``a_0 = 1``.

    The transform of ``exp(-a xi**2/2)`` sampled at ``kappa = 2 n`` gives
    ``exp(-2 n**2 / a) = exp(-(1 + i) |phi2| n**2)``.
    """
    p = _params(p)
    n = np.arange(int(n_max) + 1)
    return np.exp(-2.0 * n**2 / p.alpha)


def asymptotic_packet(xi, p):
    """Position-space stationary shape ``exp(-a xi**2 / 2)`` (unnormalised)."""
    p = _params(p)
    return np.exp(-0.5 * p.alpha * np.asarray(xi, dtype=float) ** 2)


@dataclass(frozen=True)
class ScalingPrediction:
    """Characteristic time (units of 1/Gamma) and stationary width ``q dx0``, prefactors set to 1."""

    n: int
    t0: float
    delta_x0: float

    @property
    def t0_exponent(self) -> float:
        return -2.0 / (self.n + 1)

    @property
    def width_exponent(self) -> float:
        return -1.0 / (self.n + 1)


def powerlaw_scales(n: int, omega0_over_gamma: float, omega_r_tilde_over_gamma: float) -> ScalingPrediction:
    """Order-of-magnitude scales for ``U_2n = (Omega0**2/Gamma)(q x)**(2n)``.

    Only the exponents are meaningful; ``omega_r_tilde = q**2/(2M)``.
    """
    if n < 1:
        raise ParameterError("n must be >= 1: uniform absorption has no localisation")
    if omega0_over_gamma <= 0 or omega_r_tilde_over_gamma <= 0:
        raise ParameterError("rates must be positive")
    t0 = omega0_over_gamma ** (-2.0 / (n + 1)) * omega_r_tilde_over_gamma ** (-n / (n + 1))
    width = (1.0 / (omega0_over_gamma**2 * t0)) ** (1.0 / (2 * n))
    return ScalingPrediction(n, t0, width)


def product_solution_2d(xi_x, xi_y, tau, px, py):
    """Separable solution for ``V = s_x xi_x**2 + s_y xi_y**2``."""
    return gaussian_solution(xi_x, tau, px) * gaussian_solution(xi_y, tau, py)
