import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from chisel.analytic import asymptotic_order_amplitudes, order_phase
from chisel.core import WaveState, make_grid, make_initial_state
from chisel.errors import ConfigurationError, NoFringeError, ParameterError
from chisel.observables import (
    Fringe,
    ProbeSpec,
    apply_probe,
    default_phases,
    diffraction_amplitudes,
    fit_fringe_phase,
    fringe_scan,
    momentum_spectrum,
    phase_protocol,
    state_from_orders,
    wrap_phase,
)


def cquad(f, a, b):
    re = integrate.quad(lambda x: f(x).real, a, b, limit=200)[0]
    im = integrate.quad(lambda x: f(x).imag, a, b, limit=200)[0]
    return re + 1j * im


def two_beam_state(grid, phi1, phi2, a1=1.0, a2=0.7):
    return state_from_orders(grid, {1: a1 * np.exp(1j * phi1), 2: a2 * np.exp(1j * phi2)})


class TestSpectrum:
    def test_direct_dft(self):
        g = make_grid(2, 16)
        rng = np.random.default_rng(1)
        psi = rng.normal(size=g.size) + 1j * rng.normal(size=g.size)
        spec = momentum_spectrum(WaveState(psi, g))
        direct = np.array([np.sum(psi * np.exp(-1j * k * g.xi)) for k in g.kappa]) * g.dxi / math.sqrt(g.length)
        np.testing.assert_allclose(spec.amplitudes, direct, atol=1e-12)
        assert spec.weights.sum() == pytest.approx(g.dxi * np.sum(np.abs(psi) ** 2))

    def test_plane_wave_width_zero(self):
        g = make_grid(1, 16)
        spec = momentum_spectrum(make_initial_state(g, "plane_wave", 4.0))
        assert spec.rms_width == pytest.approx(0.0, abs=1e-12)


class TestDiffraction:
    def test_phase_grating_orders(self):
        mu = 1.5
        g = make_grid(1, 64)
        psi = np.exp(1j * mu * np.cos(2 * g.xi)) / math.sqrt(g.length)
        table = diffraction_amplitudes(WaveState(psi, g), 4, mode="survival")
        for n in range(-4, 5):
            a = cquad(lambda x: np.exp(1j * mu * np.cos(2 * x) - 2j * n * x), -math.pi / 2, math.pi / 2) / math.pi
            assert table.amplitude(n) == pytest.approx(a, abs=1e-12)
            assert table.efficiency(n) == pytest.approx(abs(a) ** 2, abs=1e-12)

    def test_modes(self):
        g = make_grid(1, 16)
        st0 = state_from_orders(g, {0: 1.0, 1: 0.5, -1: 0.5, 3: 0.1})
        st0 = st0.replace(amplitudes=st0.amplitudes * 0.5, log_scale=math.log(2.0))
        norm = diffraction_amplitudes(st0, 2)
        assert norm.efficiencies.sum() == pytest.approx(1.0)
        surv = diffraction_amplitudes(st0, 3, mode="survival")
        assert surv.efficiencies.sum() == pytest.approx(1.0)
        raw = diffraction_amplitudes(st0, 3, mode="raw")
        assert raw.efficiencies.sum() == pytest.approx(0.5)
        with pytest.raises(ConfigurationError):
            diffraction_amplitudes(st0, 2, mode="bogus")
        with pytest.raises(ConfigurationError):
            norm.efficiency(3)

    def test_windows_match_bins_for_periodic_state(self):
        g = make_grid(4, 16)
        st0 = state_from_orders(g, {0: 1.0, 1: 0.3j, -2: 0.2})
        a = diffraction_amplitudes(st0, 3, mode="survival")
        b = diffraction_amplitudes(st0, 3, mode="survival", windows=True)
        np.testing.assert_allclose(a.efficiencies, b.efficiencies, atol=1e-14)

    def test_windows_collect_off_comb_weight(self):
        g = make_grid(4, 16)
        st0 = make_initial_state(g, "plane_wave", 2.5)
        with pytest.warns(UserWarning, match="between diffraction orders"):
            bins = diffraction_amplitudes(st0, 2, mode="survival")
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            win = diffraction_amplitudes(st0, 2, mode="survival", windows=True)
        assert bins.efficiencies.sum() == pytest.approx(0.0, abs=1e-20)
        assert win.efficiency(1) == pytest.approx(1.0)

    @given(st.floats(0.1, 3.0), st.floats(-3.0, 3.0))
    def test_symmetric_state_symmetric_orders(self, mu, c):
        g = make_grid(1, 32)
        psi = np.exp((1j * mu + 0.1 * c) * np.cos(2 * g.xi))
        eta = diffraction_amplitudes(WaveState(psi, g), 4).efficiencies
        np.testing.assert_allclose(eta, eta[::-1], rtol=1e-10, atol=1e-15)

    def test_asymptotic_ratios(self):
        s = 2.0
        a = asymptotic_order_amplitudes(3, s)
        g = make_grid(1, 32)
        st0 = state_from_orders(g, {n: a[abs(n)] for n in range(-3, 4)})
        table = diffraction_amplitudes(st0, 3)
        for n in (1, 2, 3):
            assert table.efficiency(n) / table.efficiency(0) == pytest.approx(abs(a[n]) ** 2, rel=1e-10)
            rel = table.amplitude(n) / table.amplitude(0)
            assert wrap_phase(np.angle(rel) - order_phase(n, s)) == pytest.approx(0.0, abs=1e-10)


class TestProbe:
    def test_coefficients_from_quadrature(self):
        probe = ProbeSpec(0.8j, phi_s=0.4)
        for j in range(-3, 4):
            oracle = cquad(lambda x: probe.transmission(x) * np.exp(-2j * j * x), -math.pi / 2, math.pi / 2) / math.pi
            assert probe.coefficients(j) == pytest.approx(oracle, abs=1e-12)

    def test_truncated_transmission(self):
        probe = ProbeSpec(0.5 + 0.2j, phi_s=1.0, j_max=2)
        xi = np.linspace(-2, 2, 17)
        full = ProbeSpec(0.5 + 0.2j, phi_s=1.0).coefficients(np.arange(-2, 3))
        expected = np.exp(2j * np.multiply.outer(xi, np.arange(-2, 3))) @ full
        np.testing.assert_allclose(probe.transmission(xi), expected, atol=1e-14)

    def test_apply_is_convolution(self):
        probe = ProbeSpec(0.8j, phi_s=0.3)
        g = make_grid(1, 64)
        amps = {0: 1.0, 1: 0.4 - 0.2j, -1: 0.1j}
        st0 = state_from_orders(g, amps)
        c0 = diffraction_amplitudes(st0, 0, mode="raw").amplitude(0) / amps[0]
        out = diffraction_amplitudes(apply_probe(st0, probe), 6, mode="raw")
        for n in range(-4, 5):
            conv = sum(probe.coefficients(n - m) * a for m, a in amps.items())
            assert out.amplitude(n) == pytest.approx(c0 * conv, abs=1e-12)

    @given(st.floats(-3, 3), st.floats(0, 3), st.floats(-4, 4))
    def test_absorptive_probe_never_amplifies(self, re, im, phi):
        t = ProbeSpec(complex(re, im), phi_s=phi).transmission(np.linspace(-2, 2, 101))
        assert np.all(np.abs(t) <= 1 + 1e-12)

    def test_zero_depth_is_identity(self):
        g = make_grid(1, 16)
        st0 = state_from_orders(g, {0: 1.0, 1: 0.3j})
        np.testing.assert_array_equal(apply_probe(st0, ProbeSpec(0.0, phi_s=1.2)).amplitudes, st0.amplitudes)
        phi = default_phases(16)
        with pytest.raises(NoFringeError):
            fit_fringe_phase(fringe_scan(two_beam_state(g, 0.0, 0.5), ProbeSpec(0.0), 3, phi))

    def test_unitarity_split(self):
        g = make_grid(1, 32)
        st0 = state_from_orders(g, {0: 1.0, 1: 0.4, -2: 0.2j})
        assert apply_probe(st0, ProbeSpec(1.3, phi_s=0.4)).norm == pytest.approx(st0.norm, rel=1e-12)
        assert apply_probe(st0, ProbeSpec(0.5j, phi_s=0.4)).norm < st0.norm

    def test_rejects_gain(self):
        with pytest.raises(ParameterError):
            ProbeSpec(0.5 - 0.1j)
        with pytest.raises(ParameterError):
            ProbeSpec(0.5, j_max=-1)


class TestFringeFit:
    def test_exact_phase(self):
        phi = default_phases(32)
        fit = fit_fringe_phase(Fringe(phi, 2.0 + np.cos(phi - 0.6), 3))
        assert fit.theta == pytest.approx(0.6, abs=1e-12)
        assert fit.amplitude == pytest.approx(1.0)
        assert fit.offset == pytest.approx(2.0)

    def test_noisy_phase_within_error(self):
        rng = np.random.default_rng(7)
        phi = default_phases(64)
        pulls = []
        for _ in range(200):
            y = 2.0 + np.cos(phi - 0.6) + 0.01 * rng.normal(size=phi.size)
            fit = fit_fringe_phase(Fringe(phi, y, 3))
            pulls.append((fit.theta - 0.6) / fit.sigma_theta)
        pulls = np.array(pulls)
        assert abs(pulls.mean()) < 0.3
        assert np.std(pulls) == pytest.approx(1.0, abs=0.15)

    def test_flat_fringe_raises(self):
        phi = default_phases(16)
        with pytest.raises(NoFringeError):
            fit_fringe_phase(Fringe(phi, np.full(phi.size, 0.3), 3))

    def test_sampling_guard(self):
        with pytest.raises(ConfigurationError):
            fit_fringe_phase(Fringe(np.linspace(0, 1, 16), np.ones(16), 3))
        with pytest.raises(ConfigurationError):
            fit_fringe_phase(Fringe(default_phases(4), np.ones(4), 3))

    @given(st.floats(-20, 20))
    def test_wrap_phase_range(self, x):
        y = wrap_phase(x)
        assert -math.pi < y <= math.pi
        assert math.cos(y) == pytest.approx(math.cos(x), abs=1e-9)


class TestProtocol:
    def _delta(self, pa, pb, **kw):
        g = make_grid(1, 32)
        states = {1.0: two_beam_state(g, *pa), 0.0: two_beam_state(g, *pb)}
        return phase_protocol(1.0, 0.0, states.__getitem__, ProbeSpec(0.9j), **kw)

    def test_recovers_relative_phase(self):
        res = self._delta((0.2, -0.5), (0.0, 0.0))
        assert res.delta == pytest.approx(0.7, abs=1e-10)
        assert res.phi2_estimate == pytest.approx(0.7 / 3)

    def test_truncated_probe_same_answer(self):
        g = make_grid(1, 32)
        states = {1.0: two_beam_state(g, 0.2, -0.5), 0.0: two_beam_state(g, 0.0, 0.0)}
        res = phase_protocol(1.0, 0.0, states.__getitem__, ProbeSpec(0.9j, j_max=2))
        assert res.delta == pytest.approx(0.7, abs=1e-10)

    def test_global_phase_invariance(self):
        a = self._delta((0.2, -0.5), (0.0, 0.0))
        b = self._delta((1.4, 0.7), (-2.0, -2.0))
        assert a.delta == pytest.approx(b.delta, abs=1e-10)

    def test_scan_origin_invariance(self):
        a = self._delta((0.2, -0.5), (0.0, 0.0))
        b = self._delta((0.2, -0.5), (0.0, 0.0), phi_offset=0.3)
        assert a.delta == pytest.approx(b.delta, abs=1e-10)
        assert a.theta_long.theta == pytest.approx(b.theta_long.theta, abs=1e-10)

    def test_equal_lengths_give_zero(self):
        res = self._delta((0.2, -0.5), (0.0, 0.0))
        g = make_grid(1, 32)
        st0 = two_beam_state(g, 0.2, -0.5)
        same = phase_protocol(1.0, 1.0, lambda _: st0, ProbeSpec(0.9j))
        assert same.delta == 0.0
        assert res.theta_ref is not res.theta_long

    def test_requires_high_order(self):
        with pytest.raises(ConfigurationError):
            phase_protocol(1.0, 0.0, lambda _: None, ProbeSpec(0.9j), order=1)

    def test_fringe_scan_is_raw_intensity(self):
        g = make_grid(1, 32)
        st0 = two_beam_state(g, 0.0, 0.0)
        probe = ProbeSpec(0.9j)
        phi = default_phases(8)
        f = fringe_scan(st0, probe, 3, phi)
        for p_, y in zip(phi, f.intensity):
            direct = diffraction_amplitudes(apply_probe(st0, probe.with_phase(p_)), 3, mode="raw").efficiency(3)
            assert y == pytest.approx(direct)
