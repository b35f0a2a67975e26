import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chisel.core import PhysicalParams, SinusoidalImaginary, reduce_params
from chisel.errors import ConfigurationError, RangeError
from chisel.harness import (
    FWHM_TO_SIGMA,
    SweepConfig,
    VelocityClass,
    VelocitySettings,
    _map_keyed,
    draw_velocity_classes,
    extract_z0,
    lattice_grid,
    run_diffraction_sweep,
    run_sweeps,
    tilted_initial_state,
    velocity_average,
    worker_count,
    wrap_quasimomentum,
    z0_from_series,
)
from chisel.observables import diffraction_amplitudes
from chisel.propagator import auto_dtau, evolve_to_times

DZ = np.linspace(0.0, 1500.0, 61)


@pytest.fixture(scope="module")
def curve02():
    return run_diffraction_sweep(SweepConfig((0.2,), DZ, n_max=2))


def hinge(x, x0=200.0, top=1.0, floor=0.2):
    return np.where(x < x0, top - (top - floor) * x / x0, floor)


class TestSweep:
    def test_zero_length_all_in_zero_order(self, curve02):
        assert curve02.order(0)[0] == pytest.approx(1.0, abs=1e-14)
        assert curve02.survival[0] == pytest.approx(1.0)

    def test_rows_sum_to_one(self, curve02):
        np.testing.assert_allclose(curve02.eta.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(curve02.raman_nath_eta.sum(axis=1), 1.0, rtol=1e-12)

    def test_symmetric_orders(self, curve02):
        np.testing.assert_allclose(curve02.order(1), curve02.order(-1), rtol=1e-9)

    def test_survival_decreasing(self, curve02):
        assert np.all(np.diff(curve02.survival) < 0)

    def test_matches_direct_pipeline(self, curve02):
        p = PhysicalParams.from_species(0.2)
        s = reduce_params(p).s
        V = SinusoidalImaginary(s)
        g = lattice_grid(s, 2)
        taus = p.tau_from_dz(DZ)
        states = evolve_to_times(tilted_initial_state(g, 0.0), V, taus, auto_dtau(V, g), renormalize=True)
        for row in (10, 40):
            st_ = states[row]
            eta = diffraction_amplitudes(st_, 2).efficiencies
            np.testing.assert_allclose(curve02.eta[row], eta, rtol=1e-12, atol=1e-15)
            assert curve02.survival[row] == pytest.approx(st_.survival, rel=1e-12)

    def test_z0_close_to_reference(self, curve02):
        # frozen from the unaveraged default-argon run on this dz grid; guards against silent drift
        assert extract_z0(curve02) == pytest.approx(314.1505447, rel=1e-6)

    def test_plateau_reached(self, curve02):
        tail = curve02.order(0)[-12:]
        assert np.ptp(tail) < 0.01 * tail.mean()

    def test_velocity_doubles_length_scale(self):
        base = run_diffraction_sweep(SweepConfig((0.3,), DZ, n_max=1, raman_nath=False))
        fast = run_diffraction_sweep(
            SweepConfig((0.3,), 2 * DZ, n_max=1, raman_nath=False, physical_overrides={"longitudinal_velocity": 100.0})
        )
        # default beam is 50 m/s: same taus, so the curves coincide point by point
        np.testing.assert_allclose(base.eta, fast.eta, rtol=1e-12)
        assert extract_z0(fast) == pytest.approx(2 * extract_z0(base), rel=1e-12)

    def test_run_sweeps_order(self):
        dz = np.linspace(0, 300, 5)
        curves = run_sweeps(SweepConfig((0.3, 0.2), dz, n_max=1, raman_nath=False))
        assert [c.omega0_over_gamma for c in curves] == [0.3, 0.2]
        assert curves[0].s > curves[1].s
        with pytest.raises(ConfigurationError):
            run_diffraction_sweep(SweepConfig((0.3, 0.2), dz))
        with pytest.raises(ConfigurationError):
            curves[0].raman_nath_order(0)

    @pytest.mark.parametrize("dz", [[], [0, 10, 10], [-1, 2], [[0, 1]]])
    def test_bad_dz(self, dz):
        with pytest.raises(ConfigurationError):
            SweepConfig((0.2,), dz)


class TestZ0:
    def test_hinge(self):
        x = np.linspace(0, 1000, 101)
        assert z0_from_series(x, hinge(x)).z0 == pytest.approx(200.0, abs=1.0)

    def test_smooth_decay(self):
        x = np.linspace(0, 2000, 201)
        y = 0.2 + 0.8 * np.exp(-x / 200.0)
        z0 = z0_from_series(x, y).z0
        assert 100 < z0 < 300

    @given(st.floats(0.01, 100.0))
    def test_rescale_covariant(self, c):
        x = np.linspace(0, 1000, 101)
        y = hinge(x)
        assert z0_from_series(c * x, y).z0 == pytest.approx(c * z0_from_series(x, y).z0, rel=1e-9)
        assert z0_from_series(x, 3 * y).z0 == pytest.approx(z0_from_series(x, y).z0, rel=1e-9)

    def test_no_plateau(self):
        x = np.linspace(0, 150, 31)
        with pytest.raises(RangeError, match="plateau"):
            z0_from_series(x, hinge(x))

    def test_too_few_points(self):
        with pytest.raises(RangeError):
            z0_from_series(np.arange(5.0), np.ones(5))

    def test_flat_curve(self):
        with pytest.raises(RangeError):
            z0_from_series(np.arange(20.0), np.ones(20))


class TestVelocity:
    def test_no_spread_single_class(self):
        assert draw_velocity_classes(VelocitySettings(16), 500.0) == [VelocityClass(500.0, 0.0, 1.0)]

    def test_seeded_draws(self):
        s = VelocitySettings(4000, 10.0, 0.01, seed=3)
        a = draw_velocity_classes(s, 500.0)
        assert a == draw_velocity_classes(s, 500.0)
        v_l = np.array([c.v_l for c in a])
        assert np.std(v_l) == pytest.approx(10.0 * FWHM_TO_SIGMA, rel=0.05)
        assert math.fsum(c.weight for c in a) == pytest.approx(1.0)

    def test_fwhm_conversion(self):
        sigma = 1.0
        x = sigma / FWHM_TO_SIGMA / 2
        assert math.exp(-(x**2) / (2 * sigma**2)) == pytest.approx(0.5)

    def test_rejects(self):
        with pytest.raises(ConfigurationError):
            VelocitySettings(0)
        with pytest.raises(ConfigurationError):
            VelocitySettings(4, -1.0)
        with pytest.raises(ConfigurationError):
            draw_velocity_classes(VelocitySettings(64, 2000.0), 10.0)
        with pytest.raises(ConfigurationError):
            velocity_average([], lambda c: 0.0)

    def test_average_linear(self):
        classes = [VelocityClass(1.0, 0.0, 0.25), VelocityClass(2.0, 0.0, 0.75)]
        f = lambda c: np.array([c.v_l, c.v_l**2])
        g = lambda c: np.array([3.0, -c.v_l])
        avg = velocity_average(classes, lambda c: 2 * f(c) + g(c))
        np.testing.assert_allclose(avg, 2 * velocity_average(classes, f) + velocity_average(classes, g))
        np.testing.assert_allclose(velocity_average(classes, f), [1.75, 3.25])

    def test_small_spread_converges(self):
        dz = np.linspace(0, 400, 9)
        base = run_diffraction_sweep(SweepConfig((0.3,), dz, n_max=1, raman_nath=False))
        spread = run_diffraction_sweep(
            SweepConfig((0.3,), dz, n_max=1, raman_nath=False, velocity=VelocitySettings(8, 1e-5, 1e-8, seed=1))
        )
        np.testing.assert_allclose(spread.eta, base.eta, atol=1e-6)


class TestQuasimomentum:
    @given(st.floats(-50, 50))
    def test_wrap(self, k):
        q, m = wrap_quasimomentum(k)
        assert -1 <= q < 1
        assert q + 2 * m == pytest.approx(k, abs=1e-9)

    def test_state_is_plane_wave(self):
        g = lattice_grid(12.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            inside = tilted_initial_state(g, 0.4)
        assert inside.quasimomentum == pytest.approx(0.4)
        with pytest.warns(UserWarning, match="Brillouin"):
            outside = tilted_initial_state(g, 2.4)
        full = outside.full_amplitudes()
        np.testing.assert_allclose(full, np.exp(2.4j * g.xi) / math.sqrt(g.length), atol=1e-12)
        assert outside.norm == pytest.approx(1.0)


class TestThreads:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("CHISEL_THREADS", raising=False)
        assert 1 <= worker_count() <= 8

    @pytest.mark.parametrize("raw", ["zero", "0", "-2"])
    def test_invalid(self, monkeypatch, raw):
        monkeypatch.setenv("CHISEL_THREADS", raw)
        with pytest.raises(ConfigurationError):
            worker_count()

    def test_results_independent_of_threads(self, monkeypatch):
        dz = np.linspace(0, 300, 4)
        cfg = SweepConfig((0.3,), dz, n_max=1, velocity=VelocitySettings(4, 10.0, 0.007, seed=2))
        monkeypatch.setenv("CHISEL_THREADS", "1")
        a = run_diffraction_sweep(cfg)
        monkeypatch.setenv("CHISEL_THREADS", "4")
        b = run_diffraction_sweep(cfg)
        np.testing.assert_array_equal(a.eta, b.eta)
        assert _map_keyed(lambda k: k * k, [3, 1, 2]) == {3: 9, 1: 1, 2: 4}


@pytest.mark.slow
def test_beam_spreads_shift_plateau():
    # regression fixture: 16 seeded classes with 10 m/s and 7 mm/s FWHM spreads at 0.4 Gamma
    dz = np.linspace(0.0, 1500.0, 151)
    plain = run_diffraction_sweep(SweepConfig((0.4,), dz, n_max=3, raman_nath=False))
    spread = run_diffraction_sweep(
        SweepConfig((0.4,), dz, n_max=3, raman_nath=False, velocity=VelocitySettings(16, 10.0, 0.007, seed=0))
    )
    assert plain.order(0)[-1] == pytest.approx(0.36411818553793407, rel=1e-9)
    assert spread.order(0)[-1] == pytest.approx(0.36310793403619107, rel=1e-9)
    assert spread.order(1)[-1] == pytest.approx(0.24289223021082376, rel=1e-9)
