import numpy as np
import pytest
from scipy import signal
from scipy.signal import chirp

from lpvff.errors import InstabilityError, InvalidInputError, SchedulingError
from lpvff.feedforward import ff_dynamic_lpv
from lpvff.plant import (
    LeadController,
    PlantParams,
    check_stability,
    closed_loop_spectral_radius,
    io_residual,
    simulate_closed_loop,
    stiffness,
    stiffness_d1,
    stiffness_d2,
)
from lpvff.signals import SampledSignal, read_csv, rms
from lpvff.trajectory import ReferenceBundle, SchedulingSequence

T = 1e-3


def chirp_input(duration=4.0, f1=3.0):
    n = int(round(duration / T)) + 1
    t = np.arange(n) * T
    u = chirp(t, f0=0.1, t1=duration, f1=f1, phi=-90) * np.sin(np.pi * t / duration) ** 2
    return SampledSignal(u, T)


def open_loop(plant, u, rho):
    n = len(u)
    bundle = ReferenceBundle.constant(0.0, n, T)
    return simulate_closed_loop(plant, None, bundle, SchedulingSequence.frozen(rho, n, T), u)


class TestStiffness:
    def test_examples(self, plant):
        assert stiffness(plant, 0.5) == pytest.approx(9600.0, rel=1e-12)
        assert stiffness_d1(plant, 0.5) == 0.0
        assert stiffness_d1(plant, 0.3) == pytest.approx(-2.17687e4, rel=1e-5)
        assert stiffness_d2(plant, 0.5) == pytest.approx(76800.0, rel=1e-12)

    @pytest.mark.parametrize("rho", [0.15, 0.3, 0.5, 0.62, 0.85])
    def test_derivatives_match_central_differences(self, plant, rho):
        h = 1e-6
        fd1 = (stiffness(plant, rho + h) - stiffness(plant, rho - h)) / (2 * h)
        fd2 = (stiffness_d1(plant, rho + h) - stiffness_d1(plant, rho - h)) / (2 * h)
        scale = stiffness(plant, rho) / rho
        assert abs(fd1 - stiffness_d1(plant, rho)) <= 1e-6 * scale
        assert fd2 == pytest.approx(stiffness_d2(plant, rho), rel=1e-6)

    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.1, 1.3, np.nan])
    def test_outside_beam(self, plant, rho):
        for f in (stiffness, stiffness_d1, stiffness_d2):
            with pytest.raises(SchedulingError):
                f(plant, rho)

    def test_vectorized(self, plant):
        rho = np.array([0.25, 0.5, 0.75])
        assert np.allclose(stiffness(plant, rho), [2400 / 0.1875, 9600, 2400 / 0.1875])

    def test_invalid_params(self):
        with pytest.raises(InvalidInputError):
            PlantParams(m1=0.0)
        with pytest.raises(InvalidInputError):
            PlantParams(c2=-1e-4)


class TestController:
    def test_tuned_gives_unit_loop_gain_at_crossover(self, plant):
        ctrl = LeadController.tuned(plant, crossover_hz=2.0)
        wc = 2 * np.pi * 2.0
        # plant response from the input-output polynomial form, independent of the state space
        m1, m2, c, c2 = plant.m1, plant.m2, plant.c, plant.c2
        k = stiffness(plant, 0.5)
        s = 1j * wc
        g = (c * s + k) / (s**2 * (m1 * m2 * s**2 + (c * (m1 + m2) + c2 * m1) * s + k * (m1 + m2) + c * c2) + k * c2 * s)
        num, den = ctrl.transfer_function()
        assert abs(g * np.polyval(num, s) / np.polyval(den, s)) == pytest.approx(1.0, rel=1e-9)
        assert ctrl.zero_freq == pytest.approx(wc / 3)
        assert ctrl.pole_freq == pytest.approx(wc * 3)

    def test_tustin_matches_scipy_bilinear(self, plant):
        ctrl = LeadController.tuned(plant)
        num, den = ctrl.transfer_function()
        b_ref, a_ref = signal.bilinear(num, den, fs=1 / T)
        b, a = ctrl.discretize(T)
        assert np.allclose(b, b_ref, rtol=1e-12) and np.allclose(a, a_ref, rtol=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            LeadController(1.0, 10.0, 5.0)
        with pytest.raises(InvalidInputError):
            LeadController(-1.0, 1.0, 5.0)

    def test_default_is_stable_over_beam(self, plant):
        ctrl = LeadController.tuned(plant)
        check_stability(plant, ctrl, T)
        radii = [closed_loop_spectral_radius(plant, ctrl, r, T) for r in np.linspace(0.2, 0.8, 13)]
        assert max(radii) < 1.0

    def test_fast_crossover_is_unstable(self, plant):
        with pytest.raises(InstabilityError):
            check_stability(plant, LeadController.tuned(plant, crossover_hz=10.0), T)


class TestSimulation:
    def test_equilibrium(self, plant):
        n = 200
        bundle = ReferenceBundle.constant(0.2, n, T)
        rec = simulate_closed_loop(
            plant, LeadController.tuned(plant), bundle, SchedulingSequence.frozen(0.5, n, T),
            SampledSignal(np.zeros(n), T),
        )
        assert np.all(rec.y.values == 0.2)
        assert not np.any(rec.e.values) and not np.any(rec.u.values)

    def test_identities_and_determinism(self, plant, bench_reference, bench_theta):
        bundle, sched = bench_reference
        ctrl = LeadController.tuned(plant)
        u_ff = ff_dynamic_lpv(bundle, sched, bench_theta).u_ff
        a = simulate_closed_loop(plant, ctrl, bundle, sched, u_ff)
        b = simulate_closed_loop(plant, ctrl, bundle, sched, u_ff)
        assert np.array_equal(a.u.values, a.u_fb.values + a.u_ff.values)
        assert np.array_equal(a.e.values, bundle.r.values - a.y.values)
        for name in ("y", "u", "e", "u_fb"):
            assert np.array_equal(getattr(a, name).values, getattr(b, name).values)

    def test_feedforward_beats_feedback_only(self, plant, bench_reference, bench_theta):
        bundle, sched = bench_reference
        ctrl = LeadController.tuned(plant)
        ff = ff_dynamic_lpv(bundle, sched, bench_theta).u_ff
        with_ff = rms(simulate_closed_loop(plant, ctrl, bundle, sched, ff).e)
        without = rms(simulate_closed_loop(plant, ctrl, bundle, sched, ff * 0.0).e)
        assert with_ff * 10 <= without

    def test_divergence_raises(self, plant, bench_reference):
        bundle, sched = bench_reference
        unstable = LeadController.tuned(plant, crossover_hz=10.0)
        with pytest.raises(InstabilityError) as info:
            simulate_closed_loop(plant, unstable, bundle, sched, bundle.r * 0.0, divergence_bound=1.0)
        assert info.value.sample is not None

    def test_mismatched_signals_rejected(self, plant, bench_reference):
        bundle, sched = bench_reference
        with pytest.raises(InvalidInputError):
            simulate_closed_loop(plant, None, bundle, sched, SampledSignal(np.zeros(10), T))

    def test_scheduling_outside_beam(self, plant):
        n = 10
        with pytest.raises(SchedulingError):
            simulate_closed_loop(
                plant, None, ReferenceBundle.constant(0.0, n, T),
                SchedulingSequence.frozen(1.5, n, T), SampledSignal(np.zeros(n), T),
            )

    def test_rigid_body_mean_acceleration(self):
        # practically no ground damping: internal spring and damper forces cancel in the sum
        plant = PlantParams(c2=1e-12)
        force = 0.3
        u = SampledSignal(np.full(5001, force), T)
        y = open_loop(plant, u, 0.4).y
        curvature = np.polyfit(y.t, y.values, 2)[0]
        assert 2 * curvature == pytest.approx(force / (plant.m1 + plant.m2), rel=1e-2)

    def test_csv_columns(self, plant, tmp_path):
        rec = open_loop(plant, chirp_input(0.5), 0.5)
        path = tmp_path / "sim.csv"
        rec.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,r,y,e,u,u_fb,u_ff"
        assert read_csv(path)["y"] == rec.y


class TestIoResidual:
    @pytest.mark.parametrize("rho", np.linspace(0.2, 0.8, 5))
    def test_frozen_simulation_matches_io_form(self, plant, rho):
        u = chirp_input()
        y = open_loop(plant, u, rho).y
        assert io_residual(plant, rho, u, y) <= 1e-6

    def test_sensitive_to_output_error(self, plant):
        u = chirp_input()
        y = open_loop(plant, u, 0.5).y
        assert io_residual(plant, 0.5, u, y * 1.01) > 1e-3

    def test_zero_signals(self, plant):
        z = SampledSignal(np.zeros(50), T)
        assert io_residual(plant, 0.5, z, z) == 0.0

    def test_outside_beam(self, plant):
        z = SampledSignal(np.zeros(50), T)
        with pytest.raises(SchedulingError):
            io_residual(plant, 1.2, z, z)
