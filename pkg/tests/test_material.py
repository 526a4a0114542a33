import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from hotemboss.material import (
    ExpansionTable,
    MaterialCard,
    MaterialCardError,
    PointState,
    PronySeries,
    SingularTemperatureError,
    TableRangeError,
    ThermalExpansion,
    WlfShift,
    default_pmma_card,
    deviator,
    effective_moduli,
    load_material_card,
    material_from_dict,
    ramp_factor,
    reduced_time_increment,
    shift_factor,
    spherical,
    stress_update,
    thermal_strain,
    update_fictive_temperature,
)

from helpers import random_history, run_recursive
from oracles import fictive_temperature, hereditary_integral

PMMA_SHIFT = WlfShift(17.44, 51.6, 383.15)


def constant_expansion(alpha_l, alpha_g):
    return ThermalExpansion(ExpansionTable.constant(alpha_l), ExpansionTable.constant(alpha_g))


def card_with(shear, bulk, expansion=None, shift=PMMA_SHIFT, volume=None):
    return MaterialCard(
        density=1190.0, heat_capacity=1450.0, conductivity=0.19, glass_transition=383.15,
        shear=shear, bulk=bulk, shift=shift, volume=volume,
        expansion=expansion or constant_expansion(2e-4, 7e-5),
    )


class TestRampFactor:
    def test_zero_limit(self):
        assert ramp_factor(0.0) == 1.0

    def test_small_argument_is_accurate(self):
        x = np.array([1e-300, 1e-12, 1e-6])
        assert_allclose(ramp_factor(x), 1.0 - x / 2.0 + x * x / 6.0, rtol=1e-15)

    def test_large_argument(self):
        assert_allclose(ramp_factor(1e6), 1e-6, rtol=1e-15)


class TestPronySeries:
    def test_terms_are_sorted(self):
        p = PronySeries(1.0, [3.0, 2.0, 1.0], [10.0, 1.0, 100.0])
        assert_allclose(p.times, [1.0, 10.0, 100.0])
        assert_allclose(p.weights, [2.0, 3.0, 1.0])

    def test_limits(self):
        p = PronySeries(2.0, [3.0, 5.0], [1.0, 10.0])
        assert p.instantaneous == 10.0
        assert p(0.0) == 10.0
        assert_allclose(p(1e9), 2.0)

    @pytest.mark.parametrize(
        "args",
        [
            (1.0, [1.0], [0.0]),
            (1.0, [-1.0], [1.0]),
            (-1.0, [1.0], [1.0]),
            (1.0, [1.0, 2.0], [1.0]),
            (0.0, [], []),
        ],
    )
    def test_invalid(self, args):
        with pytest.raises(MaterialCardError):
            PronySeries(*args)

    def test_normalized(self):
        v = PronySeries(5.0, [1.0, 3.0], [1.0, 2.0]).normalized()
        assert v.long_term == 0.0
        assert_allclose(v.weights.sum(), 1.0, rtol=1e-15)


class TestShift:
    def test_reference_is_one(self):
        assert shift_factor(383.15, PMMA_SHIFT) == 1.0

    def test_zero_c1(self):
        assert_allclose(shift_factor([340.0, 500.0], WlfShift(0.0, 51.6, 383.15)), 1.0)

    def test_ten_kelvin_above_reference(self):
        assert_allclose(shift_factor(393.15, PMMA_SHIFT), 10.0 ** (174.4 / 61.6), rtol=1e-12)
        assert_allclose(shift_factor(393.15, PMMA_SHIFT), 677.9, rtol=1e-4)

    def test_monotone(self):
        T = np.linspace(340.0, 500.0, 400)  # Phi underflows to zero closer to the pole
        assert np.all(np.diff(shift_factor(T, PMMA_SHIFT)) > 0.0)

    @pytest.mark.parametrize("T", [383.15 - 51.6, 300.0, 383.15 - 51.6 + 1e-7])
    def test_pole_raises(self, T):
        with pytest.raises(SingularTemperatureError):
            shift_factor(T, PMMA_SHIFT)

    def test_c2_positive(self):
        with pytest.raises(MaterialCardError):
            WlfShift(17.44, 0.0, 383.15)


class TestReducedTime:
    def test_constant_reference(self):
        assert reduced_time_increment(383.15, 383.15, 2.0, PMMA_SHIFT) == 2.0

    def test_zero_step(self):
        assert reduced_time_increment(390.0, 370.0, 0.0, PMMA_SHIFT) == 0.0

    def test_isothermal_is_exact(self):
        T = 370.0
        assert reduced_time_increment(T, T, 0.3, PMMA_SHIFT) == shift_factor(T, PMMA_SHIFT) * 0.3

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            reduced_time_increment(390.0, 390.0, -1.0, PMMA_SHIFT)

    def test_ramp_converges_second_order(self):
        T0, T1, duration = 400.0, 360.0, 10.0
        exact, _ = integrate.quad(lambda t: shift_factor(T0 + (T1 - T0) * t / duration, PMMA_SHIFT),
                                  0.0, duration, epsabs=0.0, epsrel=1e-13, limit=200)
        errors = []
        for n in (20, 40, 80, 160):
            T = np.linspace(T0, T1, n + 1)
            xi = reduced_time_increment(T[:-1], T[1:], duration / n, PMMA_SHIFT).sum()
            errors.append(abs(xi - exact) / exact)
        orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert_allclose(orders, 2.0, atol=0.05)


class TestExpansion:
    def test_table_validation(self):
        with pytest.raises(MaterialCardError):
            ExpansionTable(np.array([1.0, 1.0]), np.array([1.0, 2.0]))
        with pytest.raises(MaterialCardError):
            ExpansionTable(np.array([1.0]), np.array([1.0]))
        with pytest.raises(MaterialCardError):
            ExpansionTable(np.array([1.0, 2.0]), np.array([1.0, np.inf]))

    def test_piecewise_linear_integral(self):
        table = ExpansionTable(np.array([300.0, 400.0, 500.0]), np.array([1e-4, 2e-4, 1e-4]))
        exact, _ = integrate.quad(lambda T: np.interp(T, table.temperatures, table.coefficients),
                                  320.0, 470.0, points=[400.0])
        assert_allclose(table.integral(320.0, 470.0), exact, rtol=1e-13)
        assert_allclose(table.integral(470.0, 320.0), -exact, rtol=1e-13)

    def test_out_of_range(self):
        table = ExpansionTable(np.array([300.0, 400.0]), np.array([1e-4, 1e-4]))
        with pytest.raises(TableRangeError):
            table.integral(300.0, 401.0)


class TestThermalStrain:
    def test_empty_ranges(self, pmma):
        assert thermal_strain(400.0, 400.0, 400.0, pmma) == 0.0

    def test_equal_coefficients_telescope(self):
        card = card_with(PronySeries(1.0, [1.0], [1.0]), PronySeries(3.0), constant_expansion(1e-4, 1e-4))
        for tf in (300.0, 380.0, 456.0):
            assert_allclose(thermal_strain(300.0, tf, 456.0, card), 1e-4 * (300.0 - 456.0), rtol=1e-13)

    def test_hand_integration(self):
        card = card_with(PronySeries(1.0, [1.0], [1.0]), PronySeries(3.0), constant_expansion(2e-4, 7e-5))
        assert_allclose(thermal_strain(300.0, 380.0, 456.0, card), -0.0208, rtol=1e-12)


class TestFictiveTemperature:
    def test_constant_history(self, pmma):
        state = PointState.initial(3, pmma, 420.0)
        T_f, _ = update_fictive_temperature(state, np.full(3, 420.0), np.array([0.0, 1.0, 1e9]), pmma)
        assert_allclose(T_f, 420.0, rtol=0, atol=0)

    def test_quench_keeps_initial(self, pmma):
        state = PointState.initial(1, pmma, 456.15)
        T_f, _ = update_fictive_temperature(state, np.array([300.0]), np.zeros(1), pmma)
        assert abs(T_f[0] - 456.15) < 1e-10

    def test_fast_relaxation_follows_temperature(self, pmma):
        state = PointState.initial(1, pmma, 456.15)
        T_f, _ = update_fictive_temperature(state, np.array([450.0]), np.array([1e12]), pmma)
        assert_allclose(T_f, 450.0, atol=1e-6)

    def test_negative_increment(self, pmma):
        with pytest.raises(ValueError):
            update_fictive_temperature(PointState.initial(1, pmma, 400.0), np.array([390.0]), np.array([-1.0]), pmma)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_bracketed_for_monotone_cooling(self, pmma, seed):
        rng = np.random.default_rng(seed)
        n = 30
        T = 440.0 - np.cumsum(np.concatenate([[0.0], rng.uniform(0.0, 3.0, n)]))
        dt = 10.0 ** rng.uniform(-3.0, 2.0, n)
        run = run_recursive(pmma, dt, T, np.zeros((n, 6)))
        assert np.all(run["T_f"] >= T - 1e-9)
        assert np.all(run["T_f"] <= T[0] + 1e-9)
        assert np.all(np.diff(run["xi"]) >= 0.0)


class TestStressUpdate:
    def test_free_thermal_contraction(self, pmma):
        state = PointState.initial(4, pmma, 400.0)
        d = np.full(4, -1e-3)
        s_dev, s_sph, _ = stress_update(state, np.zeros((4, 6)), d, d, np.full(4, 0.5), pmma)
        assert_allclose(s_dev, 0.0, atol=0)
        assert_allclose(s_sph, 0.0, atol=0)

    def test_step_strain_relaxation(self, pmma):
        e0 = deviator(np.array([[1e-3, -4e-4, 2e-4, 1e-4, 0.0, -3e-4]]))
        T = 380.0
        phi = shift_factor(T, pmma.shift)
        state = PointState.initial(1, pmma, T)
        s_dev, _, state = stress_update(state, e0, np.zeros(1), np.zeros(1), np.zeros(1), pmma)
        assert_allclose(s_dev, pmma.shear.instantaneous * e0, rtol=1e-14)
        t = 0.0
        for dt in (0.01, 0.5, 3.0, 100.0):
            d_xi = np.full(1, phi * dt)
            s_dev, _, state = stress_update(state, np.zeros((1, 6)), np.zeros(1), np.zeros(1), d_xi, pmma)
            t += dt
            assert_allclose(s_dev, pmma.shear(t * phi) * e0, rtol=1e-12)

    def test_elastic_limit(self):
        shear = PronySeries(1e6, [2e9], [1e300])
        card = card_with(shear, PronySeries(4e9))
        state = PointState.initial(1, card, 383.15)
        e = deviator(np.array([[2e-3, 0.0, -1e-3, 0.0, 5e-4, 0.0]]))
        for _ in range(10):
            s_dev, _, state = stress_update(state, e / 10, np.zeros(1), np.zeros(1), np.full(1, 1e3), card)
        assert_allclose(s_dev, (1e6 + 2e9) * e, rtol=1e-10)

    def test_relaxation_sandwich(self, pmma):
        e0 = np.array([[0.0, 0.0, 0.0, 0.0, 0.0, 1e-3]])
        state = PointState.initial(1, pmma, 383.15)
        s, _, state = stress_update(state, e0, np.zeros(1), np.zeros(1), np.zeros(1), pmma)
        for d_xi in 10.0 ** np.linspace(-4, 6, 30):
            s, _, state = stress_update(state, np.zeros((1, 6)), np.zeros(1), np.zeros(1), np.full(1, d_xi), pmma)
            assert pmma.shear.long_term * 1e-3 <= s[0, 5] <= pmma.shear.instantaneous * 1e-3

    def test_internal_tensors_stay_deviatoric(self, pmma, rng):
        dt, T, d_eps = random_history(rng, pmma, 40)
        state = PointState.initial(1, pmma, T[0])
        for k in range(40):
            d_xi = np.atleast_1d(reduced_time_increment(T[k], T[k + 1], dt[k], pmma.shift))
            de = d_eps[k][None]
            _, _, state = stress_update(state, deviator(de), spherical(de), np.zeros(1), d_xi, pmma)
            trace = state.dev_internal[..., :3].sum(axis=-1)
            norm = np.linalg.norm(state.dev_internal, axis=-1)
            assert np.all(np.abs(trace) <= 1e-10 * norm + 1e-300)

    def test_effective_moduli_limits(self, pmma):
        g1, g2 = effective_moduli(np.array([0.0, 1e30]), pmma)
        assert_allclose(g1, [pmma.shear.instantaneous, pmma.shear.long_term])
        assert_allclose(g2, pmma.bulk.instantaneous)

    def test_thermorheological_scaling(self, pmma, rng):
        """Scaling every relaxation time and every reduced-time step by c changes nothing."""
        c = 7.5
        scaled = card_with(
            PronySeries(pmma.shear.long_term, pmma.shear.weights, c * pmma.shear.times),
            pmma.bulk,
            pmma.expansion,
            pmma.shift,
            PronySeries(0.0, pmma.volume.weights, c * pmma.volume.times),
        )
        n = 30
        dt, T, d_eps = random_history(rng, pmma, n)
        states = [PointState.initial(1, card, T[0]) for card in (pmma, scaled)]
        for k in range(n):
            d_xi = np.atleast_1d(reduced_time_increment(T[k], T[k + 1], dt[k], pmma.shift))
            out = []
            for i, (card, factor) in enumerate(((pmma, 1.0), (scaled, c))):
                T_f, q = update_fictive_temperature(states[i], np.array([T[k + 1]]), factor * d_xi, card)
                e_th = thermal_strain(T[k + 1], T_f, T[0], card)
                de = d_eps[k][None]
                s_dev, s_sph, states[i] = stress_update(
                    states[i], deviator(de), spherical(de), e_th - states[i].thermal_strain, factor * d_xi, card)
                states[i].fict_internal, states[i].last_temperature = q, np.array([T[k + 1]])
                out.append((s_dev, s_sph, T_f))
            for a, b in zip(out[0], out[1]):
                assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 50))
    def test_matches_direct_quadrature(self, pmma, seed, n):
        rng = np.random.default_rng(seed)
        dt, T, d_eps = random_history(rng, pmma, n)
        run = run_recursive(pmma, dt, T, d_eps)
        eps = np.vstack([np.zeros(6), np.cumsum(d_eps, axis=0)])
        tau = pmma.shear.times[0]
        T_f = fictive_temperature(run["xi"], T, pmma.volume, tau)
        assert_allclose(run["T_f"], T_f, rtol=0, atol=1e-4 * max(1.0, np.ptp(T)))
        e_th = thermal_strain(T, T_f, T[0], pmma)
        s_dev = hereditary_integral(run["xi"], deviator(eps), pmma.shear, tau)
        s_sph = hereditary_integral(run["xi"], spherical(eps) - e_th, pmma.bulk, tau)[:, 0]
        assert np.abs(run["s_dev"] - s_dev).max() <= 1e-4 * np.abs(s_dev).max()
        assert np.abs(run["s_sph"] - s_sph).max() <= 1e-4 * np.abs(s_sph).max()


class TestCardLoading:
    def doc(self):
        with open(__import__("hotemboss").__path__[0] + "/data/pmma_desk.json") as fh:
            return json.load(fh)

    def test_moduli_scaling(self, pmma):
        doc = self.doc()
        assert_allclose(pmma.shear.long_term, 2.0 * doc["shear_modulus"]["long_term_Pa"])
        assert_allclose(pmma.shear.weights, 2.0 * np.array(doc["shear_modulus"]["weights_Pa"]))
        assert_allclose(pmma.bulk.long_term, 3.0 * doc["bulk_modulus"]["long_term_Pa"])
        assert pmma.bulk.n_terms == 0

    def test_celsius_converted(self, pmma):
        assert_allclose(pmma.glass_transition, 383.15)
        assert_allclose(pmma.shift.t_ref, 383.15)
        assert_allclose(pmma.expansion.liquid.temperatures, [273.15, 523.15])

    def test_volume_defaults_to_normalized_shear(self, pmma):
        assert_allclose(pmma.volume.times, pmma.shear.times)
        assert abs(pmma.volume.weights.sum() - 1.0) <= 1e-12
        assert pmma.volume.long_term == 0.0

    def test_round_trip_from_file(self, tmp_path, pmma):
        path = tmp_path / "card.json"
        path.write_text(json.dumps(self.doc()))
        card = load_material_card(path)
        assert_allclose(card.shear.weights, pmma.shear.weights)

    def test_unknown_key_rejected(self):
        doc = self.doc()
        doc["viscosity_Pa_s"] = 1.0
        with pytest.raises(MaterialCardError, match="viscosity_Pa_s"):
            material_from_dict(doc)

    def test_missing_key_rejected(self):
        doc = self.doc()
        del doc["wlf"]
        with pytest.raises(MaterialCardError):
            material_from_dict(doc)

    def test_nonpositive_property_rejected(self):
        doc = self.doc()
        doc["density_kg_m3"] = 0.0
        with pytest.raises(MaterialCardError):
            material_from_dict(doc)

    def test_unnormalized_volume_rejected(self):
        doc = self.doc()
        doc["volume_relaxation"] = {"weights": [0.5, 0.4], "relaxation_times_s": [1.0, 10.0]}
        with pytest.raises(MaterialCardError, match="sum to one"):
            material_from_dict(doc)

    def test_default_card_is_pmma(self):
        card = default_pmma_card()
        assert card.shear.n_terms == 4
