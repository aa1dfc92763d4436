"""Equation-of-state and pressure-equilibrium closure tests."""

import math

import numpy as np
import pytest

from stratflow.eos import (
    BarotropicLaw,
    CompleteEos,
    gibbs_residual,
    pressure_equilibrium_alpha,
    sound_speed,
)
from stratflow.errors import ClosureError, EosDomainError


def bisect_alpha(m1, m2, law1, law2, tol=1e-13):
    """Independent plain-bisection oracle for the closure root."""
    lo, hi = 1e-9, 1.0 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = law1.pressure(m1 / mid) - law2.pressure(m2 / (1.0 - mid))
        if g > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


class TestBarotropicPressure:
    def test_linear_law(self):
        law = BarotropicLaw(exponent=1.0, coeff=1.0)
        assert law.pressure(2.0) == pytest.approx(2.0)

    def test_power_law_by_hand(self):
        law = BarotropicLaw(exponent=2.0, coeff=1.0)
        assert law.pressure(3.0) == pytest.approx(9.0)

    def test_against_exp_log_oracle(self):
        # independent evaluation through exp(gamma * ln rho)
        law = BarotropicLaw(exponent=1.4, coeff=1.0)
        rho = 1.7
        expected = math.exp(1.4 * math.log(rho))
        assert law.pressure(rho) == pytest.approx(expected, rel=1e-14)

    def test_rejects_nonpositive_density(self):
        law = BarotropicLaw(exponent=1.4)
        with pytest.raises(EosDomainError):
            law.pressure(0.0)
        with pytest.raises(EosDomainError):
            law.pressure(-1.0)

    def test_monotone_on_grid(self):
        for law in (BarotropicLaw(1.4), BarotropicLaw(2.0, coeff=0.7, offset=0.3)):
            rho = np.linspace(0.1, 5.0, 200)
            p = law.pressure(rho)
            assert np.all(np.diff(p) > 0.0)

    def test_density_inverts_pressure(self):
        law = BarotropicLaw(exponent=1.4, coeff=2.0, offset=0.5)
        rho = 1.3
        assert law.density(law.pressure(rho)) == pytest.approx(rho, rel=1e-14)


class TestSoundSpeed:
    def test_quadratic_law(self):
        law = BarotropicLaw(exponent=2.0, coeff=1.0)
        assert sound_speed(law, 1.0) == pytest.approx(math.sqrt(2.0))

    def test_ideal_gas_textbook(self):
        eos = CompleteEos(gamma=1.4)
        # rho = 1, p = 1  =>  rho_e = p / (gamma - 1)
        rho_e = eos.rho_e_from_pressure(1.0)
        assert sound_speed(eos, 1.0, rho_e) == pytest.approx(math.sqrt(1.4))

    def test_matches_finite_difference_of_pressure(self):
        law = BarotropicLaw(exponent=1.4)
        rho = 1.7
        h = 1e-6
        dp = (law.pressure(rho + h) - law.pressure(rho - h)) / (2.0 * h)
        assert sound_speed(law, rho) == pytest.approx(math.sqrt(dp), rel=1e-6)


class TestGibbsResidual:
    def test_ideal_gas_residuals_small(self):
        eos = CompleteEos(gamma=1.4, c_v=1.0)
        r_e, r_v = gibbs_residual(eos, rho=1.0, e=1.0, delta=1e-4)
        assert r_e <= 1e-6
        assert r_v <= 1e-6

    def test_second_order_decay(self):
        eos = CompleteEos(gamma=1.4, c_v=1.0)
        r1 = gibbs_residual(eos, 1.0, 1.0, 1e-3)
        r2 = gibbs_residual(eos, 1.0, 1.0, 5e-4)
        for a, b in zip(r1, r2):
            assert b == pytest.approx(a / 4.0, rel=0.1)

    def test_zero_offset_matches_ideal(self):
        ideal = CompleteEos(gamma=1.4, c_v=0.8)
        stiff = CompleteEos(gamma=1.4, c_v=0.8, offset=0.0)
        assert gibbs_residual(ideal, 1.2, 0.9, 1e-4) == gibbs_residual(stiff, 1.2, 0.9, 1e-4)

    def test_random_states_second_order(self):
        rng = np.random.default_rng(7)
        eos = CompleteEos(gamma=1.6, c_v=1.3, offset=0.2)
        for _ in range(20):
            rho = rng.uniform(0.5, 2.0)
            e = rng.uniform(0.5, 2.0)
            if rho * e <= eos.offset:
                continue
            big = max(gibbs_residual(eos, rho, e, 1e-3))
            small = max(gibbs_residual(eos, rho, e, 1e-4))
            assert small < big

    def test_domain_error_on_perturbed_state(self):
        eos = CompleteEos(gamma=1.4, offset=0.5)
        # rho * e barely above the floor: the e - delta probe leaves the domain
        with pytest.raises(EosDomainError):
            gibbs_residual(eos, rho=1.0, e=0.5 + 1e-9, delta=1e-4)


class TestPressureEquilibrium:
    def test_symmetric_masses(self):
        law = BarotropicLaw(exponent=1.4)
        assert pressure_equilibrium_alpha(1.0, 1.0, law, law) == pytest.approx(0.5, abs=1e-12)

    def test_linear_laws_mass_ratio(self):
        # p = rho forces rho1 = rho2, hence alpha1 = m1 / (m1 + m2)
        law = BarotropicLaw(exponent=1.0)
        a = pressure_equilibrium_alpha(1.0, 3.0, law, law)
        assert a == pytest.approx(0.25, abs=1e-12)

    def test_against_bisection_oracle(self):
        law1 = BarotropicLaw(exponent=1.4)
        law2 = BarotropicLaw(exponent=2.0)
        a = pressure_equilibrium_alpha(0.8, 1.1, law1, law2)
        assert a == pytest.approx(bisect_alpha(0.8, 1.1, law1, law2), abs=1e-12)

    def test_residual_tolerance(self):
        law1 = BarotropicLaw(exponent=1.4, coeff=0.9)
        law2 = BarotropicLaw(exponent=1.8, coeff=1.2, offset=0.1)
        a = pressure_equilibrium_alpha(0.6, 1.7, law1, law2)
        p1 = law1.pressure(0.6 / a)
        p2 = law2.pressure(1.7 / (1.0 - a))
        assert abs(p1 - p2) <= 1e-12 * max(abs(p1), abs(p2))

    def test_mismatch_monotone_in_alpha(self):
        law1 = BarotropicLaw(exponent=1.4)
        law2 = BarotropicLaw(exponent=2.0, coeff=0.8)
        alphas = np.linspace(0.05, 0.95, 40)
        g = law1.pressure(0.8 / alphas) - law2.pressure(1.1 / (1.0 - alphas))
        assert np.all(np.diff(g) < 0.0)

    def test_joint_mass_scaling_invariance(self):
        law = BarotropicLaw(exponent=1.4)
        a1 = pressure_equilibrium_alpha(0.7, 1.9, law, law)
        a2 = pressure_equilibrium_alpha(1.4, 3.8, law, law)
        assert a1 == pytest.approx(a2, abs=1e-12)

    def test_vectorized_matches_scalar(self):
        law1 = BarotropicLaw(exponent=1.4)
        law2 = BarotropicLaw(exponent=2.0)
        rng = np.random.default_rng(3)
        m1 = rng.uniform(0.2, 2.0, size=16)
        m2 = rng.uniform(0.2, 2.0, size=16)
        vec = pressure_equilibrium_alpha(m1, m2, law1, law2)
        for i in range(16):
            assert vec[i] == pytest.approx(
                pressure_equilibrium_alpha(m1[i], m2[i], law1, law2), abs=1e-12)

    def test_complete_eos_closure(self):
        eos1 = CompleteEos(gamma=1.4)
        eos2 = CompleteEos(gamma=1.6, offset=0.1)
        m1, m2 = 0.9, 1.2
        E1, E2 = 1.8, 2.1   # partial internal energies m_k * e_k
        a = pressure_equilibrium_alpha(m1, m2, eos1, eos2, rho_e1=E1, rho_e2=E2)
        p1 = eos1.pressure(m1 / a, E1 / a)
        p2 = eos2.pressure(m2 / (1.0 - a), E2 / (1.0 - a))
        assert abs(p1 - p2) <= 1e-12 * max(abs(p1), abs(p2))

    def test_incompatible_ranges_raise(self):
        # two stiffened laws whose pressures stay on opposite sides
        law1 = BarotropicLaw(exponent=1.0, coeff=1e-12)
        law2 = BarotropicLaw(exponent=1.0, coeff=1.0, offset=-10.0)
        with pytest.raises(ClosureError):
            pressure_equilibrium_alpha(1.0, 1.0, law1, law2)

    def test_rejects_nonpositive_mass(self):
        law = BarotropicLaw(exponent=1.4)
        with pytest.raises(EosDomainError):
            pressure_equilibrium_alpha(0.0, 1.0, law, law)
