"""Material model evaluations against closed-form oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermodd import materials as mat
from thermodd.constants import K_B_EV


class TestIntrinsicDensity:
    def test_calibrated_at_300k(self, si):
        assert mat.intrinsic_density(si, 300.0) == pytest.approx(1.08e10, rel=1e-9)

    def test_400k_exceeds_100x(self, si):
        ni_400 = mat.intrinsic_density(si, 400.0)
        # evaluate the closed form independently
        nc, nv = mat.effective_dos(si, 400.0)
        eg = si.eg_0 - si.varshni_a * 400.0**2 / (400.0 + si.varshni_b)
        expected = np.sqrt(nc * nv) * np.exp(-eg / (2.0 * K_B_EV * 400.0))
        assert ni_400 == pytest.approx(expected, rel=1e-12)
        assert ni_400 > 100.0 * 1.08e10

    def test_definitional_identity(self, si):
        for T in (250.0, 300.0, 450.0, 650.0):
            ni = mat.intrinsic_density(si, T)
            nc, nv = mat.effective_dos(si, T)
            eg = mat.band_gap(si, T)
            assert ni**2 == pytest.approx(nc * nv * np.exp(-eg / (K_B_EV * T)),
                                          rel=1e-12)

    def test_validity_range_enforced(self, si):
        with pytest.raises(mat.MaterialError):
            mat.intrinsic_density(si, 150.0)
        with pytest.raises(mat.MaterialError):
            mat.intrinsic_density(si, 800.0)


class TestMobility:
    def test_zero_field_is_low_field_value(self, si):
        mu = mat.mobility(si, "electron", 0.0, 300.0)
        assert mu == pytest.approx(si.mu_n0, rel=1e-12)

    def test_half_at_critical_field(self, si):
        for carrier in ("electron", "hole"):
            ec = mat.saturation_field(si, carrier, 300.0)
            mu_low = mat.low_field_mobility(si, carrier, 300.0)
            mu = mat.mobility(si, carrier, ec, 300.0)
            assert mu == pytest.approx(mu_low / 2.0, rel=1e-12)

    def test_velocity_saturates(self, si):
        e = 1e7
        v = mat.mobility(si, "electron", e, 300.0) * e
        assert v <= si.v_sat_n
        assert v == pytest.approx(si.v_sat_n, rel=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(e1=st.floats(0.0, 1e6), e2=st.floats(0.0, 1e6),
           T=st.floats(250.0, 600.0))
    def test_drift_velocity_monotone_and_bounded(self, si, e1, e2, T):
        lo, hi = sorted((e1, e2))
        v_lo = mat.mobility(si, "electron", lo, T) * lo
        v_hi = mat.mobility(si, "electron", hi, T) * hi
        assert v_lo <= v_hi + 1e-9
        assert v_hi <= si.v_sat_n * (1.0 + 1e-12)


class TestThermalConductivity:
    def test_natural_at_300(self, si):
        k = mat.thermal_conductivity(si, mat.NATURAL_SI, 300.0)
        assert k == pytest.approx(148.0, rel=1e-12)
        assert 142.0 <= k <= 148.0

    def test_si28_at_300(self, si):
        k = mat.thermal_conductivity(si, mat.SI_28, 300.0)
        assert k == pytest.approx(200.0, rel=1e-12)
        assert 165.0 <= k <= 227.0

    def test_power_law_at_400(self, si):
        k = mat.thermal_conductivity(si, mat.NATURAL_SI, 400.0)
        assert k == pytest.approx(148.0 * (400.0 / 300.0) ** -1.3, rel=1e-12)
        assert k == pytest.approx(101.8, rel=1e-3)

    def test_unknown_variant_rejected(self, si):
        with pytest.raises(mat.MaterialError):
            mat.thermal_conductivity(si, "Si-30", 300.0)

    @settings(max_examples=30, deadline=None)
    @given(t1=st.floats(200.0, 700.0), t2=st.floats(200.0, 700.0))
    def test_decreasing_and_isotope_ordering(self, si, t1, t2):
        lo, hi = sorted((t1, t2))
        k_nat_lo = mat.thermal_conductivity(si, mat.NATURAL_SI, lo)
        k_nat_hi = mat.thermal_conductivity(si, mat.NATURAL_SI, hi)
        assert k_nat_hi <= k_nat_lo + 1e-12
        k_iso = mat.thermal_conductivity(si, mat.SI_28, lo)
        assert k_iso > k_nat_lo


class TestSrhRecombination:
    def test_equilibrium_null(self, si):
        ni = mat.intrinsic_density(si, 300.0)
        n = 50.0 * ni
        p = ni * ni / n
        assert mat.srh_recombination(n, p, 300.0, si) == pytest.approx(0.0, abs=1e-6)

    def test_symmetric_high_injection_value(self, si):
        ni = float(mat.intrinsic_density(si, 300.0))
        tau = si.tau_n
        r = mat.srh_recombination(10 * ni, 10 * ni, 300.0, si)
        assert r == pytest.approx(4.5 * ni / tau, rel=1e-12)

    def test_depletion_generates(self, si):
        ni = float(mat.intrinsic_density(si, 300.0))
        assert mat.srh_recombination(ni * 1e-3, ni * 1e-3, 300.0, si) < 0.0

    @settings(max_examples=40, deadline=None)
    @given(log_n=st.floats(2.0, 19.0), log_p=st.floats(2.0, 19.0),
           T=st.floats(250.0, 500.0))
    def test_sign_matches_np_product(self, si, log_n, log_p, T):
        n, p = 10.0**log_n, 10.0**log_p
        ni = float(mat.intrinsic_density_unchecked(si, T))
        r = mat.srh_recombination(n, p, T, si)
        assert np.sign(r) == np.sign(n * p - ni * ni)


class TestThermoelectricPower:
    def test_electron_at_nc(self, si):
        for T in (250.0, 300.0, 500.0):
            nc, _ = mat.effective_dos(si, T)
            alpha = mat.thermoelectric_power("electron", nc, T, si)
            assert alpha == pytest.approx(-K_B_EV * 2.5, rel=1e-12)
            assert alpha == pytest.approx(-2.154e-4, rel=1e-3)

    def test_hole_sign_symmetry(self, si):
        _, nv = mat.effective_dos(si, 300.0)
        alpha = mat.thermoelectric_power("hole", nv, 300.0, si)
        assert alpha == pytest.approx(2.154e-4, rel=1e-3)

    def test_zero_crossing(self, si):
        nc, _ = mat.effective_dos(si, 300.0)
        n_zero = nc * np.exp(2.5)
        assert mat.thermoelectric_power("electron", n_zero, 300.0, si) == (
            pytest.approx(0.0, abs=1e-18))
        assert mat.thermoelectric_power("electron", 0.5 * n_zero, 300.0, si) < 0
        assert mat.thermoelectric_power("electron", 2.0 * n_zero, 300.0, si) > 0

    @settings(max_examples=30, deadline=None)
    @given(log_c=st.floats(8.0, 19.0), T=st.floats(250.0, 500.0))
    def test_formula_symmetry(self, si, log_c, T):
        nc, nv = mat.effective_dos(si, T)
        ratio = 10.0**log_c / 1e19
        a_n = mat.thermoelectric_power("electron", ratio * nc, T, si)
        a_p = mat.thermoelectric_power("hole", ratio * nv, T, si)
        assert a_p == pytest.approx(-a_n, rel=1e-12)


class TestTableAndPurity:
    def test_variant_selection(self):
        table = mat.default_table()
        si = table["si"]
        assert table.active_k300(si) == 148.0
        assert table.with_variant(mat.SI_28).active_k300(si) == 200.0

    def test_variant_ordering_enforced(self):
        with pytest.raises(mat.MaterialError):
            mat.MaterialTable(materials={"si": mat.silicon(isotope_variants=(
                mat.IsotopeVariant(mat.NATURAL_SI, 200.0),
                mat.IsotopeVariant(mat.SI_28, 148.0)))})

    def test_evaluations_bit_identical(self, si):
        args = ("electron", 3.7e15, 341.5, si)
        assert (mat.thermoelectric_power(*args)
                == mat.thermoelectric_power(*args))
        assert (mat.mobility(si, "hole", 1.3e4, 411.0)
                == mat.mobility(si, "hole", 1.3e4, 411.0))
        assert np.array_equal(mat.intrinsic_density(si, np.array([300.0, 400.0])),
                              mat.intrinsic_density(si, np.array([300.0, 400.0])))

    def test_equilibrium_densities_neutral_and_consistent(self, si):
        for nd in (1e16, -5e15, 0.0, 1e20, -1e20):
            n, p = mat.equilibrium_densities(si, nd, 300.0)
            ni = float(mat.intrinsic_density(si, 300.0))
            assert n * p == pytest.approx(ni * ni, rel=1e-9)
            assert n - p == pytest.approx(nd, rel=1e-9, abs=1e-3)

    def test_invalid_material_parameters_rejected(self):
        with pytest.raises(mat.MaterialError):
            mat.silicon(mu_n0=-1.0)
        with pytest.raises(mat.MaterialError):
            mat.oxide(k_300=0.0)
