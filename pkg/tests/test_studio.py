"""Experiment layer: LDMOS builder, analysis ops, field model, fits."""

import numpy as np
import pytest

from thermodd import geometry as geo
from thermodd.constants import Q
from thermodd.discretization import initial_state, terminal_currents
from thermodd.solver import SolverConfig, newton_solve, ramp_bias
from thermodd.studio import (
    IsothermalStateError,
    LdmosParams,
    StudioError,
    build_ldmos,
    drift_field_model,
    energy_balance,
    exponential_profile,
    fit_exponential_decay,
    fit_vertical_profile,
    hotspot,
)


class TestBuildLdmos:
    def test_default_layout_edges_present(self):
        params = LdmosParams()
        spec = build_ldmos(params)
        mesh = geo.build_mesh(spec)
        assert np.any(mesh.x_lines_um == params.locos_start)
        assert np.any(mesh.x_lines_um == params.locos_end)
        assert params.gate_length == 2.6
        assert params.locos_length == 3.5

    def test_zero_locos_rejected(self):
        with pytest.raises(StudioError):
            LdmosParams(locos_length=0.0)

    def test_substrate_depth_only_changes_vertical_extent(self):
        a = build_ldmos(LdmosParams(substrate_depth=20.0))
        b = build_ldmos(LdmosParams(substrate_depth=40.0))
        assert a.bounds.x1 == b.bounds.x1
        assert b.bounds.y1 - a.bounds.y1 == pytest.approx(20.0)
        # bottom contact follows the bottom face
        bottom_a = a.contact("substrate").segment
        bottom_b = b.contact("substrate").segment
        assert bottom_a.y0 == 0.0 and bottom_b.y0 == 0.0
        # electrical layout (x direction) unchanged
        assert [c.name for c in a.contacts] == [c.name for c in b.contacts]

    def test_gate_thicker_than_field_oxide_rejected(self):
        with pytest.raises(StudioError):
            LdmosParams(gate_oxide_nm=600.0, field_oxide=0.5)

    def test_contacts_and_kinds(self):
        spec = build_ldmos(LdmosParams())
        kinds = {c.name: c.kind for c in spec.contacts}
        assert kinds == {"source": "ohmic", "drain": "ohmic",
                         "gate": "gate", "substrate": "thermal+ohmic"}


class TestDriftFieldModel:
    def test_ohmic_limit(self):
        n, mu, ec = 2e16, 1100.0, 1e4
        j_sat = Q * n * mu * ec
        j = 1e-3 * j_sat
        e = drift_field_model(j, n, mu, ec)
        assert e == pytest.approx(j / (Q * n * mu), rel=2e-3)

    def test_half_saturation_current_gives_ec(self):
        n, mu, ec = 2e16, 1100.0, 1e4
        j = 0.5 * Q * n * mu * ec
        assert drift_field_model(j, n, mu, ec) == pytest.approx(ec, rel=1e-12)

    def test_saturation_current_diverges(self):
        n, mu, ec = 2e16, 1100.0, 1e4
        with pytest.raises(StudioError, match="saturation"):
            drift_field_model(Q * n * mu * ec, n, mu, ec)

    def test_negative_current_rejected(self):
        with pytest.raises(StudioError):
            drift_field_model(-1.0, 2e16, 1100.0, 1e4)

    def test_zero_current_zero_field(self):
        assert drift_field_model(0.0, 2e16, 1100.0, 1e4) == 0.0


class TestProfileFit:
    def test_exact_model_recovery(self):
        depth = np.linspace(0.0, 20.0, 30)
        values = exponential_profile(depth, 300.0, 100.0, 5.0)
        (t0, a, decay), r2 = fit_exponential_decay(depth, values)
        assert t0 == pytest.approx(300.0, rel=1e-6)
        assert a == pytest.approx(100.0, rel=1e-6)
        assert decay == pytest.approx(5.0, rel=1e-6)
        assert r2 >= 1.0 - 1e-12

    def test_constant_profile_rejected(self):
        depth = np.linspace(0.0, 10.0, 10)
        with pytest.raises(StudioError, match="degenerate"):
            fit_exponential_decay(depth, np.full(10, 300.0))

    def test_too_few_samples_rejected(self):
        with pytest.raises(StudioError, match="4 samples"):
            fit_exponential_decay(np.array([0.0, 1.0, 2.0]),
                                  np.array([3.0, 2.0, 1.0]))


class TestHotspot:
    def test_synthetic_single_hot_node(self, diode_device, solver_config):
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        T = state.T.copy()
        T[17] += 1.0
        probe = state.with_fields(T=T)
        spot = hotspot(probe)
        x, y = diode_device.mesh.node_coordinates_um()
        assert spot.x_um == x[17] and spot.y_um == y[17]
        assert spot.t_max_k == pytest.approx(301.0)

    def test_uniform_field_tie_breaks_to_smallest_xy(self, diode_device,
                                                     solver_config):
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        spot = hotspot(state)
        assert spot.t_max_k == pytest.approx(300.0)
        assert spot.x_um == 0.0 and spot.y_um == 0.0

    def test_isothermal_state_reported(self, diode_device):
        config = SolverConfig(thermal="isothermal")
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, config)
        with pytest.raises(IsothermalStateError):
            hotspot(state)


class TestEnergyBalance:
    def test_zero_bias_both_sides_zero(self, resistor_device, solver_config):
        state, _ = newton_solve(
            initial_state(resistor_device.mesh, resistor_device.materials),
            {}, solver_config)
        balance = energy_balance(state)
        assert abs(balance.heat_integral_w_per_um) <= 1e-15
        assert abs(balance.supplied_power_w_per_um) <= 1e-15

    def test_resistor_matches_v_squared_over_r(self, resistor_device,
                                               solver_config):
        state, _ = newton_solve(
            initial_state(resistor_device.mesh, resistor_device.materials),
            {}, solver_config)
        state, _ = ramp_bias(state, {"right": 0.1}, solver_config)
        balance = energy_balance(state)
        currents = terminal_currents(state)
        v_over_r = abs(currents["right"]) * 0.1 / 1e4
        assert balance.heat_integral_w_per_um == pytest.approx(v_over_r, rel=1e-2)
        assert balance.relative_mismatch <= 1e-2
