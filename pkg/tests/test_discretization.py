"""Residual assembly: Bernoulli, SG fluxes, heat source, Jacobian structure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermodd import materials as mat
from thermodd.constants import K_B_EV, Q
from thermodd.discretization import (
    AssemblyOptions,
    DeviceState,
    assemble_system,
    bernoulli,
    bernoulli_prime,
    edge_current,
    heat_generation,
    index_map,
    initial_state,
    pack_state,
    terminal_currents,
    unpack_state,
)
from thermodd.solver import SolverConfig, newton_solve, ramp_bias

from conftest import resistor_spec
from thermodd.studio import Device


class TestBernoulli:
    def test_removable_singularity(self):
        assert bernoulli(0.0) == 1.0

    def test_value_at_one(self):
        assert bernoulli(1.0) == pytest.approx(1.0 / (np.e - 1.0), rel=1e-14)
        assert bernoulli(1.0) == pytest.approx(0.581977, rel=1e-6)

    def test_reflection_identity(self):
        for x in (1.0, 0.3, 7.2, 40.0):
            assert bernoulli(-x) == pytest.approx(bernoulli(x) + x, rel=1e-13)
        assert bernoulli(-1.0) == pytest.approx(1.581977, rel=1e-6)

    def test_branch_continuity(self):
        # adjacent branches agree at the switch points up to the local slope
        for x0 in (1e-2, -1e-2, 250.0, -250.0, 500.0):
            a = x0 * (1 - 1e-9)
            b = x0 * (1 + 1e-9)
            gap = abs(bernoulli(b) - bernoulli(a))
            slope_bound = abs(bernoulli_prime(x0)) * abs(b - a)
            assert gap <= slope_bound * 1.01 + 1e-13 * max(abs(bernoulli(a)), 1.0)

    def test_extreme_arguments_finite(self):
        xs = np.array([-1e6, -750.0, 750.0, 1e6])
        assert np.all(np.isfinite(bernoulli(xs)))
        assert np.all(np.isfinite(bernoulli_prime(xs)))
        assert bernoulli(-1e6) == 1e6
        assert bernoulli(1e6) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(x=st.floats(-200.0, 200.0))
    def test_derivative_matches_fd(self, x):
        h = max(abs(x), 1.0) * 1e-6
        fd = (bernoulli(x + h) - bernoulli(x - h)) / (2 * h)
        assert bernoulli_prime(x) == pytest.approx(fd, rel=2e-7, abs=1e-12)


class TestEdgeCurrent:
    def test_equilibrium_edge_zero(self):
        j = edge_current("electron", 0.1, 0.1, 1e15, 1e15, 300.0, 1400.0, 1e-5)
        assert j == 0.0

    def test_pure_diffusion_reduces_to_central_difference(self):
        vt = K_B_EV * 300.0
        mu, L = 1400.0, 1e-5
        c_i, c_j = 1e15, 3e15
        j = edge_current("electron", 0.0, 0.0, c_i, c_j, 300.0, mu, L)
        assert j == pytest.approx(Q * mu * vt / L * (c_j - c_i), rel=1e-14)

    def test_boltzmann_ratio_exactly_current_free(self):
        vt = K_B_EV * 300.0
        rng = np.random.default_rng(3)
        for _ in range(50):
            dpsi = rng.uniform(-1.0, 1.0)
            c_i = 10 ** rng.uniform(5, 18)
            c_j = c_i * np.exp(dpsi / vt)
            if not np.isfinite(c_j) or c_j <= 0.0:
                continue
            j = edge_current("electron", 0.0, dpsi, c_i, c_j, 300.0, 1400.0, 1e-5)
            scale = Q * 1400.0 * vt / 1e-5 * max(c_i, c_j)
            assert abs(j) <= 1e-12 * scale
            j_p = edge_current("hole", 0.0, dpsi, c_i, c_i * np.exp(-dpsi / vt),
                               300.0, 470.0, 1e-5)
            assert abs(j_p) <= 1e-12 * Q * 470.0 * vt / 1e-5 * c_i


class TestEquilibriumResiduals:
    def test_uniform_slab_equilibrium_is_exact(self, table):
        spec = resistor_spec(doping=1e16)
        device = Device.from_spec(spec, table)
        state = initial_state(device.mesh, table)
        system = assemble_system(state)
        assert np.max(np.abs(system.residual)) <= 1e-10

    def test_builtin_potential_step(self, diode_device, solver_config):
        state, report = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        assert report.converged
        x, y = diode_device.mesh.node_coordinates_um()
        psi_n = state.psi[np.argmax(x)]
        psi_p = state.psi[np.argmin(x)]
        vt = K_B_EV * 300.0
        analytic = 2.0 * vt * np.log(1e16 / 1.08e10)
        assert psi_n - psi_p == pytest.approx(analytic, abs=1e-6)
        assert psi_n - psi_p == pytest.approx(0.712, abs=2e-3)


class TestJacobian:
    def test_structural_symmetry_and_adjacency(self, coupled_device):
        state = initial_state(coupled_device.mesh, coupled_device.materials)
        system = assemble_system(state)
        pattern = set(zip(system.rows.tolist(), system.cols.tolist()))
        for r, c in list(pattern)[:2000]:
            assert (c, r) in pattern
        imap = index_map(coupled_device.mesh)
        mesh = coupled_device.mesh
        adj = {(int(i), int(i)) for i in range(mesh.n_nodes)}
        for i, j in zip(mesh.edge_i, mesh.edge_j):
            adj.add((int(i), int(j)))
            adj.add((int(j), int(i)))
        for r, c in pattern:
            assert (int(imap.node[r]), int(imap.node[c])) in adj

    def test_residual_finite_for_valid_states(self, coupled_device):
        rng = np.random.default_rng(11)
        mesh = coupled_device.mesh
        state = initial_state(mesh, coupled_device.materials)
        semi = mesh.is_semiconductor
        for _ in range(5):
            n = state.n.copy()
            p = state.p.copy()
            n[semi] = 10 ** rng.uniform(0, 20, semi.sum())
            p[semi] = 10 ** rng.uniform(0, 20, semi.sum())
            trial = state.with_fields(
                psi=rng.uniform(-50, 50, mesh.n_nodes),
                n=n, p=p, T=rng.uniform(150, 700, mesh.n_nodes))
            system = assemble_system(trial, with_jacobian=False)
            assert np.all(np.isfinite(system.residual))

    def test_invalid_state_rejected(self, coupled_device):
        state = initial_state(coupled_device.mesh, coupled_device.materials)
        bad_n = state.n.copy()
        bad_n[np.flatnonzero(coupled_device.mesh.is_semiconductor)[0]] = -1.0
        with pytest.raises(Exception, match="positive"):
            assemble_system(state.with_fields(n=bad_n))


class TestHeatGeneration:
    def test_equilibrium_heat_is_zero(self, diode_device, solver_config):
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        for model in ("joule", "thermodynamic"):
            h = heat_generation(state, model=model)
            assert np.max(np.abs(h)) <= 1e-8  # W/cm^3; drive is ~1e10 on-state

    def test_resistor_matches_analytic_dissipation(self, resistor_device,
                                                   solver_config):
        state, _ = newton_solve(
            initial_state(resistor_device.mesh, resistor_device.materials),
            {}, solver_config)
        state, rep = ramp_bias(state, {"right": 0.1}, solver_config)
        assert rep.converged
        currents = terminal_currents(state)
        mesh = resistor_device.mesh
        h = heat_generation(state, model="joule")
        total = float(np.sum(h * mesh.area_semi))
        supplied = sum(state.bias[k] * v for k, v in currents.items())
        assert total == pytest.approx(supplied, rel=1e-2)
        # local check: H = J^2 / sigma with the bulk resistor values
        x, y = mesh.node_coordinates_um()
        mid = np.flatnonzero((np.abs(x - 2.0) < 0.3) & (np.abs(y - 0.25) < 0.1))
        j_avg = abs(currents["right"]) / (0.5e-4)
        mu = mat.mobility(resistor_device.materials["si"], "electron",
                          abs(0.1) / 4e-4, float(np.mean(state.T[mid])))
        sigma = Q * 1e16 * mu
        assert np.mean(h[mid]) == pytest.approx(j_avg**2 / sigma, rel=0.05)

    def test_heat_models_agree_on_unipolar_resistor(self, resistor_device,
                                                    solver_config):
        state, _ = newton_solve(
            initial_state(resistor_device.mesh, resistor_device.materials),
            {}, solver_config)
        state, _ = ramp_bias(state, {"right": 0.2}, solver_config)
        mesh = resistor_device.mesh
        joule = float(np.sum(heat_generation(state, model="joule") * mesh.area_semi))
        thermo = float(np.sum(
            heat_generation(state, model="thermodynamic") * mesh.area_semi))
        assert thermo == pytest.approx(joule, rel=0.05)

    def test_heat_nonnegative_in_joule_mode(self, resistor_device, solver_config):
        state, _ = newton_solve(
            initial_state(resistor_device.mesh, resistor_device.materials),
            {}, solver_config)
        state, _ = ramp_bias(state, {"right": 0.5}, solver_config)
        h = heat_generation(state, model="joule")
        assert np.all(h >= -1e-12)


class TestDiscreteConservation:
    def test_divergence_matches_recombination(self, diode_device, solver_config):
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        state, rep = ramp_bias(state, {"anode": 0.4}, solver_config)
        assert rep.converged
        system = assemble_system(state, with_jacobian=False)
        # converged residual means per-node divergence equals recombination
        assert system.norm() <= solver_config.abs_tol

    def test_terminal_sum_vanishes(self, diode_device, solver_config):
        state, _ = newton_solve(
            initial_state(diode_device.mesh, diode_device.materials),
            {}, solver_config)
        state, _ = ramp_bias(state, {"anode": 0.45}, solver_config)
        currents = terminal_currents(state)
        total = sum(currents.values())
        biggest = max(abs(v) for v in currents.values())
        assert abs(total) <= 1e-8 * biggest


class TestTransient:
    def test_backward_euler_terms(self, coupled_device):
        state = initial_state(coupled_device.mesh, coupled_device.materials)
        prev = state.with_fields(T=state.T - 5.0)
        steady = assemble_system(state, with_jacobian=False)
        trans = assemble_system(
            state, options=AssemblyOptions(dt=1e-9, prev=prev),
            with_jacobian=False)
        imap = index_map(coupled_device.mesh)
        # carrier fields identical: continuity rows unchanged
        sel = imap.inn >= 0
        assert np.allclose(trans.residual[imap.inn[sel]],
                           steady.residual[imap.inn[sel]])
        # heat rows pick up -c A dT/dt at free nodes
        free_T = np.setdiff1d(
            imap.iT, imap.iT[np.concatenate(
                [c.nodes for c in coupled_device.mesh.contacts if c.is_thermal])])
        diff = trans.residual[free_T] - steady.residual[free_T]
        assert np.all(diff < 0.0)  # T above prev: cooling term is negative

    def test_large_dt_approaches_steady_state(self, coupled_device):
        state = initial_state(coupled_device.mesh, coupled_device.materials)
        steady = assemble_system(state, with_jacobian=False)
        trans = assemble_system(
            state, options=AssemblyOptions(dt=1e6, prev=state),
            with_jacobian=False)
        assert np.allclose(trans.residual, steady.residual, atol=1e-12)


class TestStatePacking:
    def test_round_trip(self, coupled_device):
        rng = np.random.default_rng(5)
        state = initial_state(coupled_device.mesh, coupled_device.materials)
        semi = coupled_device.mesh.is_semiconductor
        n = state.n.copy()
        n[semi] *= rng.uniform(0.5, 2.0, semi.sum())
        state = state.with_fields(n=n)
        u = pack_state(state)
        rebuilt = unpack_state(u, state)
        assert np.array_equal(rebuilt.psi, state.psi)
        assert np.array_equal(rebuilt.n, state.n)
        assert np.array_equal(rebuilt.p, state.p)
        assert np.array_equal(rebuilt.T, state.T)
