"""Configuration parsing, printing, CLI behavior and output formats."""

import os
import subprocess
import sys

import numpy as np
import pytest

from thermodd.config import (
    ConfigSyntaxError,
    ConfigValueError,
    EquilibriumExperiment,
    IsotopeCompareExperiment,
    IvSweepExperiment,
    ProfileFitExperiment,
    MaterialOverrides,
    RunPlan,
    SolverSection,
    UnknownKeyError,
    parse_config,
    print_config,
)
from thermodd.cli import main as cli_main
from thermodd.output import fmt, read_report
from thermodd.studio import LdmosParams

MINIMAL = """
device:
  ldmos: {}
experiments:
  - kind: equilibrium
    name: eq
"""

DIODE_SPEC = """
device:
  spec:
    ambient_K: 300.0
    regions:
      - {material: si, rect_um: [0, 0, 4, 0.2]}
    doping:
      - {species: acceptor, shape: uniform, peak_cm3: 1.0e16, rect_um: [0, 0, 2, 0.2]}
      - {species: donor, shape: uniform, peak_cm3: 1.0e16, rect_um: [2, 0, 4, 0.2]}
    contacts:
      - {name: anode, kind: thermal+ohmic, segment_um: [0, 0, 0, 0.2]}
      - {name: cathode, kind: thermal+ohmic, segment_um: [4, 0, 4, 0.2]}
    mesh:
      x_hints_um: [2.0]
      min_spacing_um: 0.02
      max_spacing_um: 0.25
experiments:
  - kind: equilibrium
    name: eq
"""


class TestParse:
    def test_minimal_fills_defaults(self):
        plan = parse_config(MINIMAL)
        assert plan.ldmos == LdmosParams()
        assert plan.solver == SolverSection()
        assert plan.materials == MaterialOverrides()
        assert plan.output_dir == "out"
        assert plan.seed == 0
        assert plan.experiments == (EquilibriumExperiment(name="eq"),)

    def test_unknown_key_named_in_error(self):
        text = MINIMAL.replace("ldmos: {}", "ldmos: {gat_length_um: 2.0}")
        with pytest.raises(UnknownKeyError, match="gat_length_um"):
            parse_config(text)

    def test_unknown_top_level_key(self):
        with pytest.raises(UnknownKeyError, match="outputs"):
            parse_config(MINIMAL + "outputs: somewhere\n")

    def test_syntax_error_carries_location(self):
        with pytest.raises(ConfigSyntaxError, match="line"):
            parse_config("device:\n  ldmos: {\n")

    def test_material_override_reaches_table(self):
        text = MINIMAL + """
materials:
  si:
    k300_natural_W_mK: 142.0
"""
        plan = parse_config(text)
        table = plan.build_materials()
        si = table["si"]
        assert si.variant("natural-Si").k_300 == 142.0
        assert table.active_k300(si) == 142.0

    def test_raw_device_spec(self):
        plan = parse_config(DIODE_SPEC)
        assert plan.device_spec is not None
        assert len(plan.device_spec.regions) == 1
        assert plan.device_spec.contact("anode").kind == "thermal+ohmic"

    def test_missing_experiments_rejected(self):
        with pytest.raises(ConfigValueError, match="experiments"):
            parse_config("device:\n  ldmos: {}\n")

    def test_isotope_compare_needs_ldmos(self):
        text = DIODE_SPEC + """
  - kind: isotope-compare
    name: iso
"""
        with pytest.raises(ConfigValueError, match="ldmos"):
            parse_config(text)

    def test_invalid_solver_value_rejected(self):
        with pytest.raises(ConfigValueError, match="coupling"):
            parse_config(MINIMAL + "solver:\n  coupling: banana\n")

    def test_duplicate_experiment_names_rejected(self):
        text = MINIMAL + "  - kind: equilibrium\n    name: eq\n"
        with pytest.raises(ConfigValueError, match="unique"):
            parse_config(text)


def random_plan(rng) -> RunPlan:
    experiments = [EquilibriumExperiment(name="eq")]
    if rng.random() < 0.7:
        experiments.append(IvSweepExperiment(
            name="iv",
            gate_biases_v=tuple(round(float(v), 3) for v in
                                sorted(rng.uniform(0.5, 5.0, rng.integers(1, 4)))),
            drain_start_v=0.0,
            drain_stop_v=float(rng.uniform(1.0, 40.0)),
            drain_step_v=float(rng.uniform(0.5, 5.0)),
            thermal=bool(rng.random() < 0.5)))
    if rng.random() < 0.5:
        experiments.append(IsotopeCompareExperiment(
            name="iso", gate_bias_v=float(rng.uniform(1, 5)),
            drain_bias_v=float(rng.uniform(1, 40))))
    if rng.random() < 0.5:
        experiments.append(ProfileFitExperiment(
            name="fit", gate_bias_v=float(rng.uniform(1, 5)),
            drain_bias_v=float(rng.uniform(1, 40)),
            column="hotspot" if rng.random() < 0.5 else float(rng.uniform(0, 6))))
    return RunPlan(
        ldmos=LdmosParams(
            gate_length=float(rng.uniform(1.0, 4.0)),
            locos_length=float(rng.uniform(1.0, 5.0)),
            gate_oxide_nm=float(rng.uniform(10.0, 60.0)),
            field_oxide=float(rng.uniform(0.3, 1.0)),
            substrate_depth=float(rng.uniform(10.0, 30.0)),
            body_peak=float(rng.uniform(0.5, 5.0)) * 1e17,
            drift_doping=float(rng.uniform(0.5, 5.0)) * 1e16,
            contact_doping=1e20,
            substrate_doping=1e15,
            isotope="Si-28" if rng.random() < 0.5 else "natural-Si"),
        device_spec=None,
        materials=MaterialOverrides(
            si_k300_natural_w_mk=float(rng.uniform(142.0, 148.0)),
            si_k300_si28_w_mk=float(rng.uniform(165.0, 227.0)),
            si_tau_n_s=float(rng.uniform(0.1, 10.0)) * 1e-6),
        solver=SolverSection(
            abs_tol=float(10.0 ** rng.uniform(-12, -8)),
            max_iterations=int(rng.integers(10, 100)),
            max_bias_step_v=float(rng.uniform(0.2, 2.0)),
            heat_model="thermodynamic" if rng.random() < 0.5 else "joule",
            thermal_drift=bool(rng.random() < 0.3)),
        experiments=tuple(experiments),
        output_dir=f"out_{rng.integers(0, 1000)}",
        seed=int(rng.integers(0, 2**31)),
    )


class TestRoundTrip:
    def test_fifty_case_corpus(self):
        rng = np.random.default_rng(2024)
        for case in range(50):
            plan = random_plan(rng)
            text = print_config(plan)
            again = parse_config(text)
            assert again == plan, f"round trip failed for case {case}"

    def test_raw_spec_round_trip(self):
        plan = parse_config(DIODE_SPEC)
        assert parse_config(print_config(plan)) == plan


class TestFloatSerialization:
    def test_seventeen_digit_exactness(self):
        rng = np.random.default_rng(5)
        values = list(rng.standard_normal(200) * 10.0 ** rng.integers(-30, 30, 200))
        values += [0.0, 1.0, -1.0, 1e-300, np.pi, 2.0 / 3.0]
        for v in values:
            assert float(fmt(v)) == v


class TestCliAndOutputs:
    def _write(self, tmp_path, text):
        path = tmp_path / "plan.yaml"
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_equilibrium_smoke_exit_zero(self, tmp_path):
        out = tmp_path / "out"
        cfg = self._write(tmp_path, DIODE_SPEC)
        rc = cli_main([cfg, "--out", str(out), "--log-level", "WARNING"])
        assert rc == 0
        fields = out / "eq" / "fields.csv"
        lines = fields.read_text().splitlines()
        assert lines[0] == "x_um,y_um,psi_V,n_cm3,p_cm3,T_K,H_Wcm3"
        report = read_report(out / "eq" / "report.txt")
        assert report["converged"] == "1"

    def test_field_dump_row_count_matches_mesh(self, tmp_path):
        # 3x3 mesh -> 9 data rows + header
        text = """
device:
  spec:
    regions:
      - {material: si, rect_um: [0, 0, 1, 1]}
    doping:
      - {species: donor, shape: uniform, peak_cm3: 1.0e16, rect_um: [0, 0, 1, 1]}
    contacts:
      - {name: left, kind: thermal+ohmic, segment_um: [0, 0, 0, 1]}
    mesh:
      min_spacing_um: 0.5
      max_spacing_um: 0.5
experiments:
  - kind: equilibrium
    name: eq
"""
        out = tmp_path / "out"
        rc = cli_main([self._write(tmp_path, text), "--out", str(out),
                       "--log-level", "WARNING"])
        assert rc == 0
        lines = (out / "eq" / "fields.csv").read_text().splitlines()
        assert len(lines) == 1 + 9

    def test_dump_values_reparse_exactly(self, tmp_path):
        out = tmp_path / "out"
        cfg = self._write(tmp_path, DIODE_SPEC)
        assert cli_main([cfg, "--out", str(out), "--log-level", "WARNING"]) == 0
        lines = (out / "eq" / "fields.csv").read_text().splitlines()[1:]
        for line in lines[:50]:
            for token in line.split(","):
                value = float(token)
                assert fmt(value) == token or float(fmt(value)) == value

    def test_unreachable_bias_exits_one_with_partial_outputs(self, tmp_path):
        # diode forward-biased hard under a deliberately tiny iteration cap:
        # the sweep must fail mid-way, keep its partial table, and exit 1
        plan_text = """
device:
  spec:
    ambient_K: 300.0
    regions:
      - {material: si, rect_um: [0, 0, 4, 0.2]}
    doping:
      - {species: acceptor, shape: uniform, peak_cm3: 1.0e16, rect_um: [0, 0, 2, 0.2]}
      - {species: donor, shape: uniform, peak_cm3: 1.0e16, rect_um: [2, 0, 4, 0.2]}
    contacts:
      - {name: gate, kind: thermal+ohmic, segment_um: [0, 0, 0, 0.2]}
      - {name: drain, kind: thermal+ohmic, segment_um: [4, 0, 4, 0.2]}
    mesh:
      x_hints_um: [2.0]
      min_spacing_um: 0.02
      max_spacing_um: 0.25
experiments:
  - kind: iv-sweep
    name: sweep
    gate_biases_V: [0.0]
    drain_start_V: 0.0
    drain_stop_V: 0.9
    drain_step_V: 0.3
solver:
  max_iterations: 2
  step_halving_depth: 0
  polish_steps: 0
"""
        out = tmp_path / "out"
        rc = cli_main([self._write(tmp_path, plan_text), "--out", str(out),
                       "--log-level", "WARNING"])
        assert rc == 1
        iv = (out / "sweep" / "iv.csv").read_text().splitlines()
        assert iv[0] == "Vg_V,Vd_V,Id_A_per_um,Tpeak_K,converged"
        assert 1 <= len(iv) < 5  # partial sweep preserved
        report = read_report(out / "sweep" / "report.txt")
        assert report["converged"] == "0"

    def test_rerun_byte_identical(self, tmp_path):
        cfg = self._write(tmp_path, DIODE_SPEC)
        out1 = tmp_path / "o1"
        out2 = tmp_path / "o2"
        assert cli_main([cfg, "--out", str(out1), "--log-level", "WARNING"]) == 0
        assert cli_main([cfg, "--out", str(out2), "--log-level", "WARNING"]) == 0
        data1 = (out1 / "eq" / "fields.csv").read_bytes()
        data2 = (out2 / "eq" / "fields.csv").read_bytes()
        assert data1 == data2
        assert ((out1 / "eq" / "report.txt").read_bytes()
                == (out2 / "eq" / "report.txt").read_bytes())

    def test_config_error_exit_two(self, tmp_path):
        rc = cli_main([self._write(tmp_path, "device:\n  ldmos: {bogus: 1}\n"),
                       "--log-level", "WARNING"])
        assert rc == 2

    def test_missing_config_exit_two(self, tmp_path):
        rc = cli_main([str(tmp_path / "nope.yaml")])
        assert rc == 2

    def test_unwritable_output_dir_exit_two(self, tmp_path):
        blocker = tmp_path / "blocked"
        blocker.write_text("file, not a dir")
        cfg = self._write(tmp_path, DIODE_SPEC)
        rc = cli_main([cfg, "--out", str(blocker), "--log-level", "WARNING"])
        assert rc == 2

    def test_env_var_default_output(self, tmp_path, monkeypatch):
        out = tmp_path / "env_out"
        monkeypatch.setenv("THERMODD_OUT", str(out))
        cfg = self._write(tmp_path, DIODE_SPEC)
        assert cli_main([cfg, "--log-level", "WARNING"]) == 0
        assert (out / "eq" / "fields.csv").exists()

    def test_parallel_execution(self, tmp_path):
        text = DIODE_SPEC + """
  - kind: equilibrium
    name: eq2
"""
        out = tmp_path / "out"
        rc = cli_main([self._write(tmp_path, text), "--out", str(out),
                       "--parallel", "2", "--log-level", "WARNING"])
        assert rc == 0
        assert (out / "eq" / "fields.csv").exists()
        assert (out / "eq2" / "fields.csv").exists()

    def test_console_entry_point_runs(self, tmp_path):
        cfg = self._write(tmp_path, MINIMAL.replace(
            "name: eq", "name: eq"))
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "thermodd", cfg, "--out", str(out),
             "--log-level", "WARNING"],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
