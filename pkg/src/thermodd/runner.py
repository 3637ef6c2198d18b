"""Run-plan execution: builds the device, runs experiments, writes outputs."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import (
    EquilibriumExperiment,
    IsotopeCompareExperiment,
    IvSweepExperiment,
    ProfileFitExperiment,
    RunPlan,
)
from .discretization import terminal_currents
from .output import (
    ensure_directory,
    write_field_dump,
    write_iv_table,
    write_report,
    write_xy_table,
)
from .solver import GUMMEL_THEN_NEWTON, NonConvergenceError, ramp_bias
from .studio import (
    Device,
    build_ldmos,
    compare_isotopes,
    energy_balance,
    fit_vertical_profile,
    hotspot,
    iv_sweep,
    solve_equilibrium,
)

log = logging.getLogger("thermodd.run")

EXIT_OK = 0
EXIT_CONVERGENCE = 1
EXIT_CONFIG = 2

OUTPUT_DIR_ENV = "THERMODD_OUT"


def _build_device(plan: RunPlan) -> Device:
    materials = plan.build_materials()
    if plan.ldmos is not None:
        return Device.from_spec(build_ldmos(plan.ldmos), materials)
    return Device.from_spec(plan.device_spec, materials)


def _ramp_to(device: Device, plan: RunPlan, gate_v: float, drain_v: float):
    config = plan.solver.solver_config()
    options = plan.solver.assembly_options()
    eq_state, _ = solve_equilibrium(device, config, options)
    state, report = ramp_bias(eq_state, {"gate": gate_v}, config, options,
                              coupling=GUMMEL_THEN_NEWTON)
    state, report = ramp_bias(state, {"gate": gate_v, "drain": drain_v},
                              config, options)
    return state, report


def _run_equilibrium(device: Device, plan: RunPlan, exp, out_dir: str) -> bool:
    config = plan.solver.solver_config()
    options = plan.solver.assembly_options()
    state, report = solve_equilibrium(device, config, options)
    write_field_dump(os.path.join(out_dir, "fields.csv"), state,
                     plan.solver.heat_model)
    write_report(os.path.join(out_dir, "report.txt"), {
        "converged": int(report.converged),
        "iterations": report.iterations,
        "residual_norm": report.final_residual_norm,
        "max_terminal_current_A_per_um": max(
            abs(v) for v in terminal_currents(state).values()) / 1e4,
    })
    return report.converged


def _run_iv_sweep(device: Device, plan: RunPlan, exp: IvSweepExperiment,
                  out_dir: str) -> bool:
    config = plan.solver.solver_config()
    options = plan.solver.assembly_options()
    sweeps = iv_sweep(device, exp.gate_biases_v,
                      (exp.drain_start_v, exp.drain_stop_v, exp.drain_step_v),
                      thermal=exp.thermal, config=config, options=options)
    write_iv_table(os.path.join(out_dir, "iv.csv"), sweeps)
    ok = all(s.failure is None and all(p.converged for p in s.points)
             for s in sweeps)
    report = {"converged": int(ok)}
    for sweep in sweeps:
        if sweep.failure is not None:
            report[f"failure_Vg_{sweep.gate_v}"] = sweep.failure
    write_report(os.path.join(out_dir, "report.txt"), report)
    return ok


def _run_isotope_compare(device: Device, plan: RunPlan,
                         exp: IsotopeCompareExperiment, out_dir: str) -> bool:
    config = plan.solver.solver_config()
    options = plan.solver.assembly_options()
    try:
        result = compare_isotopes(plan.ldmos,
                                  {"gate": exp.gate_bias_v,
                                   "drain": exp.drain_bias_v},
                                  config, options,
                                  materials=plan.build_materials())
    except NonConvergenceError as err:
        write_report(os.path.join(out_dir, "report.txt"),
                     {"converged": 0, "failure": str(err)})
        return False
    write_report(os.path.join(out_dir, "report.txt"), {
        "converged": 1,
        "dT_peak_K": result.dT_peak_k,
        "dT_mean_K": result.dT_mean_k,
        "k300_natural_W_mK": result.k300_natural_w_mk,
        "k300_si28_W_mK": result.k300_si28_w_mk,
        "Tpeak_natural_K": float(result.natural_state.T.max()),
        "Tpeak_si28_K": float(result.si28_state.T.max()),
    })
    mesh = result.natural_state.mesh
    x, y = mesh.node_coordinates_um()
    write_xy_table(os.path.join(out_dir, "dT_field.csv"), "x_um,y_um,dT_K",
                   (x, y, result.dT_field_k))
    return True


def _run_profile_fit(device: Device, plan: RunPlan, exp: ProfileFitExperiment,
                     out_dir: str) -> bool:
    config = plan.solver.solver_config()
    try:
        state, report = _ramp_to(device, plan, exp.gate_bias_v, exp.drain_bias_v)
    except NonConvergenceError as err:
        write_report(os.path.join(out_dir, "report.txt"),
                     {"converged": 0, "failure": str(err)})
        return False
    column = exp.column
    if column == "hotspot":
        column = hotspot(state).x_um
    fit = fit_vertical_profile(state, float(column))
    balance = energy_balance(state, plan.solver.assembly_options())
    write_report(os.path.join(out_dir, "report.txt"), {
        "converged": int(report.converged),
        "column_x_um": fit.column_x_um,
        "t_floor_K": fit.t_floor_k,
        "amplitude_K": fit.amplitude_k,
        "decay_um": fit.decay_um,
        "r_squared": fit.r_squared,
        "heat_integral_W_per_um": balance.heat_integral_w_per_um,
        "supplied_power_W_per_um": balance.supplied_power_w_per_um,
        "energy_mismatch": balance.relative_mismatch,
    })
    mesh = state.mesh
    lines = mesh.x_lines_um
    ix = int(np.argmin(np.abs(lines - fit.column_x_um)))
    nodes = ix * mesh.ny + np.arange(mesh.ny)
    nodes = nodes[mesh.is_semiconductor[nodes]]
    y = mesh.node_coordinates_um()[1][nodes]
    write_xy_table(os.path.join(out_dir, "profile.csv"), "y_um,T_K",
                   (y, state.T[nodes]))
    return report.converged


_RUNNERS = {
    EquilibriumExperiment: _run_equilibrium,
    IvSweepExperiment: _run_iv_sweep,
    IsotopeCompareExperiment: _run_isotope_compare,
    ProfileFitExperiment: _run_profile_fit,
}


def _execute_experiment(device: Device, plan: RunPlan, exp, base_dir: str):
    out_dir = os.path.join(base_dir, exp.name)
    ensure_directory(out_dir)
    runner = _RUNNERS[type(exp)]
    started = time.perf_counter()
    try:
        ok = runner(device, plan, exp, out_dir)
    except NonConvergenceError as err:
        log.error("experiment %s did not converge: %s", exp.name, err)
        write_report(os.path.join(out_dir, "report.txt"),
                     {"converged": 0, "failure": str(err)})
        return exp.name, False
    log.info("experiment %s finished in %.2f s (converged=%s)",
             exp.name, time.perf_counter() - started, ok)
    return exp.name, ok


def run(plan: RunPlan, out_dir: str | None = None, parallel: int = 1) -> int:
    """Execute all experiments; 0 iff everything converged.

    Output precedence: explicit ``out_dir`` argument, then the
    ``THERMODD_OUT`` environment variable, then the plan's ``output_dir``.
    Each experiment writes into its own subdirectory.
    """
    base_dir = out_dir or os.environ.get(OUTPUT_DIR_ENV) or plan.output_dir
    ensure_directory(base_dir)
    device = _build_device(plan)
    log.info("device mesh: %d x %d nodes", device.mesh.nx, device.mesh.ny)

    results = []
    if parallel > 1 and len(plan.experiments) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            futures = [pool.submit(_execute_experiment, device, plan, exp, base_dir)
                       for exp in plan.experiments]
            results = [f.result() for f in futures]
    else:
        for exp in plan.experiments:
            results.append(_execute_experiment(device, plan, exp, base_dir))

    failures = [name for name, ok in results if not ok]
    if failures:
        log.error("failed experiments: %s", ", ".join(failures))
        return EXIT_CONVERGENCE
    return EXIT_OK
