"""Experiment layer: LDMOS builder, I-V sweeps, hotspot and profile analysis.

Bundles the geometry, materials and solver into the study workflows: output
sweeps with and without self-heating, isotope comparison, vertical
temperature-profile fitting, the analytic drift-region field model, and the
energy-balance audit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .constants import CM_TO_UM, Q, UM_TO_CM
from .discretization import (
    AssemblyOptions,
    DeviceState,
    heat_generation,
    initial_state,
    terminal_currents,
)
from .geometry import (
    Contact,
    DeviceSpec,
    DopingProfile,
    GeometryError,
    make_device_mesh,
    Mesh,
    MeshHints,
    Rect,
    Region,
    Segment,
)
from .materials import NATURAL_SI, MaterialTable, default_table
from .solver import (
    FULL_NEWTON,
    ISOTHERMAL,
    NonConvergenceError,
    SolverConfig,
    newton_solve,
    ramp_bias,
    solve_frozen_heat,
)

log = logging.getLogger("thermodd.studio")

# n+ polysilicon gate: work-function offset vs. the intrinsic reference
NPLUS_GATE_OFFSET_V = 0.5933


class StudioError(ValueError):
    """Invalid experiment request."""


@dataclass(frozen=True)
class LdmosParams:
    """Lateral DMOS structure parameters (lengths in um, doping in cm^-3)."""

    gate_length: float = 2.6
    locos_length: float = 3.5
    gate_oxide_nm: float = 25.0
    field_oxide: float = 0.5
    substrate_depth: float = 20.0
    body_peak: float = 1.0e17
    drift_doping: float = 2.0e16
    contact_doping: float = 1.0e20
    substrate_doping: float = 1.0e15
    isotope: str = NATURAL_SI
    ambient: float = 300.0

    # layout constants not exposed as headline knobs; the body gaussian and
    # drift depth are sized so the channel/drift junction sits just short of
    # the LOCOS edge and the drift stays below velocity-saturation crowding
    source_length: float = 0.5
    gate_source_overlap: float = 0.2
    drain_length: float = 0.5
    junction_depth: float = 0.3
    drift_depth: float = 2.0
    body_sigma_x: float = 1.35
    body_sigma_y: float = 0.6

    def __post_init__(self):
        if self.gate_length <= 0.0 or self.locos_length <= 0.0:
            raise StudioError("gate and LOCOS lengths must be positive")
        for name in ("body_peak", "drift_doping", "contact_doping",
                     "substrate_doping"):
            if getattr(self, name) <= 0.0:
                raise StudioError(f"{name} must be positive")
        if self.gate_oxide_nm <= 0.0 or self.field_oxide <= 0.0:
            raise StudioError("oxide thicknesses must be positive")
        if self.gate_oxide_nm * 1e-3 >= self.field_oxide:
            raise StudioError("gate oxide must be thinner than the field oxide")
        if self.substrate_depth <= self.drift_depth:
            raise StudioError("substrate must be deeper than the drift layer")

    @property
    def gate_start(self) -> float:
        return self.source_length - self.gate_source_overlap

    @property
    def locos_start(self) -> float:
        return self.gate_start + self.gate_length

    @property
    def locos_end(self) -> float:
        return self.locos_start + self.locos_length

    @property
    def width(self) -> float:
        return self.locos_end + self.drain_length


def build_ldmos(params: LdmosParams, refine: float = 1.0) -> DeviceSpec:
    """Device description of the LDMOS test structure.

    Silicon substrate with an n drift layer, laterally diffused p body and
    n+ source/drain; a single oxide slab on top with the gate electrode as
    an equipotential line at the gate-oxide height (the thick field oxide
    over the drift region is the unguarded remainder of the slab).
    Contacts: source/body tie on the left face, drain on the right face,
    thermal+ohmic substrate plane at the bottom.
    """
    p = params
    h = p.substrate_depth
    top = h + p.field_oxide
    t_gox = p.gate_oxide_nm * 1e-3
    regions = (
        Region("si", Rect(0.0, 0.0, p.width, h)),
        Region("sio2", Rect(0.0, h, p.locos_start, top)),
        Region("sio2", Rect(p.locos_start, h, p.locos_end, top)),
        Region("sio2", Rect(p.locos_end, h, p.width, top)),
    )
    doping = (
        DopingProfile("acceptor", "uniform", p.substrate_doping,
                      rect=Rect(0.0, 0.0, p.width, h)),
        DopingProfile("donor", "uniform", p.drift_doping,
                      rect=Rect(0.0, h - p.drift_depth, p.width, h)),
        DopingProfile("acceptor", "gaussian", p.body_peak,
                      center=(0.25, h), sigma_x=p.body_sigma_x,
                      sigma_y=p.body_sigma_y),
        DopingProfile("donor", "uniform", p.contact_doping,
                      rect=Rect(0.0, h - p.junction_depth, p.source_length, h)),
        DopingProfile("donor", "uniform", p.contact_doping,
                      rect=Rect(p.locos_end, h - p.junction_depth, p.width, h)),
    )
    contacts = (
        Contact("source", Segment(0.0, h - 1.0, 0.0, h), "ohmic"),
        Contact("drain", Segment(p.width, h - 0.25, p.width, h), "ohmic"),
        Contact("gate", Segment(p.gate_start, h + t_gox, p.locos_start, h + t_gox),
                "gate", gate_offset_v=NPLUS_GATE_OFFSET_V),
        Contact("substrate", Segment(0.0, 0.0, p.width, 0.0), "thermal+ohmic"),
    )
    if refine <= 0.0:
        raise StudioError("refine factor must be positive")
    hints = MeshHints(
        x_lines=(p.source_length, p.locos_start, p.locos_end),
        y_lines=(h - p.drift_depth, h - p.junction_depth, h),
        min_spacing=0.05 / refine,
        max_spacing=3.0 / refine,
    )
    return DeviceSpec(regions=regions, doping_profiles=doping,
                      contacts=contacts, ambient_temperature=p.ambient,
                      mesh_hints=hints)


@dataclass
class Device:
    """Spec + mesh + materials bundle driving one simulation campaign."""

    spec: DeviceSpec
    mesh: Mesh
    materials: MaterialTable

    @classmethod
    def from_spec(cls, spec: DeviceSpec, materials: MaterialTable | None = None):
        materials = materials or default_table()
        return cls(spec=spec, mesh=make_device_mesh(spec, materials),
                   materials=materials)

    @classmethod
    def from_ldmos(cls, params: LdmosParams,
                   materials: MaterialTable | None = None,
                   refine: float = 1.0):
        materials = (materials or default_table()).with_variant(params.isotope)
        return cls.from_spec(build_ldmos(params, refine=refine), materials)


def solve_equilibrium(device: Device, config: SolverConfig | None = None,
                      options: AssemblyOptions | None = None):
    """Zero-bias solution from the charge-neutral cold start."""
    config = config or SolverConfig()
    state0 = initial_state(device.mesh, device.materials)
    state, report = newton_solve(state0, {}, config, options)
    if not report.converged:
        raise NonConvergenceError("equilibrium solve failed", state, report)
    return state, report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class BiasPoint:
    gate_v: float
    drain_v: float
    drain_current_a_per_um: float
    peak_temperature_k: float
    peak_location_um: tuple[float, float]
    converged: bool
    iterations: int
    residual_norm: float
    wall_s: float = 0.0


@dataclass
class SweepResult:
    """Ordered bias points of one output curve (fixed gate bias)."""

    gate_v: float
    thermal: bool
    points: list[BiasPoint] = field(default_factory=list)
    failure: str | None = None
    states: list[DeviceState] | None = None

    @property
    def drain_v(self) -> np.ndarray:
        return np.array([pt.drain_v for pt in self.points])

    @property
    def drain_current(self) -> np.ndarray:
        return np.array([pt.drain_current_a_per_um for pt in self.points])

    def validate(self) -> None:
        vd = self.drain_v
        if vd.size >= 2 and not (np.all(np.diff(vd) > 0) or np.all(np.diff(vd) < 0)):
            raise StudioError("sweep bias points must be strictly monotone")


def _record_point(state: DeviceState, report, vg: float, vd: float) -> BiasPoint:
    currents = terminal_currents(state)
    t_peak = float(np.max(state.T))
    node = int(np.flatnonzero(state.T == state.T.max())[0])
    x, y = state.mesh.node_coordinates_um()
    return BiasPoint(
        gate_v=vg,
        drain_v=vd,
        drain_current_a_per_um=currents.get("drain", 0.0) / CM_TO_UM,
        peak_temperature_k=t_peak,
        peak_location_um=(float(x[node]), float(y[node])),
        converged=report.converged,
        iterations=report.iterations,
        residual_norm=report.final_residual_norm,
        wall_s=report.wall_time_s,
    )


def iv_sweep(device: Device, gate_biases, drain_range, thermal: bool = True,
             config: SolverConfig | None = None,
             options: AssemblyOptions | None = None,
             gate_contact: str = "gate", drain_contact: str = "drain",
             keep_states: bool = False):
    """Output curves: one SweepResult per gate bias.

    ``drain_range`` is (start, stop, step) in volts; each recorded point is
    reached by continuation from the previous one.  ``thermal=False`` forces
    the isothermal mode.  Non-convergence mid-sweep annotates the curve and
    returns the points recorded so far.
    """
    start, stop, step = drain_range
    if step <= 0.0:
        raise StudioError("drain step must be positive")
    config = config or SolverConfig()
    if not thermal:
        config = replace(config, thermal=ISOTHERMAL)
    device.mesh.contact_by_name(gate_contact)
    device.mesh.contact_by_name(drain_contact)
    n_steps = int(round((stop - start) / step))
    drains = [start + k * step for k in range(n_steps + 1)]

    eq_state, _ = solve_equilibrium(device, config, options)
    results = []
    for vg in gate_biases:
        curve = SweepResult(gate_v=vg, thermal=thermal,
                            states=[] if keep_states else None)
        try:
            # gate turn-on at low drain bias redistributes carriers over
            # decades; the Gummel pre-stage keeps those steps cheap
            state, _ = ramp_bias(eq_state, {gate_contact: vg,
                                            drain_contact: drains[0]},
                                 config, options,
                                 coupling=config.coupling)
        except NonConvergenceError as err:
            curve.failure = f"gate ramp failed: {err}"
            results.append(curve)
            continue
        for vd in drains:
            try:
                state, report = ramp_bias(state, {gate_contact: vg,
                                                  drain_contact: vd},
                                          config, options)
            except NonConvergenceError as err:
                curve.failure = f"drain ramp to {vd} V failed: {err}"
                break
            point = _record_point(state, report, vg, vd)
            curve.points.append(point)
            if curve.states is not None:
                curve.states.append(state)
            log.info("bias point Vg=%.3f V Vd=%.3f V Id=%.4e A/um Tpeak=%.2f K "
                     "iters=%d residual=%.2e wall=%.2f s",
                     vg, vd, point.drain_current_a_per_um,
                     point.peak_temperature_k, report.iterations,
                     report.final_residual_norm, report.wall_time_s)
        results.append(curve)
    return results


# ---------------------------------------------------------------------------
# analysis ops
# ---------------------------------------------------------------------------

class IsothermalStateError(StudioError):
    """Hotspot analysis requested on an isothermal solution."""


@dataclass(frozen=True)
class Hotspot:
    x_um: float
    y_um: float
    t_max_k: float


def hotspot(state: DeviceState) -> Hotspot:
    """Location of the nodal temperature maximum.

    Ties break toward the smallest x, then smallest y (the node ordering is
    x-major, so the first flat index wins).
    """
    if state.isothermal:
        raise IsothermalStateError(
            "state was solved isothermally; no meaningful hotspot")
    t_max = float(np.max(state.T))
    node = int(np.flatnonzero(state.T == t_max)[0])
    x, y = state.mesh.node_coordinates_um()
    return Hotspot(x_um=float(x[node]), y_um=float(y[node]), t_max_k=t_max)


@dataclass(frozen=True)
class TempProfileFit:
    """Exponential-decay fit T(depth) = t_floor + amplitude * exp(-depth/decay)."""

    t_floor_k: float
    amplitude_k: float
    decay_um: float
    r_squared: float
    column_x_um: float

    def __post_init__(self):
        if self.decay_um <= 0.0:
            raise StudioError("fitted decay length must be positive")


def exponential_profile(depth, t_floor, amplitude, decay):
    return t_floor + amplitude * np.exp(-np.asarray(depth, dtype=float) / decay)


def fit_exponential_decay(depth, values):
    """Least-squares fit of t_floor + a*exp(-x/L) with log-linearized start."""
    depth = np.asarray(depth, dtype=float)
    values = np.asarray(values, dtype=float)
    if depth.size < 4:
        raise StudioError("need at least 4 samples for the profile fit")
    spread = values.max() - values.min()
    if spread <= 1e-9 * max(abs(values.max()), 1.0):
        raise StudioError("degenerate (constant) profile")
    # log-linearized initialization assuming monotone decay toward the floor
    floor0 = values.min() - 0.05 * spread
    shifted = np.maximum(values - floor0, 1e-12 * spread)
    slope, intercept = np.polyfit(depth, np.log(shifted), 1)
    decay0 = -1.0 / slope if slope < 0 else max(depth.max(), 1.0)
    amp0 = math.exp(intercept)
    p0 = (floor0, amp0, decay0)
    popt, _ = scipy.optimize.curve_fit(
        exponential_profile, depth, values, p0=p0, maxfev=20000,
        xtol=1e-14, ftol=1e-14)
    resid = values - exponential_profile(depth, *popt)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((values - values.mean())**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return popt, min(max(r2, 0.0), 1.0)


def fit_vertical_profile(state: DeviceState, column_x_um: float) -> TempProfileFit:
    """Fit the vertical temperature decay below the surface at one column.

    Samples semiconductor nodes on the mesh line nearest ``column_x_um``
    from the hottest node of the column down to the bottom of the device;
    depth is measured from that hottest node.
    """
    mesh = state.mesh
    lines = mesh.x_lines_um
    ix = int(np.argmin(np.abs(lines - column_x_um)))
    ny = mesh.ny
    nodes = ix * ny + np.arange(ny)
    nodes = nodes[mesh.is_semiconductor[nodes]]
    if nodes.size == 0:
        raise StudioError(f"column x={column_x_um} um has no semiconductor nodes")
    y = mesh.node_coordinates_um()[1][nodes]
    T = state.T[nodes]
    top = int(np.argmax(T))
    sel = y <= y[top]
    nodes, y, T = nodes[sel], y[sel], T[sel]
    order = np.argsort(-y)
    depth = y[order][0] - y[order]
    values = T[order]
    (t_floor, amplitude, decay), r2 = fit_exponential_decay(depth, values)
    return TempProfileFit(t_floor_k=float(t_floor), amplitude_k=float(amplitude),
                          decay_um=float(decay), r_squared=float(r2),
                          column_x_um=float(lines[ix]))


def drift_field_model(current_density, doping, mobility_cm2, e_sat):
    """Lateral field vs. current in a uniformly doped drift region [V/cm].

    E = 1 / (q N mu / J - 1/E_c); diverges at the velocity-saturation
    current J = q N mu E_c.
    """
    j = float(current_density)
    if j < 0.0:
        raise StudioError("current density must be non-negative")
    if j == 0.0:
        return 0.0
    j_sat = Q * doping * mobility_cm2 * e_sat
    if j >= j_sat:
        raise StudioError(
            f"current density {j:.4g} A/cm^2 at or beyond the velocity-"
            f"saturation limit {j_sat:.4g} A/cm^2 (field diverges)")
    return 1.0 / (Q * doping * mobility_cm2 / j - 1.0 / e_sat)


def extract_drift_field(state: DeviceState, x_um: float, y_min_um: float,
                        y_max_um: float):
    """Current-weighted lateral field and mean current density at a column.

    Averages over the x-directed semiconductor edges crossing the mesh line
    nearest ``x_um`` within the depth window; returns (E [V/cm], J [A/cm^2]).
    """
    mesh = state.mesh
    from .discretization import edge_current_densities

    idx, j_n, j_p = edge_current_densities(state)
    x, y = mesh.node_coordinates_um()
    ei = mesh.edge_i[idx]
    ej = mesh.edge_j[idx]
    mid_x = 0.5 * (x[ei] + x[ej])
    mid_y = 0.5 * (y[ei] + y[ej])
    is_x = mesh.edge_is_x[idx]
    lines = mesh.x_lines_um
    cuts = 0.5 * (lines[:-1] + lines[1:])
    cut = cuts[int(np.argmin(np.abs(cuts - x_um)))]
    sel = is_x & (np.abs(mid_x - cut) < 1e-9) & (mid_y >= y_min_um) & (mid_y <= y_max_um)
    if not np.any(sel):
        raise StudioError(f"no lateral edges found at x={x_um} um")
    j_tot = np.abs(j_n[sel] + j_p[sel])
    e_edge = np.abs(state.psi[ej[sel]] - state.psi[ei[sel]]) / mesh.edge_length[idx][sel]
    weight = j_tot + 1e-300
    e_avg = float(np.sum(e_edge * weight) / np.sum(weight))
    d_lo = mesh.edge_d_lo[idx][sel]
    d_hi = mesh.edge_d_hi[idx][sel]
    total_current = float(np.sum((j_n[sel] + j_p[sel]) * (d_lo + d_hi)))
    j_avg = abs(total_current) / float(np.sum(d_lo + d_hi))
    return e_avg, j_avg


def drift_field_model_error(state: DeviceState, x_um: float, y_min_um: float,
                            y_max_um: float, doping: float,
                            mobility_cm2: float, e_sat: float):
    """Current-weighted comparison of Eq-style field model vs. the 2D field.

    The model maps local current density to field pointwise, so it is
    evaluated per crossing edge and aggregated with the same current
    weights as the extracted field.  Returns (E_2d, E_model, rel_error).
    """
    mesh = state.mesh
    from .discretization import edge_current_densities

    idx, j_n, j_p = edge_current_densities(state)
    x, y = mesh.node_coordinates_um()
    ei = mesh.edge_i[idx]
    ej = mesh.edge_j[idx]
    mid_x = 0.5 * (x[ei] + x[ej])
    mid_y = 0.5 * (y[ei] + y[ej])
    lines = mesh.x_lines_um
    cuts = 0.5 * (lines[:-1] + lines[1:])
    cut = cuts[int(np.argmin(np.abs(cuts - x_um)))]
    sel = (mesh.edge_is_x[idx] & (np.abs(mid_x - cut) < 1e-9)
           & (mid_y >= y_min_um) & (mid_y <= y_max_um))
    if not np.any(sel):
        raise StudioError(f"no lateral edges found at x={x_um} um")
    j_loc = np.abs(j_n + j_p)[sel]
    e_loc = np.abs(state.psi[ej[sel]] - state.psi[ei[sel]]) / mesh.edge_length[idx][sel]
    j_sat = Q * doping * mobility_cm2 * e_sat
    e_model = np.array([
        drift_field_model(min(j, 0.98 * j_sat), doping, mobility_cm2, e_sat)
        for j in j_loc])
    weight = j_loc + 1e-300
    e_2d = float(np.sum(e_loc * weight) / np.sum(weight))
    e_mod = float(np.sum(e_model * weight) / np.sum(weight))
    return e_2d, e_mod, abs(e_mod - e_2d) / e_2d


@dataclass
class EnergyBalance:
    heat_integral_w_per_um: float
    supplied_power_w_per_um: float
    relative_mismatch: float


def energy_balance(state: DeviceState,
                   options: AssemblyOptions | None = None) -> EnergyBalance:
    """Volume integral of the heat source vs. sum of terminal I*V."""
    options = options or AssemblyOptions()
    h = heat_generation(state, model=options.heat_model, options=options)
    integral = float(np.sum(h * state.mesh.area_semi))
    currents = terminal_currents(state)
    supplied = sum(state.bias.get(name, 0.0) * current
                   for name, current in currents.items())
    scale = max(abs(integral), abs(supplied))
    mismatch = abs(integral - supplied) / scale if scale > 0 else 0.0
    return EnergyBalance(
        heat_integral_w_per_um=integral / CM_TO_UM,
        supplied_power_w_per_um=supplied / CM_TO_UM,
        relative_mismatch=mismatch,
    )


# ---------------------------------------------------------------------------
# isotope comparison
# ---------------------------------------------------------------------------

@dataclass
class IsotopeComparison:
    dT_peak_k: float
    dT_mean_k: float
    k300_natural_w_mk: float
    k300_si28_w_mk: float
    dT_field_k: np.ndarray
    natural_state: DeviceState
    si28_state: DeviceState


def _ramp_to_bias(device: Device, bias: dict[str, float], config: SolverConfig,
                  options: AssemblyOptions | None):
    eq_state, _ = solve_equilibrium(device, config, options)
    state, report = ramp_bias(eq_state, bias, config, options)
    return state, report


def compare_isotopes(params: LdmosParams, bias: dict[str, float],
                     config: SolverConfig | None = None,
                     options: AssemblyOptions | None = None,
                     materials: MaterialTable | None = None) -> IsotopeComparison:
    """Run natural-Si and 28Si variants at the identical bias point.

    Reports peak and area-weighted mean temperature differences (natural
    minus 28Si) plus the nodal difference field.  Everything except the
    silicon k(300 K) is identical between the runs.
    """
    config = config or SolverConfig()
    base = materials or default_table()
    runs = {}
    tables = {}
    for variant in (NATURAL_SI, "Si-28"):
        device = Device.from_spec(build_ldmos(replace(params, isotope=variant)),
                                  base.with_variant(variant))
        state, report = _ramp_to_bias(device, bias, config, options)
        if not report.converged:
            raise NonConvergenceError(f"{variant} run did not converge",
                                      state, report)
        runs[variant] = state
        tables[variant] = device.materials
    nat, iso = runs[NATURAL_SI], runs["Si-28"]
    diff = nat.T - iso.T
    weights = nat.mesh.area_semi
    mean_diff = float(np.sum(diff * weights) / np.sum(weights))
    si = tables[NATURAL_SI]["si"]
    return IsotopeComparison(
        dT_peak_k=float(np.max(nat.T) - np.max(iso.T)),
        dT_mean_k=mean_diff,
        k300_natural_w_mk=si.variant(NATURAL_SI).k_300,
        k300_si28_w_mk=si.variant("Si-28").k_300,
        dT_field_k=diff,
        natural_state=nat,
        si28_state=iso,
    )


def frozen_heat_peak_rise(mesh: Mesh, materials: MaterialTable,
                          heat_density: np.ndarray) -> float:
    """Peak temperature rise of the heat equation with a frozen source."""
    T = solve_frozen_heat(mesh, materials, heat_density)
    return float(np.max(T) - mesh.spec.ambient_temperature)
