"""Damped Newton solution of the assembled system and bias continuation.

The Newton iteration works on log carrier densities (so positivity is
structural), with a residual-norm line search for damping and a sparse
direct factorization for every linear solve.  Everything is deterministic:
identical inputs give bit-identical iterates and reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import K_B_EV, T_REF
from .discretization import (
    AssemblyOptions,
    DeviceState,
    ResidualSystem,
    assemble_system,
    index_map,
    material_arrays,
    _node_intrinsics,
)
from .geometry import Mesh
from .materials import MaterialTable

FULL_NEWTON = "full-newton"
GUMMEL_THEN_NEWTON = "gummel-then-newton"
ISOTHERMAL = "isothermal"
SELF_CONSISTENT = "self-consistent"

_V_REF = K_B_EV * T_REF
_T_MIN = 100.0          # damping floor for temperature updates [K]
_LOG_STEP_CLIP = 3.0    # max |d ln c| applied per Newton step
_DENSITY_FLOOR = 1e-20  # [cm^-3]; keeps 1/n finite in deep depletion
_DENSITY_CEIL = 1e24    # [cm^-3]; runaway guard for rejected trial states


class SolverError(RuntimeError):
    """Linear-solver or Newton failure."""


class LinearSolveError(SolverError):
    """Singular or numerically unusable linear system."""


class NonConvergenceError(SolverError):
    """Newton/continuation did not reach the requested tolerance."""

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and strategy knobs; all exposed through the run config."""

    abs_tol: float = 1e-10           # RMS of the scaled residual
    rel_update_tol: float = 1e-12    # stagnation threshold on scaled updates
    max_iterations: int = 60
    damping_init: float = 1.0
    damping_min: float = 1.0 / 64.0
    max_bias_step: float = 1.0       # [V]
    step_halving_depth: int = 8
    coupling: str = GUMMEL_THEN_NEWTON
    thermal: str = SELF_CONSISTENT
    polish_steps: int = 2            # extra full steps after convergence

    def __post_init__(self):
        if self.abs_tol <= 0.0 or self.rel_update_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.max_bias_step <= 0.0:
            raise ValueError("max_bias_step must be positive")
        if not (0.0 < self.damping_min <= self.damping_init <= 1.0):
            raise ValueError("damping factors must satisfy 0 < min <= init <= 1")
        if self.coupling not in (FULL_NEWTON, GUMMEL_THEN_NEWTON):
            raise ValueError(f"unknown coupling mode {self.coupling!r}")
        if self.thermal not in (ISOTHERMAL, SELF_CONSISTENT):
            raise ValueError(f"unknown thermal mode {self.thermal!r}")


@dataclass
class ConvergenceReport:
    """Record of one Newton solve or continuation run."""

    converged: bool = False
    iterations: int = 0
    final_residual_norm: float = np.inf
    tolerance: float = np.nan
    damping_history: list = field(default_factory=list)  # (iter, factor, norm)
    bias_path: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def merge_step(self, other: "ConvergenceReport") -> None:
        self.converged = other.converged
        self.iterations += other.iterations
        self.final_residual_norm = other.final_residual_norm
        self.tolerance = other.tolerance
        self.damping_history.extend(other.damping_history)
        self.bias_path.extend(other.bias_path)
        self.wall_time_s += other.wall_time_s


def solve_linear(matrix, rhs, rtol: float = 1e-10, strict: bool = True):
    """Direct sparse solve with a residual guarantee.

    Factorizes with SuperLU (deterministic) and applies iterative refinement
    until the relative residual is at or below ``rtol``.  With
    ``strict=False`` a solution that stalls slightly above ``rtol`` is
    returned anyway (Newton treats directions as proposals and judges them
    by the nonlinear residual).
    """
    A = sp.csc_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.size:
        raise LinearSolveError(f"shape mismatch: {A.shape} vs rhs {b.size}")
    try:
        lu = spla.splu(A)
    except RuntimeError as err:
        diag = A.diagonal()
        raise LinearSolveError(
            f"sparse factorization failed: {err} "
            f"(n={A.shape[0]}, nnz={A.nnz}, zero-diagonal rows={int(np.sum(diag == 0.0))})"
        ) from err
    x = lu.solve(b)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b)
    best = None
    for _ in range(5):
        resid_norm = np.linalg.norm(b - A @ x) / b_norm
        if not np.isfinite(resid_norm):
            break
        if best is None or resid_norm < best[1]:
            best = (x, resid_norm)
        if resid_norm <= rtol:
            return x
        x = x + lu.solve(b - A @ x)
    if best is not None and not strict:
        return best[0]
    resid_norm = best[1] if best is not None else np.inf
    raise LinearSolveError(
        f"linear solve stalled at relative residual {resid_norm:.3e}")


def _assembly_options(config: SolverConfig, options: AssemblyOptions | None) -> AssemblyOptions:
    options = options or AssemblyOptions()
    return replace(options, isothermal=(config.thermal == ISOTHERMAL))


def _prev(report: "ConvergenceReport") -> float:
    if len(report.damping_history) >= 2:
        return report.damping_history[-2][2]
    return np.inf


def _apply_dirichlet_values(state: DeviceState) -> DeviceState:
    """Write the (exactly known) contact boundary values into the state.

    Starting Newton with satisfied Dirichlet rows keeps the residual norm
    focused on the interior, which the line search can actually improve;
    otherwise a bias jump parks most of the norm on contact rows that only
    a full step can clear.
    """
    mesh = state.mesh
    marr = material_arrays(mesh, state.materials)
    psi = state.psi.copy()
    n = state.n.copy()
    p = state.p.copy()
    T = state.T.copy()
    t_amb = mesh.spec.ambient_temperature
    for contact in mesh.contacts:
        nodes = contact.nodes
        if contact.is_thermal:
            T[nodes] = t_amb
        v_c = state.bias.get(contact.name, 0.0)
        if contact.kind == "gate":
            psi[nodes] = v_c + contact.gate_offset_v
        elif contact.is_ohmic:
            ni, _ = _node_intrinsics(marr, nodes, T[nodes])
            doping = mesh.net_doping[nodes]
            vt = K_B_EV * T[nodes]
            psi[nodes] = v_c + vt * np.arcsinh(doping / (2.0 * ni))
            root = np.sqrt(doping * doping + 4.0 * ni * ni)
            majority = 0.5 * (np.abs(doping) + root)
            minority = ni * ni / majority
            n[nodes] = np.where(doping >= 0.0, majority, minority)
            p[nodes] = np.where(doping >= 0.0, minority, majority)
    return state.with_fields(psi=psi, n=n, p=p, T=T)


def _residual_norm(system: ResidualSystem) -> float:
    return system.norm()


def _apply_update(state: DeviceState, system: ResidualSystem, delta: np.ndarray,
                  factor: float) -> DeviceState:
    """Damped update; carrier densities move multiplicatively."""
    imap = system.imap
    psi = state.psi + factor * delta[imap.ipsi]
    sel = imap.inn >= 0
    n = state.n.copy()
    p = state.p.copy()
    step_n = np.clip(factor * delta[imap.inn[sel]], -_LOG_STEP_CLIP, _LOG_STEP_CLIP)
    step_p = np.clip(factor * delta[imap.ipp[sel]], -_LOG_STEP_CLIP, _LOG_STEP_CLIP)
    n[sel] = np.clip(state.n[sel] * np.exp(step_n), _DENSITY_FLOOR, _DENSITY_CEIL)
    p[sel] = np.clip(state.p[sel] * np.exp(step_p), _DENSITY_FLOOR, _DENSITY_CEIL)
    T = np.maximum(state.T + factor * delta[imap.iT], _T_MIN)
    return state.with_fields(psi=psi, n=n, p=p, T=T)


def _newton_direction(state: DeviceState, system: ResidualSystem) -> np.ndarray:
    """Solve for the update in (psi, ln n, ln p, T) scaled variables."""
    imap = system.imap
    col_scale = np.ones(imap.n_unknowns)
    col_scale[imap.kind == 0] = _V_REF
    col_scale[imap.kind == 3] = T_REF
    sel = imap.inn >= 0
    col_scale[imap.inn[sel]] = state.n[sel]
    col_scale[imap.ipp[sel]] = state.p[sel]
    vals = system.vals * col_scale[system.cols]
    A = sp.coo_matrix((vals, (system.rows, system.cols)),
                      shape=(imap.n_unknowns, imap.n_unknowns))
    du = solve_linear(A, -system.residual, strict=False)
    # back to physical increments: psi += V_REF*du, ln n += du, T += T_REF*du
    delta = du * col_scale
    # carrier slots carry d(ln c); _apply_update expects that directly
    delta[imap.inn[sel]] = du[imap.inn[sel]]
    delta[imap.ipp[sel]] = du[imap.ipp[sel]]
    return delta


def newton_solve(state0: DeviceState, targets: dict[str, float],
                 config: SolverConfig | None = None,
                 options: AssemblyOptions | None = None,
                 coupling: str | None = None):
    """Solve the coupled system at the given bias.

    Returns ``(state, report)``; ``report.converged`` is true iff the final
    scaled residual norm is at or below ``config.abs_tol``.
    """
    config = config or SolverConfig()
    options = _assembly_options(config, options)
    coupling = coupling or config.coupling
    t0 = time.perf_counter()
    state = state0.with_bias(targets)
    if state.isothermal != options.isothermal:
        state = state.with_fields(isothermal=options.isothermal)
    state = _apply_dirichlet_values(state)
    report = ConvergenceReport(tolerance=config.abs_tol, bias_path=[dict(state.bias)])

    if coupling == GUMMEL_THEN_NEWTON:
        state = _gummel_cycle(state, config, options)

    system = assemble_system(state, options=options)
    norm = _residual_norm(system)
    factors = []
    f = config.damping_init
    while f >= config.damping_min * (1.0 - 1e-12):
        factors.append(f)
        f /= 2.0

    converged = norm <= config.abs_tol
    iteration = 0
    rescues = 0
    slow_streak = 0
    while not converged and iteration < config.max_iterations:
        delta = _newton_direction(state, system)
        accepted = None
        for factor in factors:
            trial = _apply_update(state, system, delta, factor)
            trial_system = assemble_system(trial, options=options)
            trial_norm = _residual_norm(trial_system)
            if trial_norm < norm or trial_norm <= config.abs_tol:
                accepted = (trial, trial_system, trial_norm, factor)
                break
        stalled = accepted is None
        if not stalled:
            state, system, norm, factor = accepted
            iteration += 1
            report.damping_history.append((iteration, factor, norm))
            if norm <= config.abs_tol:
                converged = True
                break
            slow_streak = slow_streak + 1 if norm > 0.9 * _prev(report) else 0
            max_update = float(np.max(np.abs(delta * factor))) if delta.size else 0.0
            if max_update <= config.rel_update_tol:
                stalled = True
        if stalled or slow_streak >= 4:
            # decoupled Gummel cycles rescue states where one carrier field
            # must move over many decades (a damped Newton crawl); iterate
            # while the cycles keep making headway
            if rescues >= 3:
                break
            rescues += 1
            slow_streak = 0
            best = None
            trial = state
            try:
                for _ in range(8):
                    trial = _gummel_cycle(trial, config, options)
                    trial_system = assemble_system(trial, options=options)
                    trial_norm = _residual_norm(trial_system)
                    if not np.isfinite(trial_norm):
                        break
                    if best is None or trial_norm < best[2]:
                        best = (trial, trial_system, trial_norm)
                    elif trial_norm > best[2] * 2.0:
                        break
            except (SolverError, ValueError, FloatingPointError):
                pass
            if best is None or best[2] >= norm:
                break
            state, system, norm = best
            report.damping_history.append((iteration, -1.0, norm))
            if norm <= config.abs_tol:
                converged = True
                break

    if converged and iteration > 0:
        # polish with full steps to push the residual toward the assembly floor
        for _ in range(config.polish_steps):
            delta = _newton_direction(state, system)
            trial = _apply_update(state, system, delta, 1.0)
            trial_system = assemble_system(trial, options=options)
            trial_norm = _residual_norm(trial_system)
            if trial_norm < norm:
                state, system, norm = trial, trial_system, trial_norm
            else:
                break

    report.converged = bool(norm <= config.abs_tol)
    report.iterations = iteration
    report.final_residual_norm = float(norm)
    report.wall_time_s = time.perf_counter() - t0
    return state, report


def _gummel_carrier_step(state: DeviceState, carrier: str,
                         options: AssemblyOptions) -> DeviceState:
    """Decoupled continuity solve: linear in one carrier at frozen psi, T.

    The Scharfetter-Gummel edge currents are linear in the densities once
    the potentials and temperatures are fixed; SRH recombination is
    linearized by freezing its denominator and the opposite carrier.  One
    sparse solve therefore lands the carrier field on the consistent
    solution even when Newton steps would need to move densities over many
    decades.
    """
    from .discretization import _edge_currents, _node_intrinsics, _srh_terms
    from .discretization import material_arrays as marr_fn
    from .constants import Q

    mesh = state.mesh
    marr = marr_fn(mesh, state.materials)
    imap = index_map(mesh)
    semi = np.flatnonzero(mesh.is_semiconductor)
    pos_of_node = np.full(mesh.n_nodes, -1, dtype=int)
    pos_of_node[semi] = np.arange(semi.size)
    a_semi = mesh.area_semi[semi]

    data = _edge_currents(state, mesh, marr, options, derivs=False)
    i, j = data.i, data.j
    # pure SG edge coefficients: I(i->j) = wb_i * c_i + wb_j * c_j with the
    # mobility (and delta) lagged at the frozen state; this keeps the system
    # an M-matrix, so densities stay positive
    if carrier == "electron":
        w, b_pos, b_neg = data.sg_n
        wb_i = -w * b_neg
        wb_j = w * b_pos
    else:
        w, b_pos, b_neg = data.sg_p
        wb_i = w * b_pos
        wb_j = -w * b_neg

    T_semi = state.T[semi]
    ni, _ = _node_intrinsics(marr, semi, T_semi)
    other = state.p[semi] if carrier == "electron" else state.n[semi]
    mats = marr.node_material[semi]
    den = (marr.tau_p[mats] * (state.n[semi] + ni)
           + marr.tau_n[mats] * (state.p[semi] + ni))

    n_s = semi.size
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_s)
    free = np.ones(n_s, dtype=bool)
    for contact in mesh.contacts:
        if contact.is_ohmic:
            free[pos_of_node[contact.nodes]] = False

    pi, pj = pos_of_node[i], pos_of_node[j]
    for row, sign in ((pi, 1.0), (pj, -1.0)):
        keep = free[row]
        rows.extend([row[keep], row[keep]])
        cols.extend([pi[keep], pj[keep]])
        vals.extend([sign * wb_i[keep], sign * wb_j[keep]])

    sign_r = -1.0 if carrier == "electron" else 1.0
    diag = sign_r * Q * a_semi * other / den
    rhs += -sign_r * Q * a_semi * (-ni * ni / den)
    rows.append(np.arange(n_s)[free])
    cols.append(np.arange(n_s)[free])
    vals.append(diag[free])

    # Dirichlet rows at ohmic contacts
    fixed = np.flatnonzero(~free)
    bc = np.zeros(fixed.size)
    nodes_fixed = semi[fixed]
    ni_f, _ = _node_intrinsics(marr, nodes_fixed, state.T[nodes_fixed])
    n_eq, p_eq = _equilibrium_pair(mesh.net_doping[nodes_fixed], ni_f)
    bc = n_eq if carrier == "electron" else p_eq
    rows.append(fixed)
    cols.append(fixed)
    vals.append(np.ones(fixed.size))
    rhs[fixed] = bc

    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_s, n_s)).tocsr()
    row_norm = np.maximum(np.abs(A).max(axis=1).toarray().ravel(), 1e-300)
    D = sp.dia_matrix((1.0 / row_norm, 0), shape=(n_s, n_s))
    solution = solve_linear((D @ A).tocsc(), rhs / row_norm, strict=False)
    solution = np.clip(solution, _DENSITY_FLOOR, _DENSITY_CEIL)
    field = state.n.copy() if carrier == "electron" else state.p.copy()
    field[semi] = solution
    if carrier == "electron":
        return state.with_fields(n=field)
    return state.with_fields(p=field)


def _equilibrium_pair(net_doping, ni):
    root = np.sqrt(net_doping * net_doping + 4.0 * ni * ni)
    majority = 0.5 * (np.abs(net_doping) + root)
    minority = ni * ni / majority
    n = np.where(net_doping >= 0.0, majority, minority)
    p = np.where(net_doping >= 0.0, minority, majority)
    return n, p


def _gummel_cycle(state: DeviceState, config: SolverConfig,
                  options: AssemblyOptions) -> DeviceState:
    """One decoupled Poisson -> electron -> hole pass."""
    state = _gummel_poisson_stage(state, config)
    state = _gummel_carrier_step(state, "electron", options)
    state = _gummel_carrier_step(state, "hole", options)
    return state


def _gummel_poisson_stage(state: DeviceState, config: SolverConfig) -> DeviceState:
    """Nonlinear-Poisson pre-solve with frozen quasi-Fermi potentials.

    Classic decoupled start: carriers follow Boltzmann statistics off the
    current quasi-Fermi fields while the potential relaxes; carrier fields
    are then rebuilt from the converged potential.
    """
    mesh = state.mesh
    marr = material_arrays(mesh, state.materials)
    imap = index_map(mesh)
    semi = np.flatnonzero(mesh.is_semiconductor)
    T = state.T[semi]
    ni, _ = _node_intrinsics(marr, semi, T)
    vt = K_B_EV * T
    phi_n = state.psi[semi] - vt * np.log(state.n[semi] / ni)
    phi_p = state.psi[semi] + vt * np.log(state.p[semi] / ni)

    from .constants import Q

    def carriers(psi_semi):
        arg_n = np.clip((psi_semi - phi_n) / vt, -80.0, 80.0)
        arg_p = np.clip((phi_p - psi_semi) / vt, -80.0, 80.0)
        return ni * np.exp(arg_n), ni * np.exp(arg_p)

    free_rows = np.ones(mesh.n_nodes, dtype=bool)
    for contact in mesh.contacts:
        if contact.kind in ("ohmic", "thermal+ohmic", "gate"):
            free_rows[contact.nodes] = False
    free_semi = mesh.is_semiconductor & free_rows
    c_ref = max(float(np.max(np.abs(mesh.net_doping))), 1e12)
    boltz_scale = 1.0 / (Q * c_ref * mesh.area_total)

    def poisson_system(psi_full):
        n_semi, p_semi = carriers(psi_full[semi])
        n_full = state.n.copy()
        p_full = state.p.copy()
        n_full[semi] = n_semi
        p_full[semi] = p_semi
        trial = state.with_fields(psi=psi_full, n=n_full, p=p_full)
        system = assemble_system(trial, options=AssemblyOptions(isothermal=True))
        rows = imap.ipsi
        F = system.residual[rows]
        A = sp.coo_matrix((system.vals, (system.rows, system.cols)),
                          shape=(imap.n_unknowns, imap.n_unknowns)).tocsr()
        Ap = A[rows][:, rows].tolil()
        # Boltzmann closure: d(charge)/d(psi) = -q (n + p)/vt per unit area
        extra = np.zeros(mesh.n_nodes)
        extra[semi] = -(n_semi + p_semi) / vt * Q * mesh.area_semi[semi]
        extra *= boltz_scale
        extra[~free_semi] = 0.0
        diag = sp.dia_matrix((extra, 0), shape=(mesh.n_nodes, mesh.n_nodes))
        return F, (Ap.tocsc() + diag.tocsc()), trial

    psi = state.psi.copy()
    F, A, trial = poisson_system(psi)
    norm = float(np.sqrt(np.mean(F**2)))
    for _ in range(80):
        if norm <= max(config.abs_tol, 1e-12):
            break
        dpsi = solve_linear(A, -F, strict=False)
        factor = 1.0
        improved = False
        while factor >= config.damping_min / 4.0:
            cand = psi + factor * np.clip(dpsi, -2.0, 2.0)
            Fc, Ac, trialc = poisson_system(cand)
            nc = float(np.sqrt(np.mean(Fc**2)))
            if nc < norm:
                psi, F, A, norm, trial = cand, Fc, Ac, nc, trialc
                improved = True
                break
            factor /= 2.0
        if not improved:
            break
    return trial


def ramp_bias(state: DeviceState, targets: dict[str, float],
              config: SolverConfig | None = None,
              options: AssemblyOptions | None = None,
              coupling: str = FULL_NEWTON):
    """Continuation from the state's bias to ``targets``.

    Every contact voltage advances proportionally in steps bounded by
    ``max_bias_step``; a failed Newton solve halves the step (up to
    ``step_halving_depth``) and retries.  Returns the converged state at the
    exact target together with the combined report.  Continuation steps use
    full Newton by default; a Gummel pre-stage can be requested for steps
    that redistribute carriers over many decades (gate turn-on).
    """
    config = config or SolverConfig()
    start = {c.name: state.bias.get(c.name, 0.0) for c in state.mesh.contacts}
    goal = dict(start)
    goal.update(targets)
    unknown = set(targets) - set(start)
    if unknown:
        raise ValueError(f"bias references unknown contacts: {sorted(unknown)}")

    total = ConvergenceReport(tolerance=config.abs_tol)
    deltas = {name: goal[name] - start[name] for name in goal}
    span = max((abs(d) for d in deltas.values()), default=0.0)
    if span == 0.0:
        total.converged = True
        total.final_residual_norm = 0.0
        total.bias_path.append(dict(start))
        return state, total

    position = 0.0  # continuation parameter in [0, 1]
    step_cap = min(1.0, config.max_bias_step / span)
    step = step_cap
    halvings = 0
    current = state
    while position < 1.0 - 1e-12:
        step = min(step, 1.0 - position)
        trial_pos = position + step
        bias = {name: start[name] + deltas[name] * trial_pos for name in goal}
        nxt, report = newton_solve(current, bias, config, options,
                                   coupling=coupling)
        total.merge_step(report)
        if report.converged:
            current = nxt
            position = trial_pos
            halvings = 0
            step = min(step * 2.0, step_cap)
            continue
        halvings += 1
        if halvings > config.step_halving_depth:
            total.converged = False
            raise NonConvergenceError(
                f"continuation stalled at {position:.4f} of the ramp "
                f"(last good bias {current.bias})",
                state=current, report=total)
        step /= 2.0
    total.converged = True
    return current, total


def solve_frozen_heat(mesh: Mesh, materials: MaterialTable,
                      heat_density: np.ndarray, tol: float = 1e-12,
                      max_iterations: int = 50) -> np.ndarray:
    """Temperature field for a frozen heat-density source [W/cm^3].

    Solves the lattice heat equation alone with Dirichlet temperatures at
    thermal contacts; Newton handles the k(T) nonlinearity and converges in
    one step when k is temperature independent.
    """
    from .discretization import material_arrays as _marr_fn

    marr = _marr_fn(mesh, materials)
    t_amb = mesh.spec.ambient_temperature
    n = mesh.n_nodes
    T = np.full(n, t_amb)
    thermal = np.zeros(n, dtype=bool)
    for contact in mesh.contacts:
        if contact.is_thermal:
            thermal[contact.nodes] = True
    if not thermal.any():
        raise SolverError("mesh has no thermal contact")
    source = heat_density * mesh.area_semi

    ei, ej = mesh.edge_i, mesh.edge_j
    m_lo = np.clip(mesh.edge_mat_lo, 0, None)
    m_hi = np.clip(mesh.edge_mat_hi, 0, None)

    for _ in range(max_iterations):
        T_e = 0.5 * (T[ei] + T[ej])
        kd = np.zeros(ei.size)
        dkd = np.zeros(ei.size)
        for m_half, d_half in ((m_lo, mesh.edge_d_lo), (m_hi, mesh.edge_d_hi)):
            k_half = marr.k300_cm[m_half] * (T_e / T_REF) ** (-marr.k_exp[m_half])
            kd += k_half * d_half
            dkd += (-marr.k_exp[m_half] * k_half / T_e) * d_half
        flux = kd / mesh.edge_length * (T[ej] - T[ei])
        F = np.zeros(n)
        np.add.at(F, ei, flux)
        np.add.at(F, ej, -flux)
        F += source
        F[thermal] = T[thermal] - t_amb
        norm = float(np.max(np.abs(F))) / max(t_amb, 1.0)
        d_ii = -kd / mesh.edge_length + (T[ej] - T[ei]) / mesh.edge_length * dkd * 0.5
        d_ij = kd / mesh.edge_length + (T[ej] - T[ei]) / mesh.edge_length * dkd * 0.5
        rows = np.concatenate([ei, ei, ej, ej])
        cols = np.concatenate([ei, ej, ej, ei])
        vals = np.concatenate([d_ii, d_ij, -d_ij, -d_ii])
        keep = ~thermal[rows]
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        tn = np.flatnonzero(thermal)
        rows = np.concatenate([rows, tn])
        cols = np.concatenate([cols, tn])
        vals = np.concatenate([vals, np.ones(tn.size)])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        dT = solve_linear(A, -F, strict=False)
        T = np.maximum(T + dT, _T_MIN)
        if float(np.max(np.abs(dT))) <= tol * t_amb and norm < 1e-9:
            break
    return T
