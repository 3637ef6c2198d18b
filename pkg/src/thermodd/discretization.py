"""Finite-volume assembly of the coupled Poisson / continuity / heat system.

Box-method residuals on the tensor-product mesh with Scharfetter-Gummel
edge currents, field- and temperature-dependent mobility, SRH
recombination, temperature-dependent lattice conduction and Joule heat,
plus the full analytic Jacobian of every coupling.

Residuals are returned row-scaled (dimensionless); the Jacobian is
d(scaled residual)/d(physical unknown) in coordinate form.  Unknown
ordering is node-major with the per-node order (psi, n, p, T); insulator
nodes carry psi and T only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import EPS0, K_B, K_B_EV, LORENZ, Q, T_REF, UM_TO_CM
from .geometry import Mesh
from .materials import (
    MaterialTable,
    band_gap,
    band_gap_derivative,
    builtin_potential,
    default_table,
    equilibrium_densities,
    intrinsic_density_unchecked,
    log_intrinsic_density_derivative,
)

JOULE = "joule"
THERMODYNAMIC = "thermodynamic"

# smoothing floor for the mobility driving field; negligible next to the
# ~1e3-1e4 V/cm saturation fields but keeps |grad phi| differentiable
_E_SMOOTH = 1.0  # [V/cm]

# reference scales of the internal nondimensionalization
_V_REF = K_B_EV * T_REF
_T_SCALE = T_REF
_MU_REF = 1000.0          # [cm^2/(V*s)]
_L_REF = 1.0e-4           # [cm]
_NU_REF = _MU_REF * _V_REF / _L_REF**2   # reference rate [1/s]
_K_REF = 1.0              # [W/(cm*K)]


class AssemblyError(ValueError):
    """State or options unfit for assembly."""


# ---------------------------------------------------------------------------
# Bernoulli function
# ---------------------------------------------------------------------------

def bernoulli(x):
    """B(x) = x / (e^x - 1) with a Taylor branch near zero.

    Asymptotic branches keep the evaluation finite for any float input.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small]
    x2 = xs * xs
    out[small] = 1.0 - xs / 2.0 + x2 / 12.0 - x2 * x2 / 720.0 + x2 * x2 * x2 / 30240.0
    big_pos = x > 500.0
    big_neg = x < -500.0
    mid = ~(small | big_pos | big_neg)
    xm = x[mid]
    out[mid] = xm / np.expm1(xm)
    out[big_pos] = x[big_pos] * np.exp(-x[big_pos])
    out[big_neg] = -x[big_neg]
    return out if out.ndim else float(out)


def bernoulli_prime(x):
    """dB/dx with the same branch structure as ``bernoulli``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small]
    x2 = xs * xs
    out[small] = -0.5 + xs / 6.0 - xs * x2 / 180.0 + xs * x2 * x2 / 5040.0
    big_pos = x > 250.0
    big_neg = x < -250.0
    mid = ~(small | big_pos | big_neg)
    xm = x[mid]
    em = np.expm1(xm)
    out[mid] = (em - xm * (em + 1.0)) / (em * em)
    xp = x[big_pos]
    out[big_pos] = (1.0 - xp) * np.exp(-xp)
    out[big_neg] = -1.0
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# state and options
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceState:
    """Nodal solution fields plus the applied bias.

    ``n``/``p`` hold placeholder ones at insulator nodes; only the
    semiconductor entries are meaningful.  States are immutable; update
    helpers return copies.
    """

    mesh: Mesh
    materials: MaterialTable
    psi: np.ndarray
    n: np.ndarray
    p: np.ndarray
    T: np.ndarray
    bias: dict[str, float]
    isothermal: bool = False

    def with_bias(self, bias: dict[str, float]) -> "DeviceState":
        known = {c.name for c in self.mesh.contacts}
        unknown = set(bias) - known
        if unknown:
            raise AssemblyError(f"bias references unknown contacts: {sorted(unknown)}")
        full = {c.name: 0.0 for c in self.mesh.contacts}
        full.update(bias)
        return replace(self, bias=full)

    def with_fields(self, **kw) -> "DeviceState":
        return replace(self, **kw)

    def validate(self) -> None:
        semi = self.mesh.is_semiconductor
        if np.any(self.n[semi] <= 0.0) or np.any(self.p[semi] <= 0.0):
            raise AssemblyError("carrier densities must be positive at semiconductor nodes")
        if np.any(self.T <= 0.0):
            raise AssemblyError("temperature must be positive")
        if not (np.all(np.isfinite(self.psi)) and np.all(np.isfinite(self.T))
                and np.all(np.isfinite(self.n[semi])) and np.all(np.isfinite(self.p[semi]))):
            raise AssemblyError("state contains non-finite values")


def initial_state(mesh: Mesh, materials: MaterialTable | None = None,
                  bias: dict[str, float] | None = None) -> DeviceState:
    """Charge-neutral cold start at the ambient temperature."""
    materials = materials or default_table()
    t_amb = mesh.spec.ambient_temperature
    T = np.full(mesh.n_nodes, t_amb)
    psi = np.zeros(mesh.n_nodes)
    n = np.ones(mesh.n_nodes)
    p = np.ones(mesh.n_nodes)
    semi = mesh.is_semiconductor
    marr = material_arrays(mesh, materials)
    mat_idx = marr.node_material
    for m in np.unique(mat_idx[semi]):
        sel = semi & (mat_idx == m)
        material = marr.materials[m]
        n_eq, p_eq = equilibrium_densities(material, mesh.net_doping[sel], T[sel])
        n[sel] = n_eq
        p[sel] = p_eq
        psi[sel] = builtin_potential(material, mesh.net_doping[sel], T[sel])
    state = DeviceState(mesh=mesh, materials=materials, psi=psi, n=n, p=p,
                        T=T, bias={})
    return state.with_bias(bias or {})


@dataclass(frozen=True)
class AssemblyOptions:
    """Physics switches for the residual assembly."""

    heat_model: str = JOULE
    thermal_drift: bool = False
    wiedemann_franz: bool = False
    isothermal: bool = False
    dt: float | None = None
    prev: "DeviceState | None" = None

    def __post_init__(self):
        if self.heat_model not in (JOULE, THERMODYNAMIC):
            raise AssemblyError(f"unknown heat model {self.heat_model!r}")
        if self.dt is not None and (self.dt <= 0.0 or self.prev is None):
            raise AssemblyError("transient assembly needs dt > 0 and a previous state")


@dataclass(frozen=True)
class ScalingRecord:
    """Nondimensionalization constants used to scale residual rows."""

    v_ref: float
    c_ref: float
    t_ref: float
    nu_ref: float
    k_ref: float


@dataclass
class IndexMap:
    """Unknown layout: node-major, per-node order (psi, n, p, T)."""

    ipsi: np.ndarray
    inn: np.ndarray
    ipp: np.ndarray
    iT: np.ndarray
    kind: np.ndarray   # 0 psi, 1 n, 2 p, 3 T per unknown
    node: np.ndarray   # owning node per unknown
    n_unknowns: int


def index_map(mesh: Mesh) -> IndexMap:
    cached = getattr(mesh, "_thermodd_imap", None)
    if cached is not None:
        return cached
    n_nodes = mesh.n_nodes
    semi = mesh.is_semiconductor
    ipsi = np.full(n_nodes, -1, dtype=int)
    inn = np.full(n_nodes, -1, dtype=int)
    ipp = np.full(n_nodes, -1, dtype=int)
    iT = np.full(n_nodes, -1, dtype=int)
    counter = 0
    kinds, owners = [], []
    for node in range(n_nodes):
        ipsi[node] = counter
        kinds.append(0)
        owners.append(node)
        counter += 1
        if semi[node]:
            inn[node] = counter
            kinds.append(1)
            owners.append(node)
            counter += 1
            ipp[node] = counter
            kinds.append(2)
            owners.append(node)
            counter += 1
        iT[node] = counter
        kinds.append(3)
        owners.append(node)
        counter += 1
    imap = IndexMap(ipsi=ipsi, inn=inn, ipp=ipp, iT=iT,
                    kind=np.array(kinds), node=np.array(owners),
                    n_unknowns=counter)
    mesh._thermodd_imap = imap
    return imap


@dataclass
class MaterialArrays:
    """Region-indexed material parameter arrays for vectorized assembly."""

    materials: list
    node_material: np.ndarray
    is_semi: np.ndarray
    eps: np.ndarray            # [F/cm]
    k300_cm: np.ndarray        # [W/(cm*K)], active isotope variant
    k_exp: np.ndarray
    heat_cap: np.ndarray
    mu_n0: np.ndarray
    mu_p0: np.ndarray
    mu_n_exp: np.ndarray
    mu_p_exp: np.ndarray
    vsat_n: np.ndarray
    vsat_p: np.ndarray
    tau_n: np.ndarray
    tau_p: np.ndarray
    nc300: np.ndarray
    nv300: np.ndarray


def material_arrays(mesh: Mesh, materials: MaterialTable) -> MaterialArrays:
    cached = getattr(mesh, "_thermodd_marr", None)
    if cached is not None and cached[0] is materials:
        return cached[1]
    mats = [materials[name] for name in mesh.region_materials]
    arr = MaterialArrays(
        materials=mats,
        node_material=mesh.node_region,
        is_semi=np.array([m.is_semiconductor for m in mats]),
        eps=np.array([m.eps_r * EPS0 for m in mats]),
        k300_cm=np.array([materials.active_k300(m) / 100.0 for m in mats]),
        k_exp=np.array([m.k_exponent for m in mats]),
        heat_cap=np.array([m.heat_capacity for m in mats]),
        mu_n0=np.array([m.mu_n0 for m in mats]),
        mu_p0=np.array([m.mu_p0 for m in mats]),
        mu_n_exp=np.array([m.mu_n_exponent for m in mats]),
        mu_p_exp=np.array([m.mu_p_exponent for m in mats]),
        vsat_n=np.array([max(m.v_sat_n, 1.0) for m in mats]),
        vsat_p=np.array([max(m.v_sat_p, 1.0) for m in mats]),
        tau_n=np.array([m.tau_n for m in mats]),
        tau_p=np.array([m.tau_p for m in mats]),
        nc300=np.array([m.nc_300 for m in mats]),
        nv300=np.array([m.nv_300 for m in mats]),
    )
    mesh._thermodd_marr = (materials, arr)
    return arr


@dataclass
class ResidualSystem:
    """Scaled residual + Jacobian triplets of one assembly."""

    residual: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    imap: IndexMap
    scaling: ScalingRecord

    @property
    def n_unknowns(self) -> int:
        return self.imap.n_unknowns

    def norm(self) -> float:
        return float(np.sqrt(np.mean(self.residual**2)))


# ---------------------------------------------------------------------------
# node-level thermodynamic helpers (vectorized over node subsets)
# ---------------------------------------------------------------------------

def _node_intrinsics(marr: MaterialArrays, node_idx: np.ndarray, T: np.ndarray):
    """Per-node n_i, d(ln n_i)/dT for a node subset given its temperatures."""
    mats = marr.node_material[node_idx]
    ni = np.empty_like(T)
    dlnni = np.empty_like(T)
    for m in np.unique(mats):
        sel = mats == m
        material = marr.materials[m]
        ni[sel] = intrinsic_density_unchecked(material, T[sel])
        dlnni[sel] = log_intrinsic_density_derivative(material, T[sel])
    return ni, dlnni


def quasi_fermi_potentials(state: DeviceState):
    """(phi_n, phi_p) as full nodal arrays; zero at insulator nodes."""
    mesh = state.mesh
    marr = material_arrays(mesh, state.materials)
    semi = np.flatnonzero(mesh.is_semiconductor)
    T = state.T[semi]
    ni, _ = _node_intrinsics(marr, semi, T)
    vt = K_B_EV * T
    phi_n = np.zeros(mesh.n_nodes)
    phi_p = np.zeros(mesh.n_nodes)
    phi_n[semi] = state.psi[semi] - vt * np.log(state.n[semi] / ni)
    phi_p[semi] = state.psi[semi] + vt * np.log(state.p[semi] / ni)
    return phi_n, phi_p


# ---------------------------------------------------------------------------
# public edge-current op (scalar form of the SG flux)
# ---------------------------------------------------------------------------

def edge_current(carrier: str, psi_i, psi_j, c_i, c_j, t_edge, mu_edge,
                 length_cm, alpha_edge: float = 0.0, dT: float = 0.0,
                 thermal_drift: bool = False):
    """Scharfetter-Gummel edge current density [A/cm^2].

    ``carrier`` selects the flux orientation convention: positive values are
    charge current flowing from node i to node j.  With ``thermal_drift``
    the potential difference is augmented by the thermoelectric term
    ``-alpha_edge * dT``.
    """
    if t_edge <= 0.0:
        raise AssemblyError("edge temperature must be positive")
    if c_i <= 0.0 or c_j <= 0.0:
        raise AssemblyError("carrier densities must be positive")
    vte = K_B_EV * t_edge
    dpsi = psi_j - psi_i
    if thermal_drift:
        dpsi = dpsi - alpha_edge * dT
    delta = dpsi / vte
    w = Q * mu_edge * vte / length_cm
    if carrier == "electron":
        return w * (bernoulli(delta) * c_j - bernoulli(-delta) * c_i)
    if carrier == "hole":
        return w * (bernoulli(delta) * c_i - bernoulli(-delta) * c_j)
    raise AssemblyError(f"unknown carrier {carrier!r}")


# ---------------------------------------------------------------------------
# edge computation core
# ---------------------------------------------------------------------------

class _EdgeData:
    """Semiconductor-edge SG currents, Joule power and their derivatives.

    All arrays are over the semiconductor-edge subset.  Derivative columns
    are ordered (psi_i, psi_j, n_i, n_j, p_i, p_j, T_i, T_j).
    """

    __slots__ = ("idx", "i", "j", "I_n", "I_p", "dI_n", "dI_p", "P", "dP",
                 "dphi_n", "dphi_p", "J_n", "J_p", "sg_n", "sg_p")


def _edge_currents(state: DeviceState, mesh: Mesh, marr: MaterialArrays,
                   options: AssemblyOptions, derivs: bool) -> _EdgeData:
    sel = np.flatnonzero(
        mesh.edge_d_lo * marr.is_semi[np.clip(mesh.edge_mat_lo, 0, None)]
        + mesh.edge_d_hi * marr.is_semi[np.clip(mesh.edge_mat_hi, 0, None)] > 0.0)
    i = mesh.edge_i[sel]
    j = mesh.edge_j[sel]
    L = mesh.edge_length[sel]

    psi_i, psi_j = state.psi[i], state.psi[j]
    n_i, n_j = state.n[i], state.n[j]
    p_i, p_j = state.p[i], state.p[j]
    T_i, T_j = state.T[i], state.T[j]
    T_e = 0.5 * (T_i + T_j)
    vte = K_B_EV * T_e

    ni_i, dlnni_i = _node_intrinsics(marr, i, T_i)
    ni_j, dlnni_j = _node_intrinsics(marr, j, T_j)
    vt_i = K_B_EV * T_i
    vt_j = K_B_EV * T_j

    log_n_i = np.log(n_i / ni_i)
    log_n_j = np.log(n_j / ni_j)
    log_p_i = np.log(p_i / ni_i)
    log_p_j = np.log(p_j / ni_j)
    phi_n_i = psi_i - vt_i * log_n_i
    phi_n_j = psi_j - vt_j * log_n_j
    phi_p_i = psi_i + vt_i * log_p_i
    phi_p_j = psi_j + vt_j * log_p_j

    # phi derivatives: columns (psi, c, T) at each endpoint
    dphin_dn_i = -vt_i / n_i
    dphin_dn_j = -vt_j / n_j
    dphin_dT_i = -K_B_EV * log_n_i + vt_i * dlnni_i
    dphin_dT_j = -K_B_EV * log_n_j + vt_j * dlnni_j
    dphip_dp_i = vt_i / p_i
    dphip_dp_j = vt_j / p_j
    dphip_dT_i = K_B_EV * log_p_i - vt_i * dlnni_i
    dphip_dT_j = K_B_EV * log_p_j - vt_j * dlnni_j

    m_lo = np.clip(mesh.edge_mat_lo[sel], 0, None)
    m_hi = np.clip(mesh.edge_mat_hi[sel], 0, None)
    d_lo = mesh.edge_d_lo[sel] * marr.is_semi[m_lo]
    d_hi = mesh.edge_d_hi[sel] * marr.is_semi[m_hi]

    nedge = i.size
    ncol = 8  # psi_i, psi_j, n_i, n_j, p_i, p_j, T_i, T_j

    data = _EdgeData()
    data.idx = sel
    data.i = i
    data.j = j
    data.dphi_n = (phi_n_i, phi_n_j, dphin_dn_i, dphin_dn_j, dphin_dT_i, dphin_dT_j)
    data.dphi_p = (phi_p_i, phi_p_j, dphip_dp_i, dphip_dp_j, dphip_dT_i, dphip_dT_j)

    def carrier_current(carrier):
        if carrier == "electron":
            c_i, c_j = n_i, n_j
            mu0, mu_exp, vsat = marr.mu_n0, marr.mu_n_exp, marr.vsat_n
            dphi = phi_n_j - phi_n_i
            # d(dphi)/d(psi_i, psi_j, c_i, c_j, T_i, T_j)
            ddphi = (-1.0, 1.0, -dphin_dn_i, dphin_dn_j, -dphin_dT_i, dphin_dT_j)
        else:
            c_i, c_j = p_i, p_j
            mu0, mu_exp, vsat = marr.mu_p0, marr.mu_p_exp, marr.vsat_p
            dphi = phi_p_j - phi_p_i
            ddphi = (-1.0, 1.0, -dphip_dp_i, dphip_dp_j, -dphip_dT_i, dphip_dT_j)

        # driving field along the edge, smoothed for differentiability
        u = dphi / L
        E = np.sqrt(u * u + _E_SMOOTH**2)
        dE_du = u / E

        # mobility * semiconductor dual face, summed over the two halves
        mud = np.zeros(nedge)
        dmud_dE = np.zeros(nedge)
        dmud_dTe = np.zeros(nedge)
        for m_half, d_half in ((m_lo, d_lo), (m_hi, d_hi)):
            mul = mu0[m_half] * (T_e / T_REF) ** (-mu_exp[m_half])
            x = mul * E / vsat[m_half]
            g = 1.0 / (1.0 + x)
            g2 = g * g
            mud += mul * g * d_half
            dmud_dE += -(mul * mul) * g2 / vsat[m_half] * d_half
            dmud_dTe += (-mu_exp[m_half] * mul / T_e) * g2 * d_half

        # thermoelectric augmentation of the drift term
        dT_edge = T_j - T_i
        if options.thermal_drift:
            if carrier == "electron":
                alpha_i = -K_B_EV * (2.5 - np.log(n_i / (marr.nc300[marr.node_material[i]] * (T_i / T_REF) ** 1.5)))
                alpha_j = -K_B_EV * (2.5 - np.log(n_j / (marr.nc300[marr.node_material[j]] * (T_j / T_REF) ** 1.5)))
                dalpha_dc_i = K_B_EV / n_i
                dalpha_dc_j = K_B_EV / n_j
                dalpha_dT_i = -K_B_EV * 1.5 / T_i
                dalpha_dT_j = -K_B_EV * 1.5 / T_j
            else:
                alpha_i = K_B_EV * (2.5 - np.log(p_i / (marr.nv300[marr.node_material[i]] * (T_i / T_REF) ** 1.5)))
                alpha_j = K_B_EV * (2.5 - np.log(p_j / (marr.nv300[marr.node_material[j]] * (T_j / T_REF) ** 1.5)))
                dalpha_dc_i = -K_B_EV / p_i
                dalpha_dc_j = -K_B_EV / p_j
                dalpha_dT_i = K_B_EV * 1.5 / T_i
                dalpha_dT_j = K_B_EV * 1.5 / T_j
            alpha_e = 0.5 * (alpha_i + alpha_j)
            daug = psi_j - psi_i - alpha_e * dT_edge
        else:
            alpha_e = np.zeros(nedge)
            daug = psi_j - psi_i

        delta = daug / vte
        b_pos = bernoulli(delta)
        b_neg = bernoulli(-delta)
        bp_pos = bernoulli_prime(delta)
        bp_neg = bernoulli_prime(-delta)

        if carrier == "electron":
            s = b_pos * c_j - b_neg * c_i
            ds_ddelta = bp_pos * c_j + bp_neg * c_i
            ds_dc_i = -b_neg
            ds_dc_j = b_pos
        else:
            s = b_pos * c_i - b_neg * c_j
            ds_ddelta = bp_pos * c_i + bp_neg * c_j
            ds_dc_i = b_pos
            ds_dc_j = -b_neg

        w = Q * vte / L * mud
        current = w * s
        sg_pieces = (w, b_pos, b_neg)
        if not derivs:
            return current, None, sg_pieces

        dI = np.zeros((ncol, nedge))
        # columns: 0 psi_i, 1 psi_j, 2 n_i, 3 n_j, 4 p_i, 5 p_j, 6 T_i, 7 T_j
        if carrier == "electron":
            col_ci, col_cj = 2, 3
        else:
            col_ci, col_cj = 4, 5

        dw_pref = Q * vte / L     # multiplies dmud
        dE_cols = {}
        for col, dd in zip((0, 1, col_ci, col_cj, 6, 7), ddphi):
            dE_cols[col] = dE_du * dd / L

        # W contributions (through mobility and vte)
        for col in (0, 1, col_ci, col_cj, 6, 7):
            dI[col] += dw_pref * dmud_dE * dE_cols[col] * s
        for col, half in ((6, 0.5), (7, 0.5)):
            dI[col] += (Q / L) * (half * K_B_EV * mud + vte * dmud_dTe * half) * s

        # S contributions through delta
        ddelta = np.zeros((ncol, nedge))
        ddelta[0] = -1.0 / vte
        ddelta[1] = 1.0 / vte
        ddelta[6] += -delta * 0.5 / T_e
        ddelta[7] += -delta * 0.5 / T_e
        if options.thermal_drift:
            ddelta[col_ci] += -(0.5 * dalpha_dc_i) * dT_edge / vte
            ddelta[col_cj] += -(0.5 * dalpha_dc_j) * dT_edge / vte
            ddelta[6] += (-(0.5 * dalpha_dT_i) * dT_edge + alpha_e) / vte
            ddelta[7] += (-(0.5 * dalpha_dT_j) * dT_edge - alpha_e) / vte
        for col in range(ncol):
            dI[col] += w * ds_ddelta * ddelta[col]
        dI[col_ci] += w * ds_dc_i
        dI[col_cj] += w * ds_dc_j
        return current, dI, sg_pieces

    data.I_n, data.dI_n, data.sg_n = carrier_current("electron")
    data.I_p, data.dI_p, data.sg_p = carrier_current("hole")

    d_semi = d_lo + d_hi
    data.J_n = data.I_n / d_semi
    data.J_p = data.I_p / d_semi

    # per-edge dissipated power P = I_n (phi_n_i - phi_n_j) + I_p (phi_p_i - phi_p_j)
    dphi_n = phi_n_i - phi_n_j
    dphi_p = phi_p_i - phi_p_j
    data.P = data.I_n * dphi_n + data.I_p * dphi_p
    if derivs:
        dP = np.zeros((8, nedge))
        for col in range(8):
            dP[col] = data.dI_n[col] * dphi_n + data.dI_p[col] * dphi_p
        dP[0] += data.I_n + data.I_p          # d(dphi)/dpsi_i = +1 both carriers
        dP[1] += -(data.I_n + data.I_p)
        dP[2] += data.I_n * dphin_dn_i
        dP[3] += -data.I_n * dphin_dn_j
        dP[4] += data.I_p * dphip_dp_i
        dP[5] += -data.I_p * dphip_dp_j
        dP[6] += data.I_n * dphin_dT_i + data.I_p * dphip_dT_i
        dP[7] += -(data.I_n * dphin_dT_j + data.I_p * dphip_dT_j)
        data.dP = dP
    else:
        data.dP = None
    return data


def _thomson_edge_power(state, mesh, marr, data, derivs):
    """Edge Thomson heat T_e * (-I_n dalpha_n + I_p dalpha_p) and derivatives."""
    i, j = data.i, data.j
    T_i, T_j = state.T[i], state.T[j]
    T_e = 0.5 * (T_i + T_j)
    n_i, n_j = state.n[i], state.n[j]
    p_i, p_j = state.p[i], state.p[j]
    mat_i = marr.node_material[i]
    mat_j = marr.node_material[j]
    nc_i = marr.nc300[mat_i] * (T_i / T_REF) ** 1.5
    nc_j = marr.nc300[mat_j] * (T_j / T_REF) ** 1.5
    nv_i = marr.nv300[mat_i] * (T_i / T_REF) ** 1.5
    nv_j = marr.nv300[mat_j] * (T_j / T_REF) ** 1.5
    an_i = -K_B_EV * (2.5 - np.log(n_i / nc_i))
    an_j = -K_B_EV * (2.5 - np.log(n_j / nc_j))
    ap_i = K_B_EV * (2.5 - np.log(p_i / nv_i))
    ap_j = K_B_EV * (2.5 - np.log(p_j / nv_j))
    dan = an_j - an_i
    dap = ap_j - ap_i
    power = T_e * (-data.I_n * dan + data.I_p * dap)
    if not derivs:
        return power, None
    dP = np.zeros((8, power.size))
    for col in range(8):
        dP[col] = T_e * (-data.dI_n[col] * dan + data.dI_p[col] * dap)
    # alpha derivatives: d(dan)/dn_i = -K/n_i, d(dap)/dp_i = +K/p_i
    dP[2] += T_e * data.I_n * (K_B_EV / n_i)
    dP[3] += -T_e * data.I_n * (K_B_EV / n_j)
    dP[4] += T_e * data.I_p * (K_B_EV / p_i)
    dP[5] += -T_e * data.I_p * (K_B_EV / p_j)
    dP[6] += 0.5 * (-data.I_n * dan + data.I_p * dap)
    dP[6] += T_e * (-data.I_n * (K_B_EV * 1.5 / T_i) + data.I_p * (-K_B_EV * 1.5 / T_i))
    dP[7] += 0.5 * (-data.I_n * dan + data.I_p * dap)
    dP[7] += T_e * (-data.I_n * (-K_B_EV * 1.5 / T_j) + data.I_p * (K_B_EV * 1.5 / T_j))
    return power, dP


# ---------------------------------------------------------------------------
# SRH node terms
# ---------------------------------------------------------------------------

def _srh_terms(state, marr, nodes):
    """R and its (dn, dp, dT) partials at the given semiconductor nodes."""
    n = state.n[nodes]
    p = state.p[nodes]
    T = state.T[nodes]
    mats = marr.node_material[nodes]
    tau_n = marr.tau_n[mats]
    tau_p = marr.tau_p[mats]
    ni, dlnni = _node_intrinsics(marr, nodes, T)
    den = tau_p * (n + ni) + tau_n * (p + ni)
    num = n * p - ni * ni
    R = num / den
    dR_dn = (p * den - num * tau_p) / (den * den)
    dR_dp = (n * den - num * tau_n) / (den * den)
    dR_dni = (-2.0 * ni * den - num * (tau_p + tau_n)) / (den * den)
    dR_dT = dR_dni * ni * dlnni
    return R, dR_dn, dR_dp, dR_dT


# ---------------------------------------------------------------------------
# heat generation (public derived field)
# ---------------------------------------------------------------------------

def heat_generation(state: DeviceState, mesh: Mesh | None = None,
                    materials: MaterialTable | None = None,
                    model: str = JOULE,
                    options: AssemblyOptions | None = None) -> np.ndarray:
    """Per-node heat generation density [W/cm^3].

    ``joule`` distributes the Scharfetter-Gummel-consistent dissipation
    I * delta(phi) of each edge onto its endpoint control volumes, which is
    the discrete form of |J|^2/(q c mu) per carrier.  ``thermodynamic``
    adds SRH recombination heat (band gap + 3 kT per net event) and, when
    the thermal-drift flag is on, the Thomson edge terms.
    """
    mesh = mesh or state.mesh
    materials = materials or state.materials
    options = options or AssemblyOptions(heat_model=model)
    if options.heat_model != model:
        options = replace(options, heat_model=model)
    marr = material_arrays(mesh, materials)
    data = _edge_currents(state, mesh, marr, options, derivs=False)
    power = np.zeros(mesh.n_nodes)
    np.add.at(power, data.i, 0.5 * data.P)
    np.add.at(power, data.j, 0.5 * data.P)
    if model == THERMODYNAMIC:
        semi = np.flatnonzero(mesh.is_semiconductor)
        R, _, _, _ = _srh_terms(state, marr, semi)
        T = state.T[semi]
        mats = marr.node_material[semi]
        erec = np.zeros(semi.size)
        for m in np.unique(mats):
            msel = mats == m
            erec[msel] = Q * band_gap(marr.materials[m], T[msel]) + 3.0 * K_B * T[msel]
        power[semi] += R * erec * mesh.area_semi[semi]
        if options.thermal_drift:
            tp, _ = _thomson_edge_power(state, mesh, marr, data, derivs=False)
            np.add.at(power, data.i, 0.5 * tp)
            np.add.at(power, data.j, 0.5 * tp)
    h = np.zeros(mesh.n_nodes)
    semi_nodes = mesh.area_semi > 0.0
    h[semi_nodes] = power[semi_nodes] / mesh.area_semi[semi_nodes]
    return h


def edge_current_densities(state: DeviceState):
    """(J_n, J_p) per semiconductor edge [A/cm^2] plus the edge subset indices."""
    mesh = state.mesh
    marr = material_arrays(mesh, state.materials)
    data = _edge_currents(state, mesh, marr, AssemblyOptions(), derivs=False)
    return data.idx, data.J_n, data.J_p


def terminal_currents(state: DeviceState) -> dict[str, float]:
    """Charge current flowing from each contact into the device [A/cm depth].

    The sum over contacts vanishes exactly at a perfectly converged state
    (discrete conservation); the residual of the sum reflects the Newton
    tolerance.
    """
    mesh = state.mesh
    marr = material_arrays(mesh, state.materials)
    data = _edge_currents(state, mesh, marr, AssemblyOptions(), derivs=False)
    contact_id = np.full(mesh.n_nodes, -1, dtype=int)
    for cid, contact in enumerate(mesh.contacts):
        contact_id[contact.nodes] = cid
    totals = np.zeros(len(mesh.contacts))
    I_tot = data.I_n + data.I_p
    ci = contact_id[data.i]
    cj = contact_id[data.j]
    np.add.at(totals, ci[ci >= 0], I_tot[ci >= 0])
    np.add.at(totals, cj[cj >= 0], -I_tot[cj >= 0])
    return {contact.name: float(totals[cid])
            for cid, contact in enumerate(mesh.contacts)}


# ---------------------------------------------------------------------------
# full system assembly
# ---------------------------------------------------------------------------

def _scatter(rows_list, cols_list, vals_list, rows, cols, vals, free):
    keep = free[rows]
    rows_list.append(rows[keep])
    cols_list.append(cols[keep])
    vals_list.append(vals[keep])


def assemble_system(state: DeviceState, mesh: Mesh | None = None,
                    materials: MaterialTable | None = None,
                    options: AssemblyOptions | None = None,
                    with_jacobian: bool = True) -> ResidualSystem:
    """Assemble the scaled residual and analytic Jacobian at ``state``."""
    mesh = mesh or state.mesh
    materials = materials or state.materials
    options = options or AssemblyOptions()
    state.validate()
    if not any(c.is_thermal for c in mesh.contacts):
        raise AssemblyError("mesh has no thermal contact")

    imap = index_map(mesh)
    marr = material_arrays(mesh, materials)
    n_u = imap.n_unknowns
    t_amb = mesh.spec.ambient_temperature
    c_ref = max(float(np.max(np.abs(mesh.net_doping))), 1e12)
    scaling = ScalingRecord(v_ref=_V_REF, c_ref=c_ref, t_ref=_T_SCALE,
                            nu_ref=_NU_REF, k_ref=_K_REF)

    F = np.zeros(n_u)
    rows_list: list[np.ndarray] = []
    cols_list: list[np.ndarray] = []
    vals_list: list[np.ndarray] = []

    # ----- Dirichlet row bookkeeping ------------------------------------
    free = np.ones(n_u, dtype=bool)
    ohmic_nodes: list[np.ndarray] = []
    ohmic_bias: list[np.ndarray] = []
    gate_nodes: list[np.ndarray] = []
    gate_bias: list[np.ndarray] = []
    thermal_nodes: list[np.ndarray] = []
    for contact in mesh.contacts:
        v_c = state.bias.get(contact.name, 0.0)
        if contact.kind in ("ohmic", "thermal+ohmic"):
            ohmic_nodes.append(contact.nodes)
            ohmic_bias.append(np.full(contact.nodes.size, v_c))
            free[imap.ipsi[contact.nodes]] = False
            free[imap.inn[contact.nodes]] = False
            free[imap.ipp[contact.nodes]] = False
        elif contact.kind == "gate":
            gate_nodes.append(contact.nodes)
            gate_bias.append(np.full(contact.nodes.size, v_c + contact.gate_offset_v))
            free[imap.ipsi[contact.nodes]] = False
        if contact.is_thermal:
            thermal_nodes.append(contact.nodes)
            free[imap.iT[contact.nodes]] = False
    if options.isothermal:
        free[imap.iT[imap.iT >= 0]] = False

    # ----- Poisson fluxes (all edges) -----------------------------------
    ei, ej = mesh.edge_i, mesh.edge_j
    eps_d = (marr.eps[np.clip(mesh.edge_mat_lo, 0, None)] * mesh.edge_d_lo
             + marr.eps[np.clip(mesh.edge_mat_hi, 0, None)] * mesh.edge_d_hi)
    c_eps = eps_d / mesh.edge_length
    flux = c_eps * (state.psi[ej] - state.psi[ei])
    np.add.at(F, imap.ipsi[ei], flux)
    np.add.at(F, imap.ipsi[ej], -flux)
    if with_jacobian:
        ri, rj = imap.ipsi[ei], imap.ipsi[ej]
        _scatter(rows_list, cols_list, vals_list,
                 np.concatenate([ri, ri, rj, rj]),
                 np.concatenate([ri, rj, rj, ri]),
                 np.concatenate([-c_eps, c_eps, -c_eps, c_eps]), free)

    # ----- node charge terms ---------------------------------------------
    semi = np.flatnonzero(mesh.is_semiconductor)
    a_semi = mesh.area_semi[semi]
    charge = Q * (state.p[semi] - state.n[semi] + mesh.net_doping[semi]) * a_semi
    np.add.at(F, imap.ipsi[semi], charge)
    np.add.at(F, imap.ipsi, mesh.trap_charge * mesh.area_total)
    if with_jacobian:
        rpsi = imap.ipsi[semi]
        _scatter(rows_list, cols_list, vals_list,
                 np.concatenate([rpsi, rpsi]),
                 np.concatenate([imap.inn[semi], imap.ipp[semi]]),
                 np.concatenate([-Q * a_semi, Q * a_semi]), free)

    # ----- SG currents into continuity rows ------------------------------
    data = _edge_currents(state, mesh, marr, options, derivs=with_jacobian)
    col_map = lambda d: [imap.ipsi[d.i], imap.ipsi[d.j],
                         imap.inn[d.i], imap.inn[d.j],
                         imap.ipp[d.i], imap.ipp[d.j],
                         imap.iT[d.i], imap.iT[d.j]]
    np.add.at(F, imap.inn[data.i], data.I_n)
    np.add.at(F, imap.inn[data.j], -data.I_n)
    np.add.at(F, imap.ipp[data.i], data.I_p)
    np.add.at(F, imap.ipp[data.j], -data.I_p)
    if with_jacobian:
        cols8 = col_map(data)
        for carrier, dI in (("n", data.dI_n), ("p", data.dI_p)):
            row_i = imap.inn[data.i] if carrier == "n" else imap.ipp[data.i]
            row_j = imap.inn[data.j] if carrier == "n" else imap.ipp[data.j]
            for col in range(8):
                _scatter(rows_list, cols_list, vals_list, row_i, cols8[col], dI[col], free)
                _scatter(rows_list, cols_list, vals_list, row_j, cols8[col], -dI[col], free)

    # ----- SRH recombination ---------------------------------------------
    R, dR_dn, dR_dp, dR_dT = _srh_terms(state, marr, semi)
    np.add.at(F, imap.inn[semi], -Q * R * a_semi)
    np.add.at(F, imap.ipp[semi], Q * R * a_semi)
    if with_jacobian:
        for row_idx, sign in ((imap.inn[semi], -1.0), (imap.ipp[semi], 1.0)):
            _scatter(rows_list, cols_list, vals_list, row_idx, imap.inn[semi],
                     sign * Q * dR_dn * a_semi, free)
            _scatter(rows_list, cols_list, vals_list, row_idx, imap.ipp[semi],
                     sign * Q * dR_dp * a_semi, free)
            _scatter(rows_list, cols_list, vals_list, row_idx, imap.iT[semi],
                     sign * Q * dR_dT * a_semi, free)

    # ----- heat equation ---------------------------------------------------
    if not options.isothermal:
        # lattice conduction on all edges
        T_i, T_j = state.T[ei], state.T[ej]
        T_e = 0.5 * (T_i + T_j)
        m_lo = np.clip(mesh.edge_mat_lo, 0, None)
        m_hi = np.clip(mesh.edge_mat_hi, 0, None)
        kd = np.zeros(ei.size)
        dkd_dTe = np.zeros(ei.size)
        for m_half, d_half in ((m_lo, mesh.edge_d_lo), (m_hi, mesh.edge_d_hi)):
            k_half = marr.k300_cm[m_half] * (T_e / T_REF) ** (-marr.k_exp[m_half])
            kd += k_half * d_half
            dkd_dTe += (-marr.k_exp[m_half] * k_half / T_e) * d_half
        dn_i = dn_j = dp_i = dp_j = None
        if options.wiedemann_franz:
            d_semi_lo = mesh.edge_d_lo * marr.is_semi[m_lo]
            d_semi_hi = mesh.edge_d_hi * marr.is_semi[m_hi]
            n_e = 0.5 * (state.n[ei] + state.n[ej])
            p_e = 0.5 * (state.p[ei] + state.p[ej])
            dn_i = np.zeros(ei.size)
            for m_half, d_half in ((m_lo, d_semi_lo), (m_hi, d_semi_hi)):
                mul_n = marr.mu_n0[m_half] * (T_e / T_REF) ** (-marr.mu_n_exp[m_half])
                mul_p = marr.mu_p0[m_half] * (T_e / T_REF) ** (-marr.mu_p_exp[m_half])
                sigma = Q * (mul_n * n_e + mul_p * p_e)
                kd += LORENZ * sigma * T_e * d_half
                dkd_dTe += LORENZ * Q * d_half * (
                    mul_n * n_e * (1.0 - marr.mu_n_exp[m_half])
                    + mul_p * p_e * (1.0 - marr.mu_p_exp[m_half]))
                dn_i += 0.5 * LORENZ * Q * mul_n * T_e * d_half
            dn_j = dn_i.copy()
            dp_i = np.zeros(ei.size)
            for m_half, d_half in ((m_lo, d_semi_lo), (m_hi, d_semi_hi)):
                mul_p = marr.mu_p0[m_half] * (T_e / T_REF) ** (-marr.mu_p_exp[m_half])
                dp_i += 0.5 * LORENZ * Q * mul_p * T_e * d_half
            dp_j = dp_i.copy()

        hflux = kd / mesh.edge_length * (T_j - T_i)
        np.add.at(F, imap.iT[ei], hflux)
        np.add.at(F, imap.iT[ej], -hflux)
        if with_jacobian:
            ri, rj = imap.iT[ei], imap.iT[ej]
            dflux_dTi = -kd / mesh.edge_length + (T_j - T_i) / mesh.edge_length * dkd_dTe * 0.5
            dflux_dTj = kd / mesh.edge_length + (T_j - T_i) / mesh.edge_length * dkd_dTe * 0.5
            for row, sign in ((ri, 1.0), (rj, -1.0)):
                _scatter(rows_list, cols_list, vals_list, row, imap.iT[ei], sign * dflux_dTi, free)
                _scatter(rows_list, cols_list, vals_list, row, imap.iT[ej], sign * dflux_dTj, free)
                if options.wiedemann_franz:
                    grad = (T_j - T_i) / mesh.edge_length
                    for colarr, dval in ((imap.inn[ei], dn_i), (imap.inn[ej], dn_j),
                                         (imap.ipp[ei], dp_i), (imap.ipp[ej], dp_j)):
                        ok = colarr >= 0
                        _scatter(rows_list, cols_list, vals_list, row[ok], colarr[ok],
                                 (sign * grad * dval)[ok], free)

        # Joule heat from the SG edges
        np.add.at(F, imap.iT[data.i], 0.5 * data.P)
        np.add.at(F, imap.iT[data.j], 0.5 * data.P)
        if with_jacobian:
            cols8 = col_map(data)
            for row in (imap.iT[data.i], imap.iT[data.j]):
                for col in range(8):
                    _scatter(rows_list, cols_list, vals_list, row, cols8[col],
                             0.5 * data.dP[col], free)

        if options.heat_model == THERMODYNAMIC:
            # net SRH recombination releases (gap + 3 kT) per event
            T_s = state.T[semi]
            mats = marr.node_material[semi]
            erec = np.zeros(semi.size)
            derec = np.zeros(semi.size)
            for m in np.unique(mats):
                msel = mats == m
                erec[msel] = Q * band_gap(marr.materials[m], T_s[msel]) + 3.0 * K_B * T_s[msel]
                derec[msel] = Q * band_gap_derivative(marr.materials[m], T_s[msel]) + 3.0 * K_B
            np.add.at(F, imap.iT[semi], R * erec * a_semi)
            if with_jacobian:
                row = imap.iT[semi]
                _scatter(rows_list, cols_list, vals_list, row, imap.inn[semi],
                         dR_dn * erec * a_semi, free)
                _scatter(rows_list, cols_list, vals_list, row, imap.ipp[semi],
                         dR_dp * erec * a_semi, free)
                _scatter(rows_list, cols_list, vals_list, row, imap.iT[semi],
                         (dR_dT * erec + R * derec) * a_semi, free)
            if options.thermal_drift:
                tp, dtp = _thomson_edge_power(state, mesh, marr, data, with_jacobian)
                np.add.at(F, imap.iT[data.i], 0.5 * tp)
                np.add.at(F, imap.iT[data.j], 0.5 * tp)
                if with_jacobian:
                    cols8 = col_map(data)
                    for row in (imap.iT[data.i], imap.iT[data.j]):
                        for col in range(8):
                            _scatter(rows_list, cols_list, vals_list, row, cols8[col],
                                     0.5 * dtp[col], free)

    # ----- transient terms (backward Euler) ------------------------------
    if options.dt is not None:
        dt = options.dt
        prev = options.prev
        np.add.at(F, imap.inn[semi], -Q * a_semi * (state.n[semi] - prev.n[semi]) / dt)
        np.add.at(F, imap.ipp[semi], Q * a_semi * (state.p[semi] - prev.p[semi]) / dt)
        if with_jacobian:
            _scatter(rows_list, cols_list, vals_list, imap.inn[semi], imap.inn[semi],
                     np.full(semi.size, -1.0) * Q * a_semi / dt, free)
            _scatter(rows_list, cols_list, vals_list, imap.ipp[semi], imap.ipp[semi],
                     Q * a_semi / dt, free)
        if not options.isothermal:
            cap_area = _heat_capacity_area(mesh, marr)
            np.add.at(F, imap.iT, -cap_area * (state.T - prev.T) / dt)
            if with_jacobian:
                _scatter(rows_list, cols_list, vals_list, imap.iT, imap.iT,
                         -cap_area / dt, free)

    # ----- row scaling -----------------------------------------------------
    row_scale = np.ones(n_u)
    row_scale[imap.ipsi] = 1.0 / (Q * c_ref * mesh.area_total)
    sel = imap.inn >= 0
    row_scale[imap.inn[sel]] = 1.0 / (Q * c_ref * _NU_REF * mesh.area_semi[sel])
    row_scale[imap.ipp[sel]] = 1.0 / (Q * c_ref * _NU_REF * mesh.area_semi[sel])
    row_scale[imap.iT] = 1.0 / (_K_REF * _T_SCALE)

    F *= row_scale
    if with_jacobian and rows_list:
        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        vals = np.concatenate(vals_list) * row_scale[rows]
    else:
        rows = np.zeros(0, dtype=int)
        cols = np.zeros(0, dtype=int)
        vals = np.zeros(0)

    # ----- Dirichlet rows ---------------------------------------------------
    d_rows: list[np.ndarray] = []
    d_cols: list[np.ndarray] = []
    d_vals: list[np.ndarray] = []

    if ohmic_nodes:
        nodes = np.concatenate(ohmic_nodes)
        v_app = np.concatenate(ohmic_bias)
        T_c = state.T[nodes]
        N_c = mesh.net_doping[nodes]
        ni, dlnni = _node_intrinsics(marr, nodes, T_c)
        vt = K_B_EV * T_c
        u = N_c / (2.0 * ni)
        psi_bi = vt * np.arcsinh(u)
        root = np.sqrt(u * u + 1.0)
        dpsi_bi_dT = K_B_EV * np.arcsinh(u) + vt * (-u * dlnni) / root
        n_eq, p_eq = _neutral_densities(N_c, ni)
        # d n_eq / d ni = 2 ni / sqrt(N^2 + 4 ni^2); dni/dT = ni dlnni
        dneq_dT = (2.0 * ni / np.sqrt(N_c * N_c + 4.0 * ni * ni)) * ni * dlnni
        dln_neq_dT = dneq_dT / n_eq
        # p_eq = ni^2 / n_eq
        dln_peq_dT = 2.0 * dlnni - dln_neq_dT

        rpsi = imap.ipsi[nodes]
        F[rpsi] = (state.psi[nodes] - v_app - psi_bi) / _V_REF
        d_rows.extend([rpsi, rpsi])
        d_cols.extend([rpsi, imap.iT[nodes]])
        d_vals.extend([np.full(nodes.size, 1.0 / _V_REF), -dpsi_bi_dT / _V_REF])

        rn = imap.inn[nodes]
        F[rn] = np.log(state.n[nodes] / n_eq)
        d_rows.extend([rn, rn])
        d_cols.extend([rn, imap.iT[nodes]])
        d_vals.extend([1.0 / state.n[nodes], -dln_neq_dT])

        rp = imap.ipp[nodes]
        F[rp] = np.log(state.p[nodes] / p_eq)
        d_rows.extend([rp, rp])
        d_cols.extend([rp, imap.iT[nodes]])
        d_vals.extend([1.0 / state.p[nodes], -dln_peq_dT])

    if gate_nodes:
        nodes = np.concatenate(gate_nodes)
        target = np.concatenate(gate_bias)
        rpsi = imap.ipsi[nodes]
        F[rpsi] = (state.psi[nodes] - target) / _V_REF
        d_rows.append(rpsi)
        d_cols.append(rpsi)
        d_vals.append(np.full(nodes.size, 1.0 / _V_REF))

    if options.isothermal:
        rT = imap.iT
        F[rT] = (state.T - t_amb) / _T_SCALE
        d_rows.append(rT)
        d_cols.append(rT)
        d_vals.append(np.full(mesh.n_nodes, 1.0 / _T_SCALE))
    elif thermal_nodes:
        nodes = np.unique(np.concatenate(thermal_nodes))
        rT = imap.iT[nodes]
        F[rT] = (state.T[nodes] - t_amb) / _T_SCALE
        d_rows.append(rT)
        d_cols.append(rT)
        d_vals.append(np.full(nodes.size, 1.0 / _T_SCALE))

    if with_jacobian:
        if d_rows:
            rows = np.concatenate([rows] + d_rows)
            cols = np.concatenate([cols] + d_cols)
            vals = np.concatenate([vals] + d_vals)
        # pad the pattern with transposed zeros so the structure is symmetric
        rows, cols, vals = (np.concatenate([rows, cols]),
                            np.concatenate([cols, rows]),
                            np.concatenate([vals, np.zeros_like(vals)]))

    if not np.all(np.isfinite(F)):
        raise AssemblyError("residual contains non-finite entries")
    return ResidualSystem(residual=F, rows=rows, cols=cols, vals=vals,
                          imap=imap, scaling=scaling)


def _neutral_densities(net_doping, ni):
    # majority density via the quadratic formula in its cancellation-free form
    root = np.sqrt(net_doping * net_doping + 4.0 * ni * ni)
    majority = 0.5 * (np.abs(net_doping) + root)
    minority = ni * ni / majority
    n = np.where(net_doping >= 0.0, majority, minority)
    p = np.where(net_doping >= 0.0, minority, majority)
    return n, p


def _heat_capacity_area(mesh: Mesh, marr: MaterialArrays) -> np.ndarray:
    """Heat-capacity-weighted control-volume area per node [J/(cm*K)]."""
    x = mesh.x_lines_um * UM_TO_CM
    y = mesh.y_lines_um * UM_TO_CM
    dx = np.diff(x)
    dy = np.diff(y)
    nx, ny = mesh.nx, mesh.ny
    quarter = np.outer(dx, dy) / 4.0
    c_cell = marr.heat_cap[mesh.cell_region]
    out = np.zeros(mesh.n_nodes)
    for ox, oy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        nodes = (np.arange(nx - 1)[:, None] + ox) * ny + (np.arange(ny - 1)[None, :] + oy)
        np.add.at(out, nodes.ravel(), (quarter * c_cell).ravel())
    return out


# ---------------------------------------------------------------------------
# state vector packing (used by the solver and the FD Jacobian oracle)
# ---------------------------------------------------------------------------

def pack_state(state: DeviceState) -> np.ndarray:
    imap = index_map(state.mesh)
    u = np.zeros(imap.n_unknowns)
    u[imap.ipsi] = state.psi
    sel = imap.inn >= 0
    u[imap.inn[sel]] = state.n[sel]
    u[imap.ipp[sel]] = state.p[sel]
    u[imap.iT] = state.T
    return u


def unpack_state(u: np.ndarray, template: DeviceState) -> DeviceState:
    imap = index_map(template.mesh)
    psi = u[imap.ipsi].copy()
    n = template.n.copy()
    p = template.p.copy()
    sel = imap.inn >= 0
    n[sel] = u[imap.inn[sel]]
    p[sel] = u[imap.ipp[sel]]
    T = u[imap.iT].copy()
    return template.with_fields(psi=psi, n=n, p=p, T=T)
