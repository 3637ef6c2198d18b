"""Material models: carrier statistics, mobility, recombination, heat transport.

All model evaluations are pure functions of their arguments, so results are
bit-reproducible and safe to call concurrently.  Temperature-dependent
quantities use closed-form laws whose constants live on the (frozen)
``Material`` dataclass; a ``MaterialTable`` bundles the materials of one
simulation together with the selected silicon isotope variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import K_B, K_B_EV, Q, T_REF

NATURAL_SI = "natural-Si"
SI_28 = "Si-28"

# Effective densities of states calibrated so that n_i(300 K) = 1.08e10 cm^-3
# with the Varshni gap below; the Nc/Nv ratio is the textbook silicon value.
_EG0 = 1.17
_VARSHNI_A = 4.73e-4
_VARSHNI_B = 636.0
_EG_300 = _EG0 - _VARSHNI_A * T_REF**2 / (T_REF + _VARSHNI_B)
_NI_300 = 1.08e10
_S0 = _NI_300 * math.exp(_EG_300 / (2.0 * K_B_EV * T_REF))
_NC_300 = _S0 * math.sqrt(2.8 / 3.1)
_NV_300 = _S0 * math.sqrt(3.1 / 2.8)


class MaterialError(ValueError):
    """Invalid material definition or lookup."""


@dataclass(frozen=True)
class IsotopeVariant:
    """A named isotope composition, distinguished only by its k(300 K)."""

    name: str
    k_300: float  # [W/(m*K)]

    def __post_init__(self):
        if self.k_300 <= 0.0:
            raise MaterialError(f"k_300 must be positive, got {self.k_300}")


@dataclass(frozen=True)
class Material:
    """Physical parameters of one material.

    Electrical carrier parameters are only meaningful when
    ``is_semiconductor`` is true; insulators participate in the Poisson and
    heat equations alone.
    """

    name: str
    is_semiconductor: bool
    eps_r: float
    # thermal transport: k(T) = k_300 * (T/300)^(-gamma), k_300 in W/(m*K)
    k_300: float
    k_exponent: float
    heat_capacity: float          # volumetric, [J/(cm^3*K)]
    # carrier transport (semiconductors only)
    mu_n0: float = 0.0            # low-field mobility at 300 K [cm^2/(V*s)]
    mu_p0: float = 0.0
    mu_n_exponent: float = 0.0    # mu_low(T) = mu0 * (T/300)^(-exponent)
    mu_p_exponent: float = 0.0
    v_sat_n: float = 0.0          # saturation velocity [cm/s]
    v_sat_p: float = 0.0
    tau_n: float = 0.0            # SRH lifetime [s]
    tau_p: float = 0.0
    nc_300: float = 0.0           # effective DOS [cm^-3]
    nv_300: float = 0.0
    eg_0: float = 0.0             # Varshni gap parameters, Eg in eV
    varshni_a: float = 0.0
    varshni_b: float = 1.0
    isotope_variants: tuple[IsotopeVariant, ...] = ()

    def __post_init__(self):
        positives = {"eps_r": self.eps_r, "k_300": self.k_300,
                     "heat_capacity": self.heat_capacity}
        if self.is_semiconductor:
            positives.update({
                "mu_n0": self.mu_n0, "mu_p0": self.mu_p0,
                "v_sat_n": self.v_sat_n, "v_sat_p": self.v_sat_p,
                "tau_n": self.tau_n, "tau_p": self.tau_p,
                "nc_300": self.nc_300, "nv_300": self.nv_300,
                "eg_0": self.eg_0,
            })
        for key, value in positives.items():
            if value <= 0.0:
                raise MaterialError(f"{self.name}: {key} must be positive, got {value}")
        if self.k_exponent < 0.0:
            raise MaterialError(f"{self.name}: k_exponent must be >= 0")

    def variant(self, name: str) -> IsotopeVariant:
        for var in self.isotope_variants:
            if var.name == name:
                return var
        raise MaterialError(f"{self.name}: unknown isotope variant {name!r}")


def silicon(**overrides) -> Material:
    """Default silicon with natural and 28-enriched isotope variants."""
    base = dict(
        name="si",
        is_semiconductor=True,
        eps_r=11.7,
        k_300=148.0,
        k_exponent=1.3,
        heat_capacity=1.63,
        mu_n0=1417.0,
        mu_p0=470.5,
        mu_n_exponent=2.2,
        mu_p_exponent=2.1,
        v_sat_n=1.07e7,
        v_sat_p=8.37e6,
        tau_n=1.0e-6,
        tau_p=1.0e-6,
        nc_300=_NC_300,
        nv_300=_NV_300,
        eg_0=_EG0,
        varshni_a=_VARSHNI_A,
        varshni_b=_VARSHNI_B,
        isotope_variants=(
            IsotopeVariant(NATURAL_SI, 148.0),
            IsotopeVariant(SI_28, 200.0),
        ),
    )
    base.update(overrides)
    return Material(**base)


def oxide(**overrides) -> Material:
    """Default SiO2: Poisson and heat participation only."""
    base = dict(
        name="sio2",
        is_semiconductor=False,
        eps_r=3.9,
        k_300=1.4,
        k_exponent=0.0,
        heat_capacity=1.67,
    )
    base.update(overrides)
    return Material(**base)


@dataclass(frozen=True)
class MaterialTable:
    """Immutable material lookup for one simulation run."""

    materials: dict[str, Material]
    silicon_variant: str = NATURAL_SI

    def __post_init__(self):
        for mat in self.materials.values():
            if len(mat.isotope_variants) >= 2:
                k300 = {v.name: v.k_300 for v in mat.isotope_variants}
                if SI_28 in k300 and NATURAL_SI in k300 and k300[SI_28] <= k300[NATURAL_SI]:
                    raise MaterialError(
                        f"{mat.name}: k_300({SI_28}) must exceed k_300({NATURAL_SI})")

    def __getitem__(self, name: str) -> Material:
        try:
            return self.materials[name]
        except KeyError:
            raise MaterialError(f"unknown material {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.materials

    def active_k300(self, material: Material) -> float:
        """k_300 of the active isotope variant, or the base value."""
        if material.isotope_variants:
            return material.variant(self.silicon_variant).k_300
        return material.k_300

    def with_variant(self, variant: str) -> "MaterialTable":
        for mat in self.materials.values():
            if mat.isotope_variants:
                mat.variant(variant)  # raises for unknown names
        return replace(self, silicon_variant=variant)

    def with_material(self, material: Material) -> "MaterialTable":
        mats = dict(self.materials)
        mats[material.name] = material
        return replace(self, materials=mats)


def default_table(variant: str = NATURAL_SI) -> MaterialTable:
    return MaterialTable(
        materials={"si": silicon(), "sio2": oxide()},
        silicon_variant=variant,
    )


# ---------------------------------------------------------------------------
# model evaluations
# ---------------------------------------------------------------------------

def band_gap(material: Material, temperature):
    """Varshni band gap in eV."""
    t = np.asarray(temperature, dtype=float)
    return material.eg_0 - material.varshni_a * t * t / (t + material.varshni_b)


def band_gap_derivative(material: Material, temperature):
    t = np.asarray(temperature, dtype=float)
    return -material.varshni_a * t * (t + 2.0 * material.varshni_b) / (t + material.varshni_b) ** 2


def effective_dos(material: Material, temperature):
    """(Nc, Nv) at temperature, each scaling as T^1.5."""
    t = np.asarray(temperature, dtype=float)
    scale = (t / T_REF) ** 1.5
    return material.nc_300 * scale, material.nv_300 * scale


def intrinsic_density_unchecked(material: Material, temperature):
    """n_i(T) without the validity-range guard (used by the assembler)."""
    t = np.asarray(temperature, dtype=float)
    nc, nv = effective_dos(material, t)
    eg = band_gap(material, t)
    return np.sqrt(nc * nv) * np.exp(-eg / (2.0 * K_B_EV * t))


def intrinsic_density(material: Material, temperature):
    """Intrinsic carrier density [cm^-3]; valid for 200 K <= T <= 700 K."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t < 200.0) or np.any(t > 700.0):
        raise MaterialError("temperature outside the 200-700 K validity range")
    if not material.is_semiconductor:
        raise MaterialError(f"{material.name} is not a semiconductor")
    return intrinsic_density_unchecked(material, temperature)


def log_intrinsic_density_derivative(material: Material, temperature):
    """d(ln n_i)/dT, used for contact boundary values and their Jacobians."""
    t = np.asarray(temperature, dtype=float)
    eg = band_gap(material, t)
    deg = band_gap_derivative(material, t)
    return 1.5 / t + eg / (2.0 * K_B_EV * t * t) - deg / (2.0 * K_B_EV * t)


def low_field_mobility(material: Material, carrier: str, temperature):
    t = np.asarray(temperature, dtype=float)
    if carrier == "electron":
        return material.mu_n0 * (t / T_REF) ** (-material.mu_n_exponent)
    if carrier == "hole":
        return material.mu_p0 * (t / T_REF) ** (-material.mu_p_exponent)
    raise MaterialError(f"unknown carrier {carrier!r}")


def mobility(material: Material, carrier: str, e_parallel, temperature,
             n_total=None):
    """Field- and temperature-dependent mobility [cm^2/(V*s)].

    mu = mu_low(T) / (1 + mu_low(T) * E / v_sat), so mu -> mu_low at zero
    field and mu*E -> v_sat at large fields.  ``n_total`` is accepted for a
    doping-dependent extension; the default model ignores it.
    """
    e = np.asarray(e_parallel, dtype=float)
    if np.any(e < 0.0):
        raise MaterialError("e_parallel must be non-negative")
    mu_low = low_field_mobility(material, carrier, temperature)
    v_sat = material.v_sat_n if carrier == "electron" else material.v_sat_p
    return mu_low / (1.0 + mu_low * e / v_sat)


def saturation_field(material: Material, carrier: str, temperature):
    """E_c = v_sat / mu_low: field scale of velocity saturation [V/cm]."""
    mu_low = low_field_mobility(material, carrier, temperature)
    v_sat = material.v_sat_n if carrier == "electron" else material.v_sat_p
    return v_sat / mu_low


def thermal_conductivity(material: Material, variant: str | None, temperature):
    """k(T) = k_300(variant) * (T/300)^(-gamma), in W/(m*K)."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0.0):
        raise MaterialError("temperature must be positive")
    if variant is None:
        k300 = material.k_300
    else:
        k300 = material.variant(variant).k_300
    return k300 * (t / T_REF) ** (-material.k_exponent)


def srh_recombination(n, p, temperature, material: Material):
    """Shockley-Read-Hall net recombination [cm^-3 s^-1], midgap trap level."""
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(n <= 0.0) or np.any(p <= 0.0):
        raise MaterialError("carrier densities must be positive")
    ni = intrinsic_density_unchecked(material, temperature)
    den = material.tau_p * (n + ni) + material.tau_n * (p + ni)
    return (p * n - ni * ni) / den


def thermoelectric_power(carrier: str, density, temperature, material: Material):
    """Kinetic-model thermoelectric power [V/K].

    alpha_n = -(k_B/q) * (5/2 - ln(n/Nc));  alpha_p mirrors it with Nv.
    """
    dens = np.asarray(density, dtype=float)
    if np.any(dens <= 0.0):
        raise MaterialError("density must be positive")
    nc, nv = effective_dos(material, temperature)
    if carrier == "electron":
        return -K_B_EV * (2.5 - np.log(dens / nc))
    if carrier == "hole":
        return K_B_EV * (2.5 - np.log(dens / nv))
    raise MaterialError(f"unknown carrier {carrier!r}")


def equilibrium_densities(material: Material, net_doping, temperature):
    """Charge-neutral (n, p) for a given net doping N_D - N_A [cm^-3].

    Evaluated in a cancellation-free form: the majority density comes from
    the quadratic formula, the minority density from n*p = n_i^2.
    """
    nd = np.asarray(net_doping, dtype=float)
    ni = intrinsic_density_unchecked(material, temperature)
    root = np.sqrt(nd * nd + 4.0 * ni * ni)
    majority = 0.5 * (np.abs(nd) + root)
    minority = ni * ni / majority
    n = np.where(nd >= 0.0, majority, minority)
    p = np.where(nd >= 0.0, minority, majority)
    return n, p


def builtin_potential(material: Material, net_doping, temperature):
    """Equilibrium potential of a neutral region vs. intrinsic reference [V]."""
    nd = np.asarray(net_doping, dtype=float)
    ni = intrinsic_density_unchecked(material, temperature)
    vt = K_B_EV * np.asarray(temperature, dtype=float)
    return vt * np.arcsinh(nd / (2.0 * ni))
