"""Run-plan configuration: strict YAML parsing, validation and printing.

Unknown keys are hard errors (silent typo-defaults are a classic way to
ruin a simulation campaign), every section fills documented defaults, and
``print_config``/``parse_config`` round-trip exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .discretization import AssemblyOptions
from .geometry import (
    Contact,
    DeviceSpec,
    DopingProfile,
    GeometryError,
    MeshHints,
    Rect,
    Region,
    Segment,
)
from .materials import (
    IsotopeVariant,
    MaterialTable,
    NATURAL_SI,
    SI_28,
    oxide,
    silicon,
)
from .solver import SolverConfig
from .studio import LdmosParams, StudioError


class ConfigError(ValueError):
    """Base class for run-plan configuration problems."""


class ConfigSyntaxError(ConfigError):
    """Malformed YAML; carries line/column when available."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnknownKeyError(ConfigError):
    """A key the schema does not define."""


class ConfigValueError(ConfigError):
    """A value violating a documented invariant."""


# ---------------------------------------------------------------------------
# plan dataclasses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaterialOverrides:
    si_k300_natural_w_mk: float = 148.0
    si_k300_si28_w_mk: float = 200.0
    si_k_exponent: float = 1.3
    si_eps_r: float = 11.7
    si_mu_n0: float = 1417.0
    si_mu_p0: float = 470.5
    si_mu_n_exponent: float = 2.2
    si_mu_p_exponent: float = 2.1
    si_vsat_n: float = 1.07e7
    si_vsat_p: float = 8.37e6
    si_tau_n_s: float = 1.0e-6
    si_tau_p_s: float = 1.0e-6
    si_heat_capacity: float = 1.63
    sio2_eps_r: float = 3.9
    sio2_k300_w_mk: float = 1.4
    sio2_heat_capacity: float = 1.67

    def build_table(self, variant: str = NATURAL_SI) -> MaterialTable:
        si = silicon(
            eps_r=self.si_eps_r,
            k_300=self.si_k300_natural_w_mk,
            k_exponent=self.si_k_exponent,
            heat_capacity=self.si_heat_capacity,
            mu_n0=self.si_mu_n0,
            mu_p0=self.si_mu_p0,
            mu_n_exponent=self.si_mu_n_exponent,
            mu_p_exponent=self.si_mu_p_exponent,
            v_sat_n=self.si_vsat_n,
            v_sat_p=self.si_vsat_p,
            tau_n=self.si_tau_n_s,
            tau_p=self.si_tau_p_s,
            isotope_variants=(
                IsotopeVariant(NATURAL_SI, self.si_k300_natural_w_mk),
                IsotopeVariant(SI_28, self.si_k300_si28_w_mk),
            ),
        )
        ox = oxide(eps_r=self.sio2_eps_r, k_300=self.sio2_k300_w_mk,
                   heat_capacity=self.sio2_heat_capacity)
        return MaterialTable(materials={"si": si, "sio2": ox},
                             silicon_variant=variant)


@dataclass(frozen=True)
class SolverSection:
    abs_tol: float = 1.0e-10
    rel_update_tol: float = 1.0e-12
    max_iterations: int = 60
    damping_min: float = 1.0 / 64.0
    max_bias_step_v: float = 1.0
    step_halving_depth: int = 8
    coupling: str = "gummel-then-newton"
    thermal: str = "self-consistent"
    polish_steps: int = 2
    heat_model: str = "joule"
    thermal_drift: bool = False
    wiedemann_franz: bool = False

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            abs_tol=self.abs_tol,
            rel_update_tol=self.rel_update_tol,
            max_iterations=self.max_iterations,
            damping_min=self.damping_min,
            max_bias_step=self.max_bias_step_v,
            step_halving_depth=self.step_halving_depth,
            coupling=self.coupling,
            thermal=self.thermal,
            polish_steps=self.polish_steps,
        )

    def assembly_options(self) -> AssemblyOptions:
        return AssemblyOptions(
            heat_model=self.heat_model,
            thermal_drift=self.thermal_drift,
            wiedemann_franz=self.wiedemann_franz,
        )


@dataclass(frozen=True)
class EquilibriumExperiment:
    name: str
    kind: str = "equilibrium"


@dataclass(frozen=True)
class IvSweepExperiment:
    name: str
    gate_biases_v: tuple[float, ...] = (2.4, 3.4, 4.4)
    drain_start_v: float = 0.0
    drain_stop_v: float = 30.0
    drain_step_v: float = 2.5
    thermal: bool = True
    kind: str = "iv-sweep"


@dataclass(frozen=True)
class IsotopeCompareExperiment:
    name: str
    gate_bias_v: float = 4.4
    drain_bias_v: float = 20.0
    kind: str = "isotope-compare"


@dataclass(frozen=True)
class ProfileFitExperiment:
    name: str
    gate_bias_v: float = 4.4
    drain_bias_v: float = 20.0
    column: float | str = "hotspot"
    kind: str = "profile-fit"


Experiment = (EquilibriumExperiment | IvSweepExperiment
              | IsotopeCompareExperiment | ProfileFitExperiment)


@dataclass(frozen=True)
class RunPlan:
    ldmos: LdmosParams | None
    device_spec: DeviceSpec | None
    materials: MaterialOverrides
    solver: SolverSection
    experiments: tuple[Experiment, ...]
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if (self.ldmos is None) == (self.device_spec is None):
            raise ConfigValueError(
                "device section must define exactly one of 'ldmos' or 'spec'")
        if not self.experiments:
            raise ConfigValueError("at least one experiment is required")
        names = [e.name for e in self.experiments]
        if len(set(names)) != len(names):
            raise ConfigValueError("experiment names must be unique")
        for exp in self.experiments:
            if isinstance(exp, IsotopeCompareExperiment) and self.ldmos is None:
                raise ConfigValueError(
                    "isotope-compare experiments need an 'ldmos' device section")

    def build_materials(self) -> MaterialTable:
        variant = self.ldmos.isotope if self.ldmos is not None else NATURAL_SI
        return self.materials.build_table(variant)


# ---------------------------------------------------------------------------
# strict mapping helpers
# ---------------------------------------------------------------------------

def _require_mapping(obj, path):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigValueError(f"{path}: expected a mapping")
    return obj


def _check_keys(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            raise UnknownKeyError(f"{path}: unknown key {key!r}")


def _coerce_number(value):
    """YAML 1.1 reads '1e16' (no sign) as a string; accept that spelling."""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


def _number(mapping, key, default, path, integer=False):
    if key not in mapping or mapping[key] is None:
        return default
    value = _coerce_number(mapping[key])
    if value is None:
        raise ConfigValueError(
            f"{path}.{key}: expected a number, got {mapping[key]!r}")
    return int(value) if integer else float(value)


def _boolean(mapping, key, default, path):
    if key not in mapping or mapping[key] is None:
        return default
    value = mapping[key]
    if not isinstance(value, bool):
        raise ConfigValueError(f"{path}.{key}: expected a boolean, got {value!r}")
    return value


def _string(mapping, key, default, path, choices=None):
    value = mapping.get(key, default)
    if not isinstance(value, str):
        raise ConfigValueError(f"{path}.{key}: expected a string, got {value!r}")
    if choices and value not in choices:
        raise ConfigValueError(
            f"{path}.{key}: {value!r} not in {sorted(choices)}")
    return value


def _number_list(values, path, length=None):
    if not isinstance(values, (list, tuple)):
        raise ConfigValueError(f"{path}: expected a list of numbers")
    coerced = [_coerce_number(v) for v in values]
    if any(v is None for v in coerced) or (length is not None
                                           and len(coerced) != length):
        raise ConfigValueError(f"{path}: expected a list of "
                               f"{length or 'several'} numbers")
    return [float(v) for v in coerced]


def _rect(values, path):
    try:
        return Rect(*_number_list(values, path, length=4))
    except GeometryError as err:
        raise ConfigValueError(f"{path}: {err}") from err


# ---------------------------------------------------------------------------
# section parsers
# ---------------------------------------------------------------------------

_LDMOS_KEYS = {
    "gate_length_um", "locos_length_um", "gate_oxide_nm", "field_oxide_um",
    "substrate_depth_um", "body_peak_cm3", "drift_doping_cm3",
    "contact_doping_cm3", "substrate_doping_cm3", "isotope", "ambient_K",
}


def _parse_ldmos(section, path) -> LdmosParams:
    section = _require_mapping(section, path)
    _check_keys(section, _LDMOS_KEYS, path)
    defaults = LdmosParams()
    try:
        return LdmosParams(
            gate_length=_number(section, "gate_length_um", defaults.gate_length, path),
            locos_length=_number(section, "locos_length_um", defaults.locos_length, path),
            gate_oxide_nm=_number(section, "gate_oxide_nm", defaults.gate_oxide_nm, path),
            field_oxide=_number(section, "field_oxide_um", defaults.field_oxide, path),
            substrate_depth=_number(section, "substrate_depth_um",
                                    defaults.substrate_depth, path),
            body_peak=_number(section, "body_peak_cm3", defaults.body_peak, path),
            drift_doping=_number(section, "drift_doping_cm3",
                                 defaults.drift_doping, path),
            contact_doping=_number(section, "contact_doping_cm3",
                                   defaults.contact_doping, path),
            substrate_doping=_number(section, "substrate_doping_cm3",
                                     defaults.substrate_doping, path),
            isotope=_string(section, "isotope", defaults.isotope, path,
                            choices={NATURAL_SI, SI_28}),
            ambient=_number(section, "ambient_K", defaults.ambient, path),
        )
    except StudioError as err:
        raise ConfigValueError(f"{path}: {err}") from err


_REGION_KEYS = {"material", "rect_um"}
_CONTACT_KEYS = {"name", "kind", "segment_um", "gate_offset_V"}
_DOPING_KEYS = {"species", "shape", "peak_cm3", "rect_um", "center_um",
                "sigma_x_um", "sigma_y_um"}
_MESH_KEYS = {"x_hints_um", "y_hints_um", "min_spacing_um", "max_spacing_um"}
_SPEC_KEYS = {"ambient_K", "regions", "contacts", "doping", "mesh"}


def _parse_device_spec(section, path) -> DeviceSpec:
    section = _require_mapping(section, path)
    _check_keys(section, _SPEC_KEYS, path)
    regions = []
    for i, entry in enumerate(section.get("regions") or []):
        epath = f"{path}.regions[{i}]"
        entry = _require_mapping(entry, epath)
        _check_keys(entry, _REGION_KEYS, epath)
        regions.append(Region(material=_string(entry, "material", "si", epath),
                              rect=_rect(entry.get("rect_um"), f"{epath}.rect_um")))
    contacts = []
    for i, entry in enumerate(section.get("contacts") or []):
        epath = f"{path}.contacts[{i}]"
        entry = _require_mapping(entry, epath)
        _check_keys(entry, _CONTACT_KEYS, epath)
        seg = _number_list(entry.get("segment_um"), f"{epath}.segment_um",
                           length=4)
        try:
            contacts.append(Contact(
                name=_string(entry, "name", "", epath),
                segment=Segment(*seg),
                kind=_string(entry, "kind", "ohmic", epath),
                gate_offset_v=_number(entry, "gate_offset_V", 0.0, epath),
            ))
        except GeometryError as err:
            raise ConfigValueError(f"{epath}: {err}") from err
    doping = []
    for i, entry in enumerate(section.get("doping") or []):
        epath = f"{path}.doping[{i}]"
        entry = _require_mapping(entry, epath)
        _check_keys(entry, _DOPING_KEYS, epath)
        shape = _string(entry, "shape", "uniform", epath,
                        choices={"uniform", "gaussian"})
        kwargs = dict(
            species=_string(entry, "species", "donor", epath,
                            choices={"donor", "acceptor"}),
            shape=shape,
            peak=_number(entry, "peak_cm3", 0.0, epath),
        )
        try:
            if shape == "uniform":
                kwargs["rect"] = _rect(entry.get("rect_um"), f"{epath}.rect_um")
            else:
                center = _number_list(entry.get("center_um"),
                                      f"{epath}.center_um", length=2)
                kwargs["center"] = (center[0], center[1])
                kwargs["sigma_x"] = _number(entry, "sigma_x_um", 0.0, epath)
                kwargs["sigma_y"] = _number(entry, "sigma_y_um", 0.0, epath)
            doping.append(DopingProfile(**kwargs))
        except GeometryError as err:
            raise ConfigValueError(f"{epath}: {err}") from err
    mesh = _require_mapping(section.get("mesh"), f"{path}.mesh")
    _check_keys(mesh, _MESH_KEYS, f"{path}.mesh")
    try:
        hints = MeshHints(
            x_lines=tuple(_number_list(mesh.get("x_hints_um") or [],
                                       f"{path}.mesh.x_hints_um")),
            y_lines=tuple(_number_list(mesh.get("y_hints_um") or [],
                                       f"{path}.mesh.y_hints_um")),
            min_spacing=_number(mesh, "min_spacing_um", 0.05, f"{path}.mesh"),
            max_spacing=_number(mesh, "max_spacing_um", 0.5, f"{path}.mesh"),
        )
        return DeviceSpec(
            regions=tuple(regions),
            doping_profiles=tuple(doping),
            contacts=tuple(contacts),
            ambient_temperature=_number(section, "ambient_K", 300.0, path),
            mesh_hints=hints,
        )
    except GeometryError as err:
        raise ConfigValueError(f"{path}: {err}") from err


_MATERIAL_SI_KEYS = {
    "k300_natural_W_mK", "k300_si28_W_mK", "k_exponent", "eps_r",
    "mu_n0_cm2_Vs", "mu_p0_cm2_Vs", "mu_n_exponent", "mu_p_exponent",
    "vsat_n_cm_s", "vsat_p_cm_s", "tau_n_s", "tau_p_s",
    "heat_capacity_J_cm3K",
}
_MATERIAL_SIO2_KEYS = {"eps_r", "k300_W_mK", "heat_capacity_J_cm3K"}


def _parse_materials(section, path) -> MaterialOverrides:
    section = _require_mapping(section, path)
    _check_keys(section, {"si", "sio2"}, path)
    si = _require_mapping(section.get("si"), f"{path}.si")
    _check_keys(si, _MATERIAL_SI_KEYS, f"{path}.si")
    ox = _require_mapping(section.get("sio2"), f"{path}.sio2")
    _check_keys(ox, _MATERIAL_SIO2_KEYS, f"{path}.sio2")
    d = MaterialOverrides()
    return MaterialOverrides(
        si_k300_natural_w_mk=_number(si, "k300_natural_W_mK",
                                     d.si_k300_natural_w_mk, f"{path}.si"),
        si_k300_si28_w_mk=_number(si, "k300_si28_W_mK",
                                  d.si_k300_si28_w_mk, f"{path}.si"),
        si_k_exponent=_number(si, "k_exponent", d.si_k_exponent, f"{path}.si"),
        si_eps_r=_number(si, "eps_r", d.si_eps_r, f"{path}.si"),
        si_mu_n0=_number(si, "mu_n0_cm2_Vs", d.si_mu_n0, f"{path}.si"),
        si_mu_p0=_number(si, "mu_p0_cm2_Vs", d.si_mu_p0, f"{path}.si"),
        si_mu_n_exponent=_number(si, "mu_n_exponent", d.si_mu_n_exponent, f"{path}.si"),
        si_mu_p_exponent=_number(si, "mu_p_exponent", d.si_mu_p_exponent, f"{path}.si"),
        si_vsat_n=_number(si, "vsat_n_cm_s", d.si_vsat_n, f"{path}.si"),
        si_vsat_p=_number(si, "vsat_p_cm_s", d.si_vsat_p, f"{path}.si"),
        si_tau_n_s=_number(si, "tau_n_s", d.si_tau_n_s, f"{path}.si"),
        si_tau_p_s=_number(si, "tau_p_s", d.si_tau_p_s, f"{path}.si"),
        si_heat_capacity=_number(si, "heat_capacity_J_cm3K",
                                 d.si_heat_capacity, f"{path}.si"),
        sio2_eps_r=_number(ox, "eps_r", d.sio2_eps_r, f"{path}.sio2"),
        sio2_k300_w_mk=_number(ox, "k300_W_mK", d.sio2_k300_w_mk, f"{path}.sio2"),
        sio2_heat_capacity=_number(ox, "heat_capacity_J_cm3K",
                                   d.sio2_heat_capacity, f"{path}.sio2"),
    )


_SOLVER_KEYS = {
    "abs_tol", "rel_update_tol", "max_iterations", "damping_min",
    "max_bias_step_V", "step_halving_depth", "coupling", "thermal",
    "polish_steps", "heat_model", "thermal_drift", "wiedemann_franz",
}


def _parse_solver(section, path) -> SolverSection:
    section = _require_mapping(section, path)
    _check_keys(section, _SOLVER_KEYS, path)
    d = SolverSection()
    parsed = SolverSection(
        abs_tol=_number(section, "abs_tol", d.abs_tol, path),
        rel_update_tol=_number(section, "rel_update_tol", d.rel_update_tol, path),
        max_iterations=_number(section, "max_iterations", d.max_iterations,
                               path, integer=True),
        damping_min=_number(section, "damping_min", d.damping_min, path),
        max_bias_step_v=_number(section, "max_bias_step_V", d.max_bias_step_v, path),
        step_halving_depth=_number(section, "step_halving_depth",
                                   d.step_halving_depth, path, integer=True),
        coupling=_string(section, "coupling", d.coupling, path,
                         choices={"full-newton", "gummel-then-newton"}),
        thermal=_string(section, "thermal", d.thermal, path,
                        choices={"isothermal", "self-consistent"}),
        polish_steps=_number(section, "polish_steps", d.polish_steps,
                             path, integer=True),
        heat_model=_string(section, "heat_model", d.heat_model, path,
                           choices={"joule", "thermodynamic"}),
        thermal_drift=_boolean(section, "thermal_drift", d.thermal_drift, path),
        wiedemann_franz=_boolean(section, "wiedemann_franz",
                                 d.wiedemann_franz, path),
    )
    try:
        parsed.solver_config()
    except ValueError as err:
        raise ConfigValueError(f"{path}: {err}") from err
    return parsed


_EXPERIMENT_KEYS = {
    "equilibrium": {"kind", "name"},
    "iv-sweep": {"kind", "name", "gate_biases_V", "drain_start_V",
                 "drain_stop_V", "drain_step_V", "thermal"},
    "isotope-compare": {"kind", "name", "gate_bias_V", "drain_bias_V"},
    "profile-fit": {"kind", "name", "gate_bias_V", "drain_bias_V", "column"},
}


def _parse_experiment(entry, path):
    entry = _require_mapping(entry, path)
    kind = _string(entry, "kind", "", path, choices=set(_EXPERIMENT_KEYS))
    _check_keys(entry, _EXPERIMENT_KEYS[kind], path)
    name = _string(entry, "name", "", path)
    if not name:
        raise ConfigValueError(f"{path}: experiment needs a non-empty name")
    if kind == "equilibrium":
        return EquilibriumExperiment(name=name)
    if kind == "iv-sweep":
        d = IvSweepExperiment(name=name)
        biases = _number_list(entry.get("gate_biases_V", list(d.gate_biases_v)),
                              f"{path}.gate_biases_V")
        if not biases:
            raise ConfigValueError(f"{path}.gate_biases_V: list must be non-empty")
        exp = IvSweepExperiment(
            name=name,
            gate_biases_v=tuple(biases),
            drain_start_v=_number(entry, "drain_start_V", d.drain_start_v, path),
            drain_stop_v=_number(entry, "drain_stop_V", d.drain_stop_v, path),
            drain_step_v=_number(entry, "drain_step_V", d.drain_step_v, path),
            thermal=_boolean(entry, "thermal", d.thermal, path),
        )
        if exp.drain_step_v <= 0.0:
            raise ConfigValueError(f"{path}.drain_step_V: must be positive")
        if exp.drain_stop_v < exp.drain_start_v:
            raise ConfigValueError(f"{path}: drain_stop_V below drain_start_V")
        return exp
    if kind == "isotope-compare":
        d = IsotopeCompareExperiment(name=name)
        return IsotopeCompareExperiment(
            name=name,
            gate_bias_v=_number(entry, "gate_bias_V", d.gate_bias_v, path),
            drain_bias_v=_number(entry, "drain_bias_V", d.drain_bias_v, path),
        )
    d = ProfileFitExperiment(name=name)
    column = entry.get("column", d.column)
    if column != "hotspot":
        column = _coerce_number(column)
        if column is None:
            raise ConfigValueError(f"{path}.column: expected 'hotspot' or a number")
        column = float(column)
    return ProfileFitExperiment(
        name=name,
        gate_bias_v=_number(entry, "gate_bias_V", d.gate_bias_v, path),
        drain_bias_v=_number(entry, "drain_bias_V", d.drain_bias_v, path),
        column=column,
    )


_TOP_KEYS = {"device", "materials", "solver", "experiments", "output_dir", "seed"}


def parse_config(text: str) -> RunPlan:
    """Parse and validate a YAML run plan; all defaults filled in."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        if mark is not None:
            raise ConfigSyntaxError(str(getattr(err, "problem", err)),
                                    line=mark.line + 1, column=mark.column + 1)
        raise ConfigSyntaxError(str(err))
    raw = _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")

    device = _require_mapping(raw.get("device"), "device")
    _check_keys(device, {"ldmos", "spec"}, "device")
    ldmos = None
    device_spec = None
    if "ldmos" in device and "spec" in device:
        raise ConfigValueError("device: define either 'ldmos' or 'spec', not both")
    if "spec" in device:
        device_spec = _parse_device_spec(device["spec"], "device.spec")
    else:
        ldmos = _parse_ldmos(device.get("ldmos"), "device.ldmos")

    experiments_raw = raw.get("experiments")
    if experiments_raw is None:
        raise ConfigValueError("config: 'experiments' section is required")
    if not isinstance(experiments_raw, list):
        raise ConfigValueError("experiments: expected a list")
    experiments = tuple(
        _parse_experiment(entry, f"experiments[{i}]")
        for i, entry in enumerate(experiments_raw))

    output_dir = raw.get("output_dir", "out")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigValueError("output_dir: expected a non-empty string")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigValueError("seed: expected an integer")

    try:
        return RunPlan(
            ldmos=ldmos,
            device_spec=device_spec,
            materials=_parse_materials(raw.get("materials"), "materials"),
            solver=_parse_solver(raw.get("solver"), "solver"),
            experiments=experiments,
            output_dir=output_dir,
            seed=seed,
        )
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigValueError(str(err)) from err


def parse_config_file(path) -> RunPlan:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_config(handle.read())


# ---------------------------------------------------------------------------
# printing (canonical form; parse(print(plan)) == plan)
# ---------------------------------------------------------------------------

def _ldmos_dict(p: LdmosParams) -> dict:
    return {
        "gate_length_um": p.gate_length,
        "locos_length_um": p.locos_length,
        "gate_oxide_nm": p.gate_oxide_nm,
        "field_oxide_um": p.field_oxide,
        "substrate_depth_um": p.substrate_depth,
        "body_peak_cm3": p.body_peak,
        "drift_doping_cm3": p.drift_doping,
        "contact_doping_cm3": p.contact_doping,
        "substrate_doping_cm3": p.substrate_doping,
        "isotope": p.isotope,
        "ambient_K": p.ambient,
    }


def _spec_dict(spec: DeviceSpec) -> dict:
    doping = []
    for prof in spec.doping_profiles:
        entry = {"species": prof.species, "shape": prof.shape,
                 "peak_cm3": prof.peak}
        if prof.shape == "uniform":
            entry["rect_um"] = [prof.rect.x0, prof.rect.y0,
                                prof.rect.x1, prof.rect.y1]
        else:
            entry["center_um"] = [prof.center[0], prof.center[1]]
            entry["sigma_x_um"] = prof.sigma_x
            entry["sigma_y_um"] = prof.sigma_y
        doping.append(entry)
    return {
        "ambient_K": spec.ambient_temperature,
        "regions": [{"material": r.material,
                     "rect_um": [r.rect.x0, r.rect.y0, r.rect.x1, r.rect.y1]}
                    for r in spec.regions],
        "contacts": [{"name": c.name, "kind": c.kind,
                      "segment_um": [c.segment.x0, c.segment.y0,
                                     c.segment.x1, c.segment.y1],
                      "gate_offset_V": c.gate_offset_v}
                     for c in spec.contacts],
        "doping": doping,
        "mesh": {
            "x_hints_um": list(spec.mesh_hints.x_lines),
            "y_hints_um": list(spec.mesh_hints.y_lines),
            "min_spacing_um": spec.mesh_hints.min_spacing,
            "max_spacing_um": spec.mesh_hints.max_spacing,
        },
    }


def _experiment_dict(exp) -> dict:
    if isinstance(exp, EquilibriumExperiment):
        return {"kind": exp.kind, "name": exp.name}
    if isinstance(exp, IvSweepExperiment):
        return {"kind": exp.kind, "name": exp.name,
                "gate_biases_V": list(exp.gate_biases_v),
                "drain_start_V": exp.drain_start_v,
                "drain_stop_V": exp.drain_stop_v,
                "drain_step_V": exp.drain_step_v,
                "thermal": exp.thermal}
    if isinstance(exp, IsotopeCompareExperiment):
        return {"kind": exp.kind, "name": exp.name,
                "gate_bias_V": exp.gate_bias_v,
                "drain_bias_V": exp.drain_bias_v}
    return {"kind": exp.kind, "name": exp.name,
            "gate_bias_V": exp.gate_bias_v,
            "drain_bias_V": exp.drain_bias_v,
            "column": exp.column}


def plan_to_dict(plan: RunPlan) -> dict:
    device = ({"ldmos": _ldmos_dict(plan.ldmos)} if plan.ldmos is not None
              else {"spec": _spec_dict(plan.device_spec)})
    m = plan.materials
    s = plan.solver
    return {
        "device": device,
        "materials": {
            "si": {
                "k300_natural_W_mK": m.si_k300_natural_w_mk,
                "k300_si28_W_mK": m.si_k300_si28_w_mk,
                "k_exponent": m.si_k_exponent,
                "eps_r": m.si_eps_r,
                "mu_n0_cm2_Vs": m.si_mu_n0,
                "mu_p0_cm2_Vs": m.si_mu_p0,
                "mu_n_exponent": m.si_mu_n_exponent,
                "mu_p_exponent": m.si_mu_p_exponent,
                "vsat_n_cm_s": m.si_vsat_n,
                "vsat_p_cm_s": m.si_vsat_p,
                "tau_n_s": m.si_tau_n_s,
                "tau_p_s": m.si_tau_p_s,
                "heat_capacity_J_cm3K": m.si_heat_capacity,
            },
            "sio2": {
                "eps_r": m.sio2_eps_r,
                "k300_W_mK": m.sio2_k300_w_mk,
                "heat_capacity_J_cm3K": m.sio2_heat_capacity,
            },
        },
        "solver": {
            "abs_tol": s.abs_tol,
            "rel_update_tol": s.rel_update_tol,
            "max_iterations": s.max_iterations,
            "damping_min": s.damping_min,
            "max_bias_step_V": s.max_bias_step_v,
            "step_halving_depth": s.step_halving_depth,
            "coupling": s.coupling,
            "thermal": s.thermal,
            "polish_steps": s.polish_steps,
            "heat_model": s.heat_model,
            "thermal_drift": s.thermal_drift,
            "wiedemann_franz": s.wiedemann_franz,
        },
        "experiments": [_experiment_dict(e) for e in plan.experiments],
        "output_dir": plan.output_dir,
        "seed": plan.seed,
    }


def print_config(plan: RunPlan) -> str:
    """Canonical YAML text whose parse equals ``plan`` exactly."""
    return yaml.safe_dump(plan_to_dict(plan), sort_keys=False,
                          default_flow_style=False)
