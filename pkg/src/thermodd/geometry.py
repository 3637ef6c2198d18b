"""Device geometry and rectilinear finite-volume mesh construction.

A device is a set of axis-aligned material rectangles that tile a bounding
rectangle, plus doping profiles and contact segments.  The mesh is a tensor
product of x and y lines; every region boundary, contact endpoint and
refinement hint appears verbatim in the line sets, and the spacing between
anchor lines is graded geometrically (ratio <= 1.5) from the minimum
spacing at hinted lines up to the maximum spacing.

Coordinates in ``DeviceSpec`` are micrometers; the mesh stores both the
exact micrometer lines and the centimeter quantities used by the
discretization (control-volume areas, edge lengths, dual faces).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import UM_TO_CM
from .materials import MaterialTable, default_table

_TOL = 1e-9  # coordinate comparison tolerance [um]

DONOR = "donor"
ACCEPTOR = "acceptor"

OHMIC = "ohmic"
GATE = "gate"
THERMAL = "thermal"
THERMAL_OHMIC = "thermal+ohmic"
CONTACT_KINDS = (OHMIC, GATE, THERMAL, THERMAL_OHMIC)


class GeometryError(ValueError):
    """Invalid device geometry (overlap, gap, misplaced contact or hint)."""


class DopingPlacementError(GeometryError):
    """Doping profile does not touch any semiconductor region."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in um."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return (self.x0 - _TOL <= x <= self.x1 + _TOL
                and self.y0 - _TOL <= y <= self.y1 + _TOL)

    def overlaps(self, other: "Rect") -> bool:
        return (min(self.x1, other.x1) - max(self.x0, other.x0) > _TOL
                and min(self.y1, other.y1) - max(self.y0, other.y0) > _TOL)


@dataclass(frozen=True)
class Region:
    material: str
    rect: Rect


@dataclass(frozen=True)
class Segment:
    """Axis-aligned line segment in um (contact footprint)."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        dx = abs(self.x1 - self.x0)
        dy = abs(self.y1 - self.y0)
        if dx > _TOL and dy > _TOL:
            raise GeometryError(f"contact segment must be axis aligned: {self}")
        if dx <= _TOL and dy <= _TOL:
            raise GeometryError(f"degenerate contact segment: {self}")

    @property
    def horizontal(self) -> bool:
        return abs(self.y1 - self.y0) <= _TOL


@dataclass(frozen=True)
class Contact:
    name: str
    segment: Segment
    kind: str
    gate_offset_v: float = 0.0  # work-function offset applied to gate bias

    def __post_init__(self):
        if self.kind not in CONTACT_KINDS:
            raise GeometryError(f"unknown contact kind {self.kind!r}")

    @property
    def is_ohmic(self) -> bool:
        return self.kind in (OHMIC, THERMAL_OHMIC)

    @property
    def is_thermal(self) -> bool:
        return self.kind in (THERMAL, THERMAL_OHMIC)


@dataclass(frozen=True)
class DopingProfile:
    """Analytic doping profile: uniform box or 2D gaussian.

    Uniform profiles require ``rect``; gaussian profiles require ``center``
    and per-axis sigmas.  ``peak`` is the species concentration in cm^-3 and
    must be positive; the species sign is applied when accumulating net
    doping.  Profile boxes are inclusive of their boundary lines.
    """

    species: str
    shape: str
    peak: float
    rect: Rect | None = None
    center: tuple[float, float] | None = None
    sigma_x: float = 0.0
    sigma_y: float = 0.0

    def __post_init__(self):
        if self.species not in (DONOR, ACCEPTOR):
            raise GeometryError(f"unknown species {self.species!r}")
        if self.peak <= 0.0:
            raise GeometryError("peak concentration must be positive")
        if self.shape == "uniform":
            if self.rect is None:
                raise GeometryError("uniform profile requires a rect")
        elif self.shape == "gaussian":
            if self.center is None:
                raise GeometryError("gaussian profile requires a center")
            if self.sigma_x <= 0.0 or self.sigma_y <= 0.0:
                raise GeometryError("gaussian sigmas must be positive")
        else:
            raise GeometryError(f"unknown profile shape {self.shape!r}")

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Signed contribution at (x, y) um arrays."""
        sign = 1.0 if self.species == DONOR else -1.0
        if self.shape == "uniform":
            r = self.rect
            inside = ((x >= r.x0 - _TOL) & (x <= r.x1 + _TOL)
                      & (y >= r.y0 - _TOL) & (y <= r.y1 + _TOL))
            return sign * self.peak * inside
        cx, cy = self.center
        arg = ((x - cx) / self.sigma_x) ** 2 + ((y - cy) / self.sigma_y) ** 2
        return sign * self.peak * np.exp(-0.5 * arg)


@dataclass(frozen=True)
class MeshHints:
    """Per-axis refinement lines plus global spacing bounds (um)."""

    x_lines: tuple[float, ...] = ()
    y_lines: tuple[float, ...] = ()
    min_spacing: float = 0.05
    max_spacing: float = 0.5

    def __post_init__(self):
        if self.min_spacing <= 0.0 or self.max_spacing <= 0.0:
            raise GeometryError("mesh spacings must be positive")
        if self.min_spacing > self.max_spacing:
            raise GeometryError("min_spacing must not exceed max_spacing")


@dataclass(frozen=True)
class DeviceSpec:
    """Declarative device description (geometry + doping + contacts)."""

    regions: tuple[Region, ...]
    doping_profiles: tuple[DopingProfile, ...]
    contacts: tuple[Contact, ...]
    ambient_temperature: float = 300.0
    mesh_hints: MeshHints = field(default_factory=MeshHints)

    def __post_init__(self):
        if not self.regions:
            raise GeometryError("device needs at least one region")
        if self.ambient_temperature <= 0.0:
            raise GeometryError("ambient temperature must be positive")
        names = [c.name for c in self.contacts]
        if len(set(names)) != len(names):
            raise GeometryError("contact names must be unique")
        if not any(c.is_thermal for c in self.contacts):
            raise GeometryError("at least one thermal contact is required "
                                "(heat problem is singular otherwise)")

    @property
    def bounds(self) -> Rect:
        return Rect(
            min(r.rect.x0 for r in self.regions),
            min(r.rect.y0 for r in self.regions),
            max(r.rect.x1 for r in self.regions),
            max(r.rect.y1 for r in self.regions),
        )

    def contact(self, name: str) -> Contact:
        for c in self.contacts:
            if c.name == name:
                return c
        raise GeometryError(f"unknown contact {name!r}")


@dataclass
class MeshContact:
    name: str
    kind: str
    gate_offset_v: float
    nodes: np.ndarray  # node indices

    @property
    def is_ohmic(self) -> bool:
        return self.kind in (OHMIC, THERMAL_OHMIC)

    @property
    def is_thermal(self) -> bool:
        return self.kind in (THERMAL, THERMAL_OHMIC)


@dataclass
class Mesh:
    """Tensor-product finite-volume mesh.

    Node index convention is x-major: ``node = ix * ny + iy``, matching the
    field-dump ordering.  All derived geometric quantities are in cm.
    """

    spec: DeviceSpec
    x_lines_um: np.ndarray
    y_lines_um: np.ndarray
    cell_region: np.ndarray        # (nx-1, ny-1) region index, -1 invalid
    region_materials: tuple[str, ...]
    node_region: np.ndarray        # (n_nodes,) region index
    is_semiconductor: np.ndarray   # (n_nodes,) bool
    area_total: np.ndarray         # control-volume area [cm^2]
    area_semi: np.ndarray          # semiconductor part of the CV [cm^2]
    net_doping: np.ndarray         # N_D+ - N_A- [cm^-3]
    trap_charge: np.ndarray        # static rho_trap [C/cm^3]
    contacts: list[MeshContact]
    # edge arrays (x-directed then y-directed, concatenated)
    edge_i: np.ndarray = field(default=None)
    edge_j: np.ndarray = field(default=None)
    edge_length: np.ndarray = field(default=None)     # [cm]
    edge_d_lo: np.ndarray = field(default=None)       # dual-face halves [cm]
    edge_d_hi: np.ndarray = field(default=None)
    edge_mat_lo: np.ndarray = field(default=None)     # region index per half, -1 none
    edge_mat_hi: np.ndarray = field(default=None)
    edge_coef: np.ndarray = field(default=None)       # dual face / length
    edge_is_x: np.ndarray = field(default=None)

    @property
    def nx(self) -> int:
        return len(self.x_lines_um)

    @property
    def ny(self) -> int:
        return len(self.y_lines_um)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def node_coordinates_um(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.repeat(self.x_lines_um, self.ny)
        y = np.tile(self.y_lines_um, self.nx)
        return x, y

    def node_coordinates_cm(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.node_coordinates_um()
        return x * UM_TO_CM, y * UM_TO_CM

    def contact_by_name(self, name: str) -> MeshContact:
        for c in self.contacts:
            if c.name == name:
                return c
        raise GeometryError(f"unknown contact {name!r}")


# ---------------------------------------------------------------------------
# line generation
# ---------------------------------------------------------------------------

def _grade_segment(a: float, b: float, refine_a: bool, refine_b: bool,
                   hints: MeshHints) -> list[float]:
    """Interior line coordinates for one anchor-to-anchor span.

    Spacing grows geometrically (ratio <= 1.5) away from hinted endpoints,
    capped at ``max_spacing``; the sequence is then scaled down uniformly so
    the lines land exactly on the anchors (scaling preserves ratios).
    """
    length = b - a
    hmin, hmax, ratio = hints.min_spacing, hints.max_spacing, 1.5
    if length <= hmin * (1.0 + _TOL):
        return []
    if not refine_a and not refine_b:
        n = max(1, int(np.ceil(length / hmax - _TOL)))
        return [a + length * k / n for k in range(1, n)]

    def grow(h):
        return min(h * ratio, hmax)

    if refine_a and refine_b:
        left, right = [hmin], [hmin]
        while sum(left) + sum(right) < length:
            if sum(left) <= sum(right):
                left.append(grow(left[-1]))
            else:
                right.append(grow(right[-1]))
        spacings = left + right[::-1]
    else:
        spacings = [hmin]
        while sum(spacings) < length:
            spacings.append(grow(spacings[-1]))
        if not refine_a:
            spacings = spacings[::-1]
    scale = length / sum(spacings)
    pts = []
    acc = a
    for h in spacings[:-1]:
        acc += h * scale
        pts.append(acc)
    return pts


def _smooth_ratio(lines: list[float], anchors: set[float],
                  ratio: float = 1.5) -> list[float]:
    """Subdivide spacings until adjacent spacings differ by <= ratio.

    Grading inside a span respects the ratio by construction, but jumps can
    appear where unhinted anchor spans meet refined ones; splitting the
    longer spacing (never moving existing lines) restores the bound.
    """
    lines = list(lines)
    guard = 0
    while guard < 100000:
        guard += 1
        d = np.diff(lines)
        bad = None
        for i in range(len(d) - 1):
            if d[i + 1] > ratio * d[i] * (1.0 + 1e-9):
                bad = (i + 1, lines[i + 1], +1, d[i])
                break
            if d[i] > ratio * d[i + 1] * (1.0 + 1e-9):
                bad = (i, lines[i + 1], -1, d[i + 1])
                break
        if bad is None:
            break
        idx, shared, direction, d_short = bad
        d_long = d[idx]
        if d_long <= 3.0 * d_short:
            cut = lines[idx] + 0.5 * d_long
        else:
            cut = shared + direction * ratio * d_short
        lines.insert(idx + 1, cut)
    return lines


def _build_lines(anchors: set[float], hint_lines: set[float],
                 hints: MeshHints) -> np.ndarray:
    anchor_list = sorted(anchors)
    lines = [anchor_list[0]]
    for a, b in zip(anchor_list[:-1], anchor_list[1:]):
        if b - a <= _TOL:
            continue
        refine_a = any(abs(a - h) <= _TOL for h in hint_lines)
        refine_b = any(abs(b - h) <= _TOL for h in hint_lines)
        lines.extend(_grade_segment(a, b, refine_a, refine_b, hints))
        lines.append(b)
    lines = _smooth_ratio(lines, anchors)
    return np.asarray(lines, dtype=float)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _validate_tiling(spec: DeviceSpec) -> None:
    bounds = spec.bounds
    total = 0.0
    rects = [r.rect for r in spec.regions]
    for i, ri in enumerate(rects):
        total += ri.area
        for rj in rects[i + 1:]:
            if ri.overlaps(rj):
                raise GeometryError(f"regions overlap: {ri} and {rj}")
    if abs(total - bounds.area) > 1e-9 * bounds.area:
        raise GeometryError(
            f"regions do not tile the bounding rectangle: area {total} "
            f"vs {bounds.area}")


def _validate_hints(spec: DeviceSpec) -> None:
    bounds = spec.bounds
    for line in spec.mesh_hints.x_lines:
        if not (bounds.x0 - _TOL <= line <= bounds.x1 + _TOL):
            raise GeometryError(f"x refinement hint {line} outside the domain")
    for line in spec.mesh_hints.y_lines:
        if not (bounds.y0 - _TOL <= line <= bounds.y1 + _TOL):
            raise GeometryError(f"y refinement hint {line} outside the domain")


def _validate_contact_placement(spec: DeviceSpec) -> None:
    bounds = spec.bounds
    for contact in spec.contacts:
        seg = contact.segment
        if seg.horizontal:
            level, lo, hi = seg.y0, min(seg.x0, seg.x1), max(seg.x0, seg.x1)
            on_boundary = (abs(level - bounds.y0) <= _TOL
                           or abs(level - bounds.y1) <= _TOL)
            inside = bounds.y0 - _TOL <= level <= bounds.y1 + _TOL
            span_ok = bounds.x0 - _TOL <= lo and hi <= bounds.x1 + _TOL
        else:
            level, lo, hi = seg.x0, min(seg.y0, seg.y1), max(seg.y0, seg.y1)
            on_boundary = (abs(level - bounds.x0) <= _TOL
                           or abs(level - bounds.x1) <= _TOL)
            inside = bounds.x0 - _TOL <= level <= bounds.x1 + _TOL
            span_ok = bounds.y0 - _TOL <= lo and hi <= bounds.y1 + _TOL
        if not span_ok or not inside:
            raise GeometryError(f"contact {contact.name!r} outside the domain")
        if not on_boundary and contact.kind != GATE:
            raise GeometryError(
                f"contact {contact.name!r} must lie on the domain boundary "
                f"(only gate contacts may sit on an internal interface)")


# ---------------------------------------------------------------------------
# mesh ops
# ---------------------------------------------------------------------------

def build_mesh(spec: DeviceSpec, materials: MaterialTable | None = None) -> Mesh:
    """Build the tensor-product mesh with regions, contacts and node classes.

    Doping and box coefficients are filled by ``assign_doping`` and
    ``control_volume_coefficients``; ``make_device_mesh`` chains all three.
    """
    materials = materials or default_table()
    _validate_tiling(spec)
    _validate_hints(spec)
    _validate_contact_placement(spec)
    for region in spec.regions:
        materials[region.material]  # raises for unknown ids

    x_anchors = {spec.bounds.x0, spec.bounds.x1}
    y_anchors = {spec.bounds.y0, spec.bounds.y1}
    for region in spec.regions:
        x_anchors.update((region.rect.x0, region.rect.x1))
        y_anchors.update((region.rect.y0, region.rect.y1))
    for contact in spec.contacts:
        seg = contact.segment
        x_anchors.update((seg.x0, seg.x1))
        y_anchors.update((seg.y0, seg.y1))
    x_anchors.update(spec.mesh_hints.x_lines)
    y_anchors.update(spec.mesh_hints.y_lines)

    x_lines = _build_lines(x_anchors, set(spec.mesh_hints.x_lines), spec.mesh_hints)
    y_lines = _build_lines(y_anchors, set(spec.mesh_hints.y_lines), spec.mesh_hints)
    nx, ny = len(x_lines), len(y_lines)

    # cell -> region assignment via cell centers (regions tile the domain)
    xc = 0.5 * (x_lines[:-1] + x_lines[1:])
    yc = 0.5 * (y_lines[:-1] + y_lines[1:])
    cell_region = np.full((nx - 1, ny - 1), -1, dtype=int)
    for idx, region in enumerate(spec.regions):
        r = region.rect
        in_x = (xc > r.x0 - _TOL) & (xc < r.x1 + _TOL)
        in_y = (yc > r.y0 - _TOL) & (yc < r.y1 + _TOL)
        mask = np.outer(in_x, in_y)
        taken = mask & (cell_region >= 0)
        if np.any(taken):
            raise GeometryError(f"region {region.material!r} overlaps a prior region")
        cell_region[mask] = idx
    if np.any(cell_region < 0):
        raise GeometryError("gap in region tiling: some cells belong to no region")

    region_materials = tuple(r.material for r in spec.regions)
    region_is_semi = np.array(
        [materials[m].is_semiconductor for m in region_materials], dtype=bool)

    # node classification from adjacent cells; semiconductors take priority
    node_region = np.full(nx * ny, -1, dtype=int)
    is_semi = np.zeros(nx * ny, dtype=bool)
    cell_semi = region_is_semi[cell_region]
    for ix in range(nx):
        for iy in range(ny):
            node = ix * ny + iy
            cells = []
            for cx in (ix - 1, ix):
                for cy in (iy - 1, iy):
                    if 0 <= cx < nx - 1 and 0 <= cy < ny - 1:
                        cells.append((cx, cy))
            semi_cells = [c for c in cells if cell_semi[c]]
            chosen = semi_cells if semi_cells else cells
            node_region[node] = min(cell_region[c] for c in chosen)
            is_semi[node] = bool(semi_cells)

    mesh = Mesh(
        spec=spec,
        x_lines_um=x_lines,
        y_lines_um=y_lines,
        cell_region=cell_region,
        region_materials=region_materials,
        node_region=node_region,
        is_semiconductor=is_semi,
        area_total=np.zeros(nx * ny),
        area_semi=np.zeros(nx * ny),
        net_doping=np.zeros(nx * ny),
        trap_charge=np.zeros(nx * ny),
        contacts=[],
    )
    _attach_contacts(mesh, materials)
    return mesh


def _attach_contacts(mesh: Mesh, materials: MaterialTable) -> None:
    x, y = mesh.node_coordinates_um()
    ny = mesh.ny
    cell_semi = np.array(
        [materials[m].is_semiconductor for m in mesh.region_materials],
        dtype=bool)[mesh.cell_region]
    for contact in mesh.spec.contacts:
        seg = contact.segment
        if seg.horizontal:
            lo, hi = min(seg.x0, seg.x1), max(seg.x0, seg.x1)
            on = (np.abs(y - seg.y0) <= _TOL) & (x >= lo - _TOL) & (x <= hi + _TOL)
        else:
            lo, hi = min(seg.y0, seg.y1), max(seg.y0, seg.y1)
            on = (np.abs(x - seg.x0) <= _TOL) & (y >= lo - _TOL) & (y <= hi + _TOL)
        nodes = np.flatnonzero(on)
        if nodes.size == 0:
            raise GeometryError(f"contact {contact.name!r} matches no mesh nodes")
        if contact.is_ohmic and not np.all(mesh.is_semiconductor[nodes]):
            raise GeometryError(
                f"ohmic contact {contact.name!r} must touch semiconductor nodes")
        if contact.kind == GATE:
            touches_insulator = False
            for node in nodes:
                ix, iy = divmod(int(node), ny)
                for cx in (ix - 1, ix):
                    for cy in (iy - 1, iy):
                        if 0 <= cx < mesh.nx - 1 and 0 <= cy < mesh.ny - 1:
                            if not cell_semi[cx, cy]:
                                touches_insulator = True
            if not touches_insulator:
                raise GeometryError(
                    f"gate contact {contact.name!r} must touch an insulator region")
        mesh.contacts.append(MeshContact(
            name=contact.name, kind=contact.kind,
            gate_offset_v=contact.gate_offset_v, nodes=nodes))


def assign_doping(mesh: Mesh, profiles) -> Mesh:
    """Accumulate signed profile contributions at semiconductor nodes.

    Pure summation over profiles: idempotent given the same profile list and
    independent of profile order.  Insulator nodes stay at zero.
    """
    profiles = tuple(profiles)
    if not profiles:
        raise GeometryError("assign_doping requires at least one profile")
    semi_region_rects = [mesh.spec.regions[idx].rect
                         for idx in np.unique(mesh.node_region[mesh.is_semiconductor])]
    for profile in profiles:
        if profile.shape == "uniform":
            touches = any(profile.rect.overlaps(r) for r in semi_region_rects)
            if not touches:
                raise DopingPlacementError(
                    "uniform doping profile lies outside all semiconductor regions")
    x, y = mesh.node_coordinates_um()
    net = np.zeros(mesh.n_nodes)
    for profile in profiles:
        net += profile.evaluate(x, y)
    net[~mesh.is_semiconductor] = 0.0
    mesh.net_doping = net
    return mesh


def control_volume_coefficients(mesh: Mesh, materials: MaterialTable | None = None) -> Mesh:
    """Precompute box-method areas and edge coefficients (cm units)."""
    materials = materials or default_table()
    x = mesh.x_lines_um * UM_TO_CM
    y = mesh.y_lines_um * UM_TO_CM
    nx, ny = mesh.nx, mesh.ny
    dx = np.diff(x)
    dy = np.diff(y)

    # per-node half-spans
    half_x = np.zeros(nx)
    half_x[:-1] += dx / 2.0
    half_x[1:] += dx / 2.0
    half_y = np.zeros(ny)
    half_y[:-1] += dy / 2.0
    half_y[1:] += dy / 2.0
    mesh.area_total = np.repeat(half_x, ny) * np.tile(half_y, nx)

    region_is_semi = np.array(
        [materials[m].is_semiconductor for m in mesh.region_materials], dtype=bool)
    cell_semi = region_is_semi[mesh.cell_region]
    area_semi = np.zeros(nx * ny)
    quarter = np.outer(dx, dy) / 4.0
    corner_offsets = ((0, 0), (1, 0), (0, 1), (1, 1))
    for ox, oy in corner_offsets:
        nodes = (np.arange(nx - 1)[:, None] + ox) * ny + (np.arange(ny - 1)[None, :] + oy)
        np.add.at(area_semi, nodes.ravel(), (quarter * cell_semi).ravel())
    mesh.area_semi = area_semi

    # x-directed edges: (ix, iy) -> (ix+1, iy); flanking cells below/above
    ex_i, ex_j, ex_len, ex_dlo, ex_dhi, ex_mlo, ex_mhi = [], [], [], [], [], [], []
    ix_grid, iy_grid = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
    ex_i = (ix_grid * ny + iy_grid).ravel()
    ex_j = ((ix_grid + 1) * ny + iy_grid).ravel()
    ex_len = dx[ix_grid.ravel()]
    iy_flat = iy_grid.ravel()
    ix_flat = ix_grid.ravel()
    has_lo = iy_flat > 0
    has_hi = iy_flat < ny - 1
    ex_dlo = np.where(has_lo, dy[np.clip(iy_flat - 1, 0, ny - 2)] / 2.0, 0.0)
    ex_dhi = np.where(has_hi, dy[np.clip(iy_flat, 0, ny - 2)] / 2.0, 0.0)
    ex_mlo = np.where(has_lo, mesh.cell_region[ix_flat, np.clip(iy_flat - 1, 0, ny - 2)], -1)
    ex_mhi = np.where(has_hi, mesh.cell_region[ix_flat, np.clip(iy_flat, 0, ny - 2)], -1)

    # y-directed edges: (ix, iy) -> (ix, iy+1); flanking cells left/right
    ix_grid, iy_grid = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
    ey_i = (ix_grid * ny + iy_grid).ravel()
    ey_j = (ix_grid * ny + iy_grid + 1).ravel()
    ey_len = dy[iy_grid.ravel()]
    ix_flat = ix_grid.ravel()
    iy_flat = iy_grid.ravel()
    has_lo = ix_flat > 0
    has_hi = ix_flat < nx - 1
    ey_dlo = np.where(has_lo, dx[np.clip(ix_flat - 1, 0, nx - 2)] / 2.0, 0.0)
    ey_dhi = np.where(has_hi, dx[np.clip(ix_flat, 0, nx - 2)] / 2.0, 0.0)
    ey_mlo = np.where(has_lo, mesh.cell_region[np.clip(ix_flat - 1, 0, nx - 2), iy_flat], -1)
    ey_mhi = np.where(has_hi, mesh.cell_region[np.clip(ix_flat, 0, nx - 2), iy_flat], -1)

    mesh.edge_i = np.concatenate([ex_i, ey_i])
    mesh.edge_j = np.concatenate([ex_j, ey_j])
    mesh.edge_length = np.concatenate([ex_len, ey_len])
    mesh.edge_d_lo = np.concatenate([ex_dlo, ey_dlo])
    mesh.edge_d_hi = np.concatenate([ex_dhi, ey_dhi])
    mesh.edge_mat_lo = np.concatenate([ex_mlo, ey_mlo]).astype(int)
    mesh.edge_mat_hi = np.concatenate([ex_mhi, ey_mhi]).astype(int)
    mesh.edge_coef = (mesh.edge_d_lo + mesh.edge_d_hi) / mesh.edge_length
    mesh.edge_is_x = np.concatenate([
        np.ones(ex_i.size, dtype=bool), np.zeros(ey_i.size, dtype=bool)])
    return mesh


def make_device_mesh(spec: DeviceSpec, materials: MaterialTable | None = None) -> Mesh:
    """build_mesh + assign_doping + control_volume_coefficients."""
    materials = materials or default_table()
    mesh = build_mesh(spec, materials)
    mesh = assign_doping(mesh, spec.doping_profiles)
    return control_volume_coefficients(mesh, materials)
