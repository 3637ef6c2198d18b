"""Deterministic file writers for fields, I-V tables and reports.

Every float is serialized with 17 significant digits so a rerun of the same
plan produces byte-identical data files and every value re-parses exactly.
"""

from __future__ import annotations

import os

import numpy as np

from .discretization import DeviceState, heat_generation
from .studio import SweepResult

FIELD_HEADER = "x_um,y_um,psi_V,n_cm3,p_cm3,T_K,H_Wcm3"
IV_HEADER = "Vg_V,Vd_V,Id_A_per_um,Tpeak_K,converged"


class OutputError(OSError):
    """Unwritable output location."""


def fmt(value) -> str:
    """17-significant-digit decimal form (exact float round trip)."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _open_for_write(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise OutputError(f"output directory does not exist: {parent}")
    try:
        return open(path, "w", encoding="utf-8", newline="\n")
    except OSError as err:
        raise OutputError(f"cannot write {path}: {err}") from err


def ensure_directory(path) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as err:
        raise OutputError(f"cannot create output directory {path}: {err}") from err
    if not os.path.isdir(path):
        raise OutputError(f"output path is not a directory: {path}")


def write_field_dump(path, state: DeviceState, heat_model: str = "joule") -> None:
    """One row per node, x-major then y; insulator carriers dumped as zero."""
    mesh = state.mesh
    x, y = mesh.node_coordinates_um()
    h = heat_generation(state, model=heat_model)
    semi = mesh.is_semiconductor
    n = np.where(semi, state.n, 0.0)
    p = np.where(semi, state.p, 0.0)
    with _open_for_write(path) as out:
        out.write(FIELD_HEADER + "\n")
        for node in range(mesh.n_nodes):
            out.write(",".join((fmt(x[node]), fmt(y[node]), fmt(state.psi[node]),
                                fmt(n[node]), fmt(p[node]), fmt(state.T[node]),
                                fmt(h[node]))) + "\n")


def write_iv_table(path, sweeps: list[SweepResult]) -> None:
    with _open_for_write(path) as out:
        out.write(IV_HEADER + "\n")
        for sweep in sweeps:
            for pt in sweep.points:
                out.write(",".join((fmt(pt.gate_v), fmt(pt.drain_v),
                                    fmt(pt.drain_current_a_per_um),
                                    fmt(pt.peak_temperature_k),
                                    fmt(pt.converged))) + "\n")


def write_report(path, entries: dict) -> None:
    """Flat key-value text report, one `key = value` line per entry."""
    with _open_for_write(path) as out:
        for key, value in entries.items():
            if isinstance(value, str):
                out.write(f"{key} = {value}\n")
            else:
                out.write(f"{key} = {fmt(value)}\n")


def write_xy_table(path, header: str, columns) -> None:
    """Generic numeric CSV: header string plus aligned column arrays."""
    columns = [np.asarray(col) for col in columns]
    with _open_for_write(path) as out:
        out.write(header + "\n")
        for row in zip(*columns):
            out.write(",".join(fmt(v) for v in row) + "\n")


def read_report(path) -> dict:
    entries = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries
