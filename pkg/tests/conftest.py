"""Shared device fixtures for the test suite."""

import numpy as np
import pytest

from thermodd import geometry as geo
from thermodd import materials as mat
from thermodd.solver import SolverConfig
from thermodd.studio import Device, LdmosParams


def step_diode_spec(n_doping=1e16, length=4.0, height=0.2, min_spacing=0.01):
    """Symmetric 1D step junction: acceptors left, donors right."""
    half = length / 2.0
    return geo.DeviceSpec(
        regions=(geo.Region("si", geo.Rect(0.0, 0.0, length, height)),),
        doping_profiles=(
            geo.DopingProfile("acceptor", "uniform", n_doping,
                              rect=geo.Rect(0.0, 0.0, half, height)),
            geo.DopingProfile("donor", "uniform", n_doping,
                              rect=geo.Rect(half, 0.0, length, height)),
        ),
        contacts=(
            geo.Contact("anode", geo.Segment(0.0, 0.0, 0.0, height),
                        "thermal+ohmic"),
            geo.Contact("cathode", geo.Segment(length, 0.0, length, height),
                        "thermal+ohmic"),
        ),
        mesh_hints=geo.MeshHints(x_lines=(half,), min_spacing=min_spacing,
                                 max_spacing=0.25),
    )


def resistor_spec(doping=1e16, length=4.0, height=0.5):
    """Uniform n-type bar with ohmic+thermal ends."""
    return geo.DeviceSpec(
        regions=(geo.Region("si", geo.Rect(0.0, 0.0, length, height)),),
        doping_profiles=(
            geo.DopingProfile("donor", "uniform", doping,
                              rect=geo.Rect(0.0, 0.0, length, height)),
        ),
        contacts=(
            geo.Contact("left", geo.Segment(0.0, 0.0, 0.0, height),
                        "thermal+ohmic"),
            geo.Contact("right", geo.Segment(length, 0.0, length, height),
                        "thermal+ohmic"),
        ),
        mesh_hints=geo.MeshHints(min_spacing=0.1, max_spacing=0.25),
    )


def coupled_test_spec():
    """Small mixed device: silicon slab + oxide cap with all contact kinds."""
    return geo.DeviceSpec(
        regions=(geo.Region("si", geo.Rect(0.0, 0.0, 1.0, 0.75)),
                 geo.Region("sio2", geo.Rect(0.0, 0.75, 1.0, 1.0))),
        doping_profiles=(
            geo.DopingProfile("donor", "uniform", 2e16,
                              rect=geo.Rect(0.0, 0.0, 1.0, 0.75)),
            geo.DopingProfile("acceptor", "gaussian", 1e17,
                              center=(0.0, 0.75), sigma_x=0.3, sigma_y=0.2),
        ),
        contacts=(
            geo.Contact("left", geo.Segment(0.0, 0.0, 0.0, 0.75), "ohmic"),
            geo.Contact("right", geo.Segment(1.0, 0.0, 1.0, 0.75), "ohmic"),
            geo.Contact("gate", geo.Segment(0.25, 1.0, 0.75, 1.0), "gate",
                        gate_offset_v=0.59),
            geo.Contact("bottom", geo.Segment(0.0, 0.0, 1.0, 0.0), "thermal"),
        ),
        mesh_hints=geo.MeshHints(min_spacing=0.2, max_spacing=0.3),
    )


def heat_slab_spec(thickness=10.0, width=1.0, max_spacing=2.0):
    """Pure silicon slab with both faces held at ambient temperature."""
    return geo.DeviceSpec(
        regions=(geo.Region("si", geo.Rect(0.0, 0.0, width, thickness)),),
        doping_profiles=(
            geo.DopingProfile("donor", "uniform", 1e15,
                              rect=geo.Rect(0.0, 0.0, width, thickness)),
        ),
        contacts=(
            geo.Contact("bottom", geo.Segment(0.0, 0.0, width, 0.0), "thermal"),
            geo.Contact("top", geo.Segment(0.0, thickness, width, thickness),
                        "thermal"),
        ),
        mesh_hints=geo.MeshHints(y_lines=(thickness / 2.0,),
                                 min_spacing=min(0.2, max_spacing),
                                 max_spacing=max_spacing),
    )


@pytest.fixture(scope="session")
def si():
    return mat.silicon()


@pytest.fixture(scope="session")
def table():
    return mat.default_table()


@pytest.fixture(scope="session")
def diode_device():
    return Device.from_spec(step_diode_spec())


@pytest.fixture(scope="session")
def resistor_device():
    return Device.from_spec(resistor_spec())


@pytest.fixture(scope="session")
def coupled_device():
    return Device.from_spec(coupled_test_spec())


@pytest.fixture(scope="session")
def ldmos_device():
    return Device.from_ldmos(LdmosParams())


@pytest.fixture(scope="session")
def solver_config():
    return SolverConfig()
