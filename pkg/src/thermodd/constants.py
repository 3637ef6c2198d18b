"""Physical constants and internal unit conventions.

Internal unit system follows semiconductor convention: lengths in cm,
concentrations in cm^-3, potentials in V, temperatures in K, currents per
unit depth in A/cm.  Public interfaces that take lengths use micrometers
and are converted at the boundary.
"""

Q = 1.602176634e-19        # elementary charge [C]
K_B = 1.380649e-23         # Boltzmann constant [J/K]
K_B_EV = 8.617333262e-5    # Boltzmann constant [eV/K] (= K_B / Q)
EPS0 = 8.8541878128e-14    # vacuum permittivity [F/cm]

T_REF = 300.0              # reference temperature [K]
UM_TO_CM = 1.0e-4
CM_TO_UM = 1.0e4

# Lorenz number for the optional Wiedemann-Franz carrier heat conduction
LORENZ = 2.44e-8           # [W*Ohm/K^2]


def thermal_voltage(temperature):
    """kT/q in volts; accepts scalars or arrays."""
    return K_B_EV * temperature
