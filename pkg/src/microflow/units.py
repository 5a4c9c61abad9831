"""Unit conventions and the one conversion the package needs.

Everything internal is SI: flows in m^3/s, pressures in Pa, volumes in m^3.
Scenario files, reports and trace CSVs talk microlitres per second because
that is the natural scale of the hardware (1 ul/s = 1e-9 m^3/s).  All
conversions go through this module so the factor exists exactly once.
"""

#: m^3/s per ul/s
M3S_PER_ULS = 1e-9


def uls_to_si(value):
    """Convert a flow (scalar or array) from ul/s to m^3/s."""
    return value * M3S_PER_ULS


def si_to_uls(value):
    """Convert a flow (scalar or array) from m^3/s to ul/s."""
    return value / M3S_PER_ULS
