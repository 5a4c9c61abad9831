"""Hydraulic building blocks via the electrical analogy.

Each liquid path is reduced to lumped elements: pressure drop plays the role
of voltage, volumetric flow the role of current.  A channel then contributes
a resistance (viscous loss), an inertia (fluid mass, the inductance) and,
together with its stored volume, a capacitance through the liquid's bulk
modulus.  The air side of each pressurised reservoir is fed through a small
duct modelled as an isentropic compressible nozzle.

All quantities are SI.  Pressures at the air-path interface are absolute.
"""

import math
from dataclasses import dataclass

from ._jit import njit


@dataclass(frozen=True)
class Fluid:
    """Working liquid.

    density    kg/m^3
    viscosity  Pa*s (dynamic)
    bulk_modulus  Pa
    """

    density: float
    viscosity: float
    bulk_modulus: float

    def __post_init__(self):
        if self.density <= 0 or self.viscosity <= 0 or self.bulk_modulus <= 0:
            raise ValueError("fluid properties must be positive")


@dataclass(frozen=True)
class RectChannel:
    """Rectangular channel of length ``length`` and cross-section h x w.

    The resistance series below assumes h <= w; the constructor swaps the
    two if needed, so callers may pass them in either order.
    """

    length: float
    height: float
    width: float

    def __post_init__(self):
        if self.length <= 0 or self.height <= 0 or self.width <= 0:
            raise ValueError("channel dimensions must be positive")
        if self.height > self.width:
            h, w = self.width, self.height
            object.__setattr__(self, "height", h)
            object.__setattr__(self, "width", w)

    @property
    def cross_area(self):
        return self.height * self.width

    @property
    def volume(self):
        return self.length * self.height * self.width


@dataclass(frozen=True)
class CircChannel:
    """Circular tube of length ``length`` and inner radius ``radius``."""

    length: float
    radius: float

    def __post_init__(self):
        if self.length <= 0 or self.radius <= 0:
            raise ValueError("channel dimensions must be positive")

    @property
    def cross_area(self):
        return math.pi * self.radius**2

    @property
    def volume(self):
        return self.length * self.cross_area


@dataclass(frozen=True)
class AirPath:
    """Compressed-air feed of one reservoir.

    duct_area      m^2, effective area of the duct from the regulator
    gas_volume     m^3, gas pocket above the liquid (taken constant)
    temperature    K
    gas_constant   J/(kg*K), specific gas constant of air
    heat_capacity_ratio  cp/cv of air
    """

    duct_area: float
    gas_volume: float
    temperature: float = 293.0
    gas_constant: float = 287.14
    heat_capacity_ratio: float = 1.4

    def __post_init__(self):
        if self.duct_area <= 0 or self.gas_volume <= 0 or self.temperature <= 0:
            raise ValueError("air path parameters must be positive")
        if self.gas_constant <= 0 or self.heat_capacity_ratio <= 1:
            raise ValueError("gas constant must be positive and cp/cv > 1")


# Truncation of the rectangular-resistance series: stop when a term changes
# the partial sum by less than SERIES_RTOL relative, never beyond SERIES_MAX
# terms.  The tail decays like (2j+1)^-5, so the cap dominates in practice
# and leaves a relative error of order 1e-9 in the correction factor.
SERIES_RTOL = 1e-14
SERIES_MAX = 200


def line_inertia(density, length, cross_area):
    """Fluid inertia rho*l/A of a duct, in Pa/(m^3/s^2)."""
    if cross_area <= 0:
        raise ValueError("cross_area must be positive")
    if density < 0 or length < 0:
        raise ValueError("density and length must be non-negative")
    return density * length / cross_area


def circular_resistance(viscosity, channel):
    """Poiseuille resistance 8*mu*l/(pi*r^4) of a circular tube."""
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    return 8.0 * viscosity * channel.length / (math.pi * channel.radius**4)


def rectangular_resistance(viscosity, channel):
    """Laminar resistance of a rectangular channel.

    Uses the exact-series result for pressure-driven flow between
    rectangular walls (h <= w):

        R = 12*mu*l / (h^3*w) * 1 / (1 - 192*h/(pi^5*w) * S)
        S = sum_{j>=0} tanh((2j+1)*pi*w/(2h)) / (2j+1)^5

    For w >> h the correction factor tends to 1 (parallel plates); for a
    square section the bracket evaluates to ~0.4217, i.e. R ~ 28.45*mu*l/h^4.
    """
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    h, w = channel.height, channel.width
    s = 0.0
    for j in range(SERIES_MAX + 1):
        n = 2 * j + 1
        term = math.tanh(n * math.pi * w / (2.0 * h)) / n**5
        s += term
        if term < SERIES_RTOL * s:
            break
    correction = 1.0 - 192.0 * h / (math.pi**5 * w) * s
    return 12.0 * viscosity * channel.length / (h**3 * w * correction)


def compressibility(total_volume, bulk_modulus):
    """Hydraulic capacitance V/E of a chamber holding ``total_volume``."""
    if total_volume < 0:
        raise ValueError("total_volume must be non-negative")
    if bulk_modulus <= 0:
        raise ValueError("bulk_modulus must be positive")
    return total_volume / bulk_modulus


def critical_pressure_ratio(heat_capacity_ratio=1.4):
    """Downstream/upstream pressure ratio below which a nozzle chokes."""
    g = heat_capacity_ratio
    return (2.0 / (g + 1.0)) ** (g / (g - 1.0))


@njit(cache=True)
def _nozzle_flow(area, p_up, p_down, inv_sqrt_rt, c_flow, exp_a, exp_b, r_crit):
    """Scalar isentropic nozzle mass flow; also called from the plant kernel.

    c_flow = 2g/(g-1), exp_a = 2/g, exp_b = (g-1)/g.  Positive for
    p_up > p_down; extended antisymmetrically; choked below r_crit.
    """
    sign = 1.0
    if p_down > p_up:
        p_up, p_down = p_down, p_up
        sign = -1.0
    r = p_down / p_up
    if r < r_crit:
        r = r_crit
    bracket = c_flow * r**exp_a * (1.0 - r**exp_b)
    if bracket < 0.0:
        bracket = 0.0
    return sign * area * p_up * inv_sqrt_rt * math.sqrt(bracket)


def isentropic_mass_flow(path, p_upstream, p_downstream):
    """Mass flow (kg/s) through the reservoir feed duct.

    Compressible isentropic flow through an orifice of area A between
    absolute pressures p_upstream and p_downstream:

        mdot = A*p_up/sqrt(R*T) * sqrt(2g/(g-1) * r^(2/g) * (1 - r^((g-1)/g)))

    with r = p_down/p_up.  Below the critical ratio the flow is choked and
    held at its maximum; reversed pressure ordering gives the negated flow
    of the swapped arguments.
    """
    if p_upstream <= 0 or p_downstream <= 0:
        raise ValueError("absolute pressures must be positive")
    g = path.heat_capacity_ratio
    inv_sqrt_rt = 1.0 / math.sqrt(path.gas_constant * path.temperature)
    return _nozzle_flow(
        path.duct_area,
        p_upstream,
        p_downstream,
        inv_sqrt_rt,
        2.0 * g / (g - 1.0),
        2.0 / g,
        (g - 1.0) / g,
        critical_pressure_ratio(g),
    )
