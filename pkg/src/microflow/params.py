"""Physical description of the rig and the derived lumped coefficients.

``PhysParams`` captures geometry and materials; ``coefficients`` reduces it
to the handful of resistances, inertias and capacitances the simulator and
the control model actually use.  The defaults describe a desk-scale setup:
half-metre supply tubes, a centimetre-scale chip, reservoirs pressurised
through millimetre ducts.  Setpoints of 1e4..1e5 Pa then drive flows of
order 1..10 ul/s.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .physchem import (
    AirPath,
    CircChannel,
    Fluid,
    RectChannel,
    circular_resistance,
    compressibility,
    critical_pressure_ratio,
    line_inertia,
    rectangular_resistance,
)


@dataclass(frozen=True)
class ChipChannel:
    """A chip channel plus the chamber volume it contributes."""

    geometry: RectChannel
    volume: float

    def __post_init__(self):
        if self.volume < 0:
            raise ValueError("volume must be non-negative")


@dataclass(frozen=True)
class SupplyLine:
    """Tube from a reservoir to the chip, with its liquid volume."""

    geometry: CircChannel
    volume: float

    def __post_init__(self):
        if self.volume < 0:
            raise ValueError("volume must be non-negative")


@dataclass(frozen=True)
class FlowMeter:
    """Inline flow meter, lumped into its line.

    resistance / inertia of the meter's internal duct, the liquid volume it
    adds, and the first-order lag of its reading.
    """

    resistance: float
    inertia: float
    volume: float
    lag: float

    def __post_init__(self):
        if self.resistance < 0 or self.inertia < 0 or self.volume < 0:
            raise ValueError("flow meter parameters must be non-negative")
        if self.lag < 0:
            raise ValueError("lag must be non-negative")


@dataclass(frozen=True)
class RegulatorCoeffs:
    """Pressure-regulator dynamics, one polynomial per line.

    Each regulator maps its command u to the delivered pressure P through

        u = P + k1*P' + k2*P'' (+ k3*P''')

    i.e. a unit-DC-gain lag.  Lines 1 and 3 are third order
    (``line1``/``line3`` = (k1, k2, k3)), line 2 second order
    (``line2`` = (k1, k2)).  Coefficients must describe a stable regulator;
    the Routh conditions are checked at construction.
    """

    line1: tuple
    line2: tuple
    line3: tuple

    def __post_init__(self):
        for name, coeffs in (("line1", self.line1), ("line3", self.line3)):
            if len(coeffs) != 3:
                raise ValueError(f"{name} needs three coefficients")
            k1, k2, k3 = coeffs
            if k1 <= 0 or k2 <= 0 or k3 <= 0 or k1 * k2 <= k3:
                raise ValueError(f"{name} coefficients are not stable (Routh)")
        if len(self.line2) != 2:
            raise ValueError("line2 needs two coefficients")
        k1, k2 = self.line2
        if k1 <= 0 or k2 <= 0:
            raise ValueError("line2 coefficients are not stable")


def third_order_coeffs(pole):
    """(k1, k2, k3) of a third-order regulator with a triple pole at -pole."""
    if pole <= 0:
        raise ValueError("pole must be positive")
    return (3.0 / pole, 3.0 / pole**2, 1.0 / pole**3)


def second_order_critical_coeffs(pole):
    """(k1, k2) of a critically damped second-order regulator."""
    if pole <= 0:
        raise ValueError("pole must be positive")
    return (2.0 / pole, 1.0 / pole**2)


def oscillatory_coeffs(omega, zeta, real_pole):
    """Third-order coefficients with a lightly damped complex pair.

    Poles at -zeta*omega +/- j*omega*sqrt(1-zeta^2) and -real_pole; used to
    mimic a regulator that rings at a few hertz.
    """
    if omega <= 0 or not 0 < zeta < 1 or real_pole <= 0:
        raise ValueError("need omega > 0, 0 < zeta < 1, real_pole > 0")
    w2p = omega**2 * real_pole
    return (
        (omega**2 + 2.0 * zeta * omega * real_pole) / w2p,
        (2.0 * zeta * omega + real_pole) / w2p,
        1.0 / w2p,
    )


#: Named regulator parameter sets.  ``nominal`` settles in roughly 0.5 s
#: (lines 1/3) and 0.3 s (line 2); ``oscillatory_line1`` swaps in a line-1
#: regulator with a visible ~4 Hz ring.
REGULATOR_PRESETS = {
    "nominal": RegulatorCoeffs(
        line1=third_order_coeffs(15.0),
        line2=second_order_critical_coeffs(20.0),
        line3=third_order_coeffs(15.0),
    ),
    "oscillatory_line1": RegulatorCoeffs(
        line1=oscillatory_coeffs(25.0, 0.15, 15.0),
        line2=second_order_critical_coeffs(20.0),
        line3=third_order_coeffs(15.0),
    ),
}


@dataclass(frozen=True)
class PhysParams:
    """Full physical description of the three-line rig.

    atmospheric is the gauge reference at the final outlet (0 by
    convention; all liquid-side pressures are relative to it).  ambient is
    the absolute pressure added when talking to the compressible air path.
    """

    fluid: Fluid
    chip_inlets: tuple  # 3x ChipChannel
    chip_outlet: ChipChannel
    lines: tuple  # 3x SupplyLine
    flowmeters: tuple  # 3x FlowMeter
    air: AirPath
    regulators: RegulatorCoeffs
    atmospheric: float = 0.0
    ambient: float = 101325.0

    def __post_init__(self):
        if len(self.chip_inlets) != 3 or len(self.lines) != 3 or len(self.flowmeters) != 3:
            raise ValueError("need exactly three inlet channels, lines and flow meters")
        if self.ambient <= 0:
            raise ValueError("ambient absolute pressure must be positive")


class Coefficients(NamedTuple):
    """Lumped coefficients derived from ``PhysParams`` (plant layout).

    Arrays are per line.  ``r_line``/``i_line``/``c_line`` already include
    the flow meter; ``c_chip`` lumps all chamber volumes inside the chip
    junction.  The trailing scalars parametrise the air nozzle
    (see ``physchem._nozzle_flow``) and the regulator polynomials.
    """

    r_chip: np.ndarray
    i_chip: np.ndarray
    r_line: np.ndarray
    i_line: np.ndarray
    c_line: np.ndarray
    tau: np.ndarray
    r_out: float
    i_out: float
    c_chip: float
    p_atm: float
    ambient: float
    duct_area: float
    rt_vres: float  # R*T / V_res, Pa per (kg of admitted air)
    inv_sqrt_rt: float
    c_flow: float
    exp_a: float
    exp_b: float
    r_crit: float
    a1: float
    a2: float
    a3: float
    b1: float
    b2: float
    c1: float
    c2: float
    c3: float


@lru_cache(maxsize=32)
def coefficients(params, freeze_air=False):
    """Reduce ``params`` to the lumped ``Coefficients`` bundle.

    With ``freeze_air`` the duct area is zeroed, pinning the reservoir
    pressures and leaving a purely linear plant (useful for cross-checks
    against the matrix-exponential solution).
    """
    mu = params.fluid.viscosity
    rho = params.fluid.density
    bulk = params.fluid.bulk_modulus

    r_chip = np.array(
        [rectangular_resistance(mu, c.geometry) for c in params.chip_inlets]
    )
    i_chip = np.array(
        [line_inertia(rho, c.geometry.length, c.geometry.cross_area) for c in params.chip_inlets]
    )
    r_line = np.array(
        [
            circular_resistance(mu, ln.geometry) + fm.resistance
            for ln, fm in zip(params.lines, params.flowmeters)
        ]
    )
    i_line = np.array(
        [
            line_inertia(rho, ln.geometry.length, ln.geometry.cross_area) + fm.inertia
            for ln, fm in zip(params.lines, params.flowmeters)
        ]
    )
    c_line = np.array(
        [
            compressibility(ln.volume + fm.volume, bulk)
            for ln, fm in zip(params.lines, params.flowmeters)
        ]
    )
    tau = np.array([fm.lag for fm in params.flowmeters])

    out = params.chip_outlet
    r_out = rectangular_resistance(mu, out.geometry)
    i_out = line_inertia(rho, out.geometry.length, out.geometry.cross_area)
    chamber = sum(c.volume for c in params.chip_inlets) + out.volume
    c_chip = compressibility(chamber, bulk)

    air = params.air
    g = air.heat_capacity_ratio
    rt = air.gas_constant * air.temperature
    reg = params.regulators
    return Coefficients(
        r_chip=r_chip,
        i_chip=i_chip,
        r_line=r_line,
        i_line=i_line,
        c_line=c_line,
        tau=tau,
        r_out=r_out,
        i_out=i_out,
        c_chip=c_chip,
        p_atm=params.atmospheric,
        ambient=params.ambient,
        duct_area=0.0 if freeze_air else air.duct_area,
        rt_vres=rt / air.gas_volume,
        inv_sqrt_rt=1.0 / math.sqrt(rt),
        c_flow=2.0 * g / (g - 1.0),
        exp_a=2.0 / g,
        exp_b=(g - 1.0) / g,
        r_crit=critical_pressure_ratio(g),
        a1=reg.line1[0],
        a2=reg.line1[1],
        a3=reg.line1[2],
        b1=reg.line2[0],
        b2=reg.line2[1],
        c1=reg.line3[0],
        c2=reg.line3[1],
        c3=reg.line3[2],
    )


#: Multiplier groups understood by :func:`perturbed`.
PERTURBABLE = (
    "r_chip",
    "i_chip",
    "r_line",
    "i_line",
    "c_line",
    "tau",
    "r_out",
    "i_out",
    "c_chip",
)


def perturbed(coeffs, multipliers):
    """Scale coefficient groups by the given multipliers.

    ``multipliers`` maps a name from ``PERTURBABLE`` to a scalar or a
    length-3 sequence (per line, for the array groups).  Used to run the
    plant off the controller's model.
    """
    updates = {}
    for key, value in multipliers.items():
        if key not in PERTURBABLE:
            raise ValueError(f"unknown perturbation {key!r}; allowed: {PERTURBABLE}")
        current = getattr(coeffs, key)
        if isinstance(current, np.ndarray):
            factor = np.asarray(value, dtype=float)
            if factor.shape not in ((), (3,)):
                raise ValueError(f"perturbation {key!r} must be scalar or length 3")
            updates[key] = current * factor
        else:
            if np.ndim(value) != 0:
                raise ValueError(f"perturbation {key!r} must be scalar")
            updates[key] = current * float(value)
    return coeffs._replace(**updates)


def default_fluid():
    """Default working liquid: a water-glycerine mixture."""
    return Fluid(density=1062.0, viscosity=2.1e-3, bulk_modulus=2.6e9)


def default_params(regulator_preset="nominal"):
    """Desk-scale defaults for the three-line rig.

    Chip inlet channels 20 mm x 100 um x 100 um, outlet channel
    30 mm x 200 um x 200 um.  The outlet chamber volume includes the tubing
    dead volume down to the waste reservoir (~100 ul), which also keeps the
    junction node comfortably integrable at a 0.1 ms substep.  Supply lines
    are 0.5 m of 0.25 mm-radius tube; each flow meter behaves like 50 mm of
    0.2 mm-radius tube holding 5 ul, reading with a 50 ms lag.
    """
    if regulator_preset not in REGULATOR_PRESETS:
        raise ValueError(
            f"unknown regulator preset {regulator_preset!r}; "
            f"known: {sorted(REGULATOR_PRESETS)}"
        )
    fluid = default_fluid()
    inlet_geom = RectChannel(length=0.02, height=1e-4, width=1e-4)
    outlet_geom = RectChannel(length=0.03, height=2e-4, width=2e-4)
    line_geom = CircChannel(length=0.5, radius=2.5e-4)
    fm_geom = CircChannel(length=0.05, radius=2e-4)
    fm = FlowMeter(
        resistance=circular_resistance(fluid.viscosity, fm_geom),
        inertia=line_inertia(fluid.density, fm_geom.length, fm_geom.cross_area),
        volume=5e-9,
        lag=0.05,
    )
    return PhysParams(
        fluid=fluid,
        chip_inlets=tuple(ChipChannel(inlet_geom, inlet_geom.volume) for _ in range(3)),
        chip_outlet=ChipChannel(outlet_geom, 1e-7),
        lines=tuple(SupplyLine(line_geom, line_geom.volume) for _ in range(3)),
        flowmeters=(fm, fm, fm),
        air=AirPath(duct_area=1e-6, gas_volume=1e-5),
        regulators=REGULATOR_PRESETS[regulator_preset],
    )
