"""Semi-empirical electrochemical models for the hydrogen storage path.

Charging chain: electric power -> alkaline electrolyzer -> H2 mass.
Discharging chain: H2 mass -> PEM fuel cell -> electric power.

The electrolyzer polarization follows the temperature/pressure-corrected
Ulleberg form (ohmic overvoltage linear in current density plus a log10
activation term), with a four-coefficient Faraday efficiency.  The fuel
cell uses the Amphlett-style physical model: Nernst potential, activation
loss with an ln(i) term, ohmic loss, and a concentration loss
``-b_con * ln(1 - j/j_max)`` that grows without bound near the limiting
current density.

Sign convention: all loss terms are subtracted from the reversible /
Nernst potential, so every loss is non-negative over the valid operating
range.

Units are annotated inline; power is kW at the stack terminals, hydrogen
mass flow is kg/h, current is A per cell, current density A/m2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Physical constants.
FARADAY = 96485.0           # [C/mol] charge per mole of electrons
M_H2 = 2.016e-3             # [kg/mol] molar mass of H2
ELECTRONS_PER_H2 = 2.0      # [-] electrons transferred per H2 molecule
R_GAS = 8.314               # [J/(mol K)]
THETA_REF_K = 298.15        # [K] reference temperature for the Nernst term

# Heating values of hydrogen.  Charging efficiency is accounted against the
# lower heating value (energy that the electrolyzer stores chemically),
# discharging efficiency against the higher heating value.
LHV_KWH_PER_KG = 33.33      # [kWh/kg]
HHV_KWH_PER_KG = 39.4       # [kWh/kg]


@dataclass(frozen=True)
class ElectrolyzerParams:
    """Alkaline electrolyzer stack parameters.

    The default coefficient set is a published fit for a pressurized
    alkaline stack, rescaled to a 50 kW unit (25 series cells of 0.1 m2).
    """

    n_cells: int = 25           # [-] series cells in the stack
    area_m2: float = 0.1        # [m2] active area per cell
    theta_c: float = 90.0       # [degC] electrolyte temperature
    pressure_bar: float = 10.0  # [bar] operating pressure
    u_rev: float = 1.229        # [V] reversible cell voltage

    # Ohmic overvoltage coefficients: (r1 + d1) + r2*theta + d2*pressure.
    r1: float = 4.45153e-5      # [ohm m2]
    r2: float = 6.88874e-9      # [ohm m2 / degC]
    d1: float = -3.12996e-6     # [ohm m2]
    d2: float = 4.47137e-7      # [ohm m2 / bar]

    # Activation overvoltage: s * log10(t(theta) * j + 1).
    s: float = 0.33824          # [V]
    t1: float = -0.01539        # [m2/A]
    t2: float = 2.00181         # [m2 degC / A]
    t3: float = 15.24178        # [m2 degC^2 / A]

    # Faraday efficiency: j^2 / (f11 + f12*theta + j^2) * (f21 + f22*theta).
    f11: float = 478645.74      # [(A/m2)^2]
    f12: float = -2953.15       # [(A/m2)^2 / degC]
    f21: float = 1.03960        # [-]
    f22: float = -0.00104       # [1/degC]

    p_rated_kw: float = 50.0    # [kW] rated stack power
    p_min_frac: float = 0.10    # [-] minimum loading when on, fraction of rated


@dataclass(frozen=True)
class FuelCellParams:
    """PEM fuel cell stack parameters (Amphlett-style physical model).

    Defaults describe a 50 kW stack: 88 series cells, 0.12 m2 each,
    operated at 70 degC on humidified H2/air at ~3/1.5 atm.  The
    activation and ohmic coefficients are rescaled from small-cell fits
    to this stack size so the voltage stays in the physical band
    (~0.94 V near idle, ~0.68 V at rated power).
    """

    n_cells: int = 88           # [-] series cells in the stack
    area_m2: float = 0.12       # [m2] active area per cell
    theta_k: float = 343.15     # [K] stack temperature
    p_h2_atm: float = 3.0       # [atm] hydrogen partial pressure
    p_o2_atm: float = 1.5       # [atm] oxygen partial pressure

    delta_g: float = 237200.0   # [J/mol] Gibbs free energy of the reaction
    delta_s: float = 164.025    # [J/(mol K)] entropy change (magnitude)

    # Activation loss coefficients: u_act = -(a1 + a2*T + a3*T*ln(c_o2) + a4*T*ln(i)).
    a1: float = -0.9792         # [V]
    a2: float = 0.00312         # [V/K]
    a3: float = 7.6e-5          # [V/K]
    a4: float = -7.25e-5        # [V/K]

    r_internal_ohm: float = 1.02e-4  # [ohm] lumped membrane + contact resistance
    b_con: float = 0.016        # [V] concentration loss coefficient
    j_max: float = 12000.0      # [A/m2] limiting current density
    i_min_a: float = 0.8        # [A] minimum stable current of the model

    p_rated_kw: float = 50.0    # [kW] rated stack power


DEFAULT_ELECTROLYZER = ElectrolyzerParams()
DEFAULT_FUELCELL = FuelCellParams()


def electrolyzer_cell_voltage(i_a, params: ElectrolyzerParams = DEFAULT_ELECTROLYZER):
    """Cell voltage [V] of the alkaline electrolyzer at current ``i_a`` [A].

    u = u_rev + ((r1 + d1) + r2*theta + d2*p) * j
              + s * log10((t1 + t2/theta + t3/theta^2) * j + 1)

    with j = i / area the current density [A/m2].  Accepts scalars or
    arrays; raises ValueError for negative currents or a non-positive
    log argument (which would mean the coefficient set is invalid at the
    requested operating point).
    """
    i_a = np.asarray(i_a, dtype=float)
    if np.any(i_a < 0):
        raise ValueError("electrolyzer current must be non-negative")
    j = i_a / params.area_m2
    r_eff = (params.r1 + params.d1) + params.r2 * params.theta_c + params.d2 * params.pressure_bar
    t_eff = params.t1 + params.t2 / params.theta_c + params.t3 / params.theta_c**2
    log_arg = t_eff * j + 1.0
    if np.any(log_arg <= 0):
        raise ValueError("non-positive argument in activation log term")
    u = params.u_rev + r_eff * j + params.s * np.log10(log_arg)
    return u if u.ndim else float(u)


def electrolyzer_faraday_efficiency(i_a, params: ElectrolyzerParams = DEFAULT_ELECTROLYZER):
    """Faraday (current) efficiency [-] of the electrolyzer at ``i_a`` [A].

    eta_F = j^2 / (f11 + f12*theta + j^2) * (f21 + f22*theta), clamped to
    [0, 1]; a warning is emitted if the raw value exceeds 1, which signals
    an inconsistent coefficient set rather than a numerical issue.
    """
    i_a = np.asarray(i_a, dtype=float)
    if np.any(i_a < 0):
        raise ValueError("electrolyzer current must be non-negative")
    j = i_a / params.area_m2
    denom = params.f11 + params.f12 * params.theta_c + j * j
    if np.any(denom <= 0):
        raise ValueError("non-positive denominator in Faraday efficiency")
    raw = j * j / denom * (params.f21 + params.f22 * params.theta_c)
    if np.any(raw > 1.0 + 1e-12):
        warnings.warn("Faraday efficiency above 1 clamped; check coefficients",
                      RuntimeWarning, stacklevel=2)
    eta = np.clip(raw, 0.0, 1.0)
    return eta if eta.ndim else float(eta)


def fuelcell_cell_voltage(i_a, params: FuelCellParams = DEFAULT_FUELCELL):
    """Cell voltage [V] of the PEM fuel cell at current ``i_a`` [A].

    u = e_nernst - u_act - u_ohmic - u_con, all losses non-negative:

    e_nernst = (dG - dS*(T - T_ref) + R*T*(ln p_H2 + 0.5 ln p_O2)) / (2F)
    u_act    = -(a1 + a2*T + a3*T*ln(c_O2) + a4*T*ln(i)),  c_O2 = p_O2 / (5.08e6 * exp(-498/T))
    u_ohmic  = i * r_internal
    u_con    = -b_con * ln(1 - j/j_max)

    Raises ValueError below the minimum stable current ``i_min_a`` or at/
    above the limiting current density.
    """
    i_a = np.asarray(i_a, dtype=float)
    i_min = params.i_min_a
    if np.any(i_a < i_min):
        raise ValueError(f"fuel cell current below minimum stable current {i_min:g} A")
    j = i_a / params.area_m2
    if np.any(j >= params.j_max):
        raise ValueError("fuel cell current density at or above the limiting value")

    t = params.theta_k
    e_nernst = (params.delta_g - params.delta_s * (t - THETA_REF_K)
                + R_GAS * t * (np.log(params.p_h2_atm) + 0.5 * np.log(params.p_o2_atm))
                ) / (ELECTRONS_PER_H2 * FARADAY)
    c_o2 = params.p_o2_atm / (5.08e6 * np.exp(-498.0 / t))
    u_act = -(params.a1 + params.a2 * t + params.a3 * t * np.log(c_o2)
              + params.a4 * t * np.log(i_a))
    u_ohmic = i_a * params.r_internal_ohm
    u_con = -params.b_con * np.log(1.0 - j / params.j_max)
    u = e_nernst - u_act - u_ohmic - u_con
    return u if u.ndim else float(u)


def hydrogen_rate_kg_per_h(i_a, n_cells: int, faraday_eff=1.0):
    """Hydrogen mass flow [kg/h] for a stack at cell current ``i_a`` [A].

    Faraday's law: n_dot = eta_F * N * i / (2F) [mol/s], scaled to kg/h.
    For the electrolyzer this is production (pass its Faraday efficiency);
    for the fuel cell it is consumption (eta_F = 1: every electron drawn
    consumes hydrogen, and crossover losses are neglected).
    """
    i_a = np.asarray(i_a, dtype=float)
    rate = 3600.0 * np.asarray(faraday_eff, dtype=float) * n_cells * i_a * M_H2 \
        / (ELECTRONS_PER_H2 * FARADAY)
    return rate if rate.ndim else float(rate)


def electrolyzer_stack_power_kw(i_a, params: ElectrolyzerParams = DEFAULT_ELECTROLYZER):
    """Electric power [kW] drawn by the electrolyzer stack at ``i_a`` [A]."""
    u = np.asarray(electrolyzer_cell_voltage(i_a, params))
    p = u * np.asarray(i_a, dtype=float) * params.n_cells / 1000.0
    return p if p.ndim else float(p)


def fuelcell_stack_power_kw(i_a, params: FuelCellParams = DEFAULT_FUELCELL):
    """Electric power [kW] delivered by the fuel cell stack at ``i_a`` [A]."""
    u = np.asarray(fuelcell_cell_voltage(i_a, params))
    p = u * np.asarray(i_a, dtype=float) * params.n_cells / 1000.0
    return p if p.ndim else float(p)


def charging_efficiency(u_cell, faraday_eff):
    """Power-to-hydrogen efficiency [-] from cell voltage and Faraday efficiency.

    Per cell at current i: H2 energy rate = eta_F * i * M_H2/(2F) * 3600 * LHV [kWh/h]
    and electric power = u * i / 1000 [kW]; the current cancels:

    eta_c = 3600 * eta_F * M_H2 * LHV * 1000 / (2F * u_cell)
    """
    u_cell = np.asarray(u_cell, dtype=float)
    eta = (3600.0 * np.asarray(faraday_eff, dtype=float) * M_H2
           * LHV_KWH_PER_KG * 1000.0 / (ELECTRONS_PER_H2 * FARADAY * u_cell))
    return eta if eta.ndim else float(eta)


def discharging_efficiency(u_cell):
    """Hydrogen-to-power efficiency [-] from fuel cell voltage, against HHV.

    The reciprocal chain of ``charging_efficiency`` with HHV in place of
    LHV and unit Faraday efficiency:

    eta_d = 2F * u_cell / (3600 * M_H2 * HHV * 1000)
    """
    u_cell = np.asarray(u_cell, dtype=float)
    eta = ELECTRONS_PER_H2 * FARADAY * u_cell / (3600.0 * M_H2 * HHV_KWH_PER_KG * 1000.0)
    return eta if eta.ndim else float(eta)


def _bisect_current_for_power(power_kw: float, power_fn, i_lo: float, i_hi: float,
                              tol: float = 1e-10, max_iter: int = 200) -> float:
    """Invert a monotone stack power function by bisection on current [A]."""
    p_lo, p_hi = power_fn(i_lo), power_fn(i_hi)
    if not (p_lo <= power_kw <= p_hi):
        raise ValueError(f"power {power_kw:g} kW outside invertible range "
                         f"[{p_lo:g}, {p_hi:g}] kW")
    for _ in range(max_iter):
        i_mid = 0.5 * (i_lo + i_hi)
        if power_fn(i_mid) < power_kw:
            i_lo = i_mid
        else:
            i_hi = i_mid
        if i_hi - i_lo <= tol * max(1.0, i_hi):
            break
    return 0.5 * (i_lo + i_hi)


def electrolyzer_rated_current(params: ElectrolyzerParams = DEFAULT_ELECTROLYZER) -> float:
    """Cell current [A] at which the stack draws its rated power."""
    return _bisect_current_for_power(
        params.p_rated_kw, lambda i: electrolyzer_stack_power_kw(i, params),
        1e-9, 100.0 * params.p_rated_kw * 1000.0 / params.n_cells)


def fuelcell_rated_current(params: FuelCellParams = DEFAULT_FUELCELL) -> float:
    """Cell current [A] at which the stack delivers its rated power.

    Fuel cell power is increasing in current over the usable range but
    saturates near the limiting density; the bracket stops short of j_max.
    """
    i_min = params.i_min_a
    i_hi = 0.995 * params.j_max * params.area_m2
    p_hi = fuelcell_stack_power_kw(i_hi, params)
    if p_hi < params.p_rated_kw:
        raise ValueError(f"stack cannot reach rated power: max {p_hi:g} kW")
    return _bisect_current_for_power(
        params.p_rated_kw, lambda i: fuelcell_stack_power_kw(i, params), i_min, i_hi)


def sample_charge_curve(params: ElectrolyzerParams = DEFAULT_ELECTROLYZER,
                        n_samples: int = 256):
    """Sample the charging curve: power [kW] -> H2 production [kg/h].

    Returns ``(powers, rates)`` over [p_min, p_rated] where
    p_min = p_min_frac * p_rated is the minimum stable loading.  Power is
    sampled on a uniform grid and inverted to current by bisection.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    p_min = params.p_min_frac * params.p_rated_kw
    powers = np.linspace(p_min, params.p_rated_kw, n_samples)
    i_hi = 100.0 * params.p_rated_kw * 1000.0 / params.n_cells
    currents = np.array([
        _bisect_current_for_power(p, lambda i: electrolyzer_stack_power_kw(i, params),
                                  1e-9, i_hi)
        for p in powers])
    eta_f = electrolyzer_faraday_efficiency(currents, params)
    rates = hydrogen_rate_kg_per_h(currents, params.n_cells, eta_f)
    return powers, np.asarray(rates)


def sample_discharge_curve(params: FuelCellParams = DEFAULT_FUELCELL,
                           n_samples: int = 256):
    """Sample the discharging curve: power [kW] -> H2 consumption [kg/h].

    Returns ``(powers, rates)`` over [0, p_rated].  The first sample is the
    exact physical origin (0, 0); the remaining points are computed from
    the cell model between the minimum stable current and rated current.
    """
    if n_samples < 3:
        raise ValueError("need at least 3 samples")
    i_min = params.i_min_a
    i_rated = fuelcell_rated_current(params)
    currents = np.linspace(i_min, i_rated, n_samples - 1)
    powers = np.asarray(fuelcell_stack_power_kw(currents, params))
    rates = np.asarray(hydrogen_rate_kg_per_h(currents, params.n_cells, 1.0))
    # The rated-current bisection stops within ~1e-9 kW of rated power;
    # snap the endpoint so the curve domain is exactly [0, p_rated].
    if abs(powers[-1] - params.p_rated_kw) < 1e-6:
        powers[-1] = params.p_rated_kw
    powers = np.concatenate([[0.0], powers])
    rates = np.concatenate([[0.0], rates])
    return powers, rates


def peak_charging_efficiency(params: ElectrolyzerParams = DEFAULT_ELECTROLYZER,
                             n_grid: int = 512):
    """Locate the maximum of the charging efficiency curve.

    Returns ``(p_at_peak_kw, eta_peak)`` by evaluating
    eta_c(p) = rate(p) * LHV / p on a fine power grid.  The efficiency is
    unimodal for physically sensible coefficient sets: Faraday losses
    dominate at low loading, overpotential losses at high loading.
    """
    powers, rates = sample_charge_curve(params, n_grid)
    eta = rates * LHV_KWH_PER_KG / powers
    k = int(np.argmax(eta))
    return float(powers[k]), float(eta[k])
