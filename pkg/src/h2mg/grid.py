"""Microgrid data model, horizon optimization builder and validators.

The system is an islanded microgrid: load and renewables (exogenous),
diesel generation with ramp limits, a battery with constant charge and
discharge efficiencies and slow self-discharge, and a hydrogen path whose
conversion rates follow the fitted piecewise-linear curves.  All powers
are kW at the bus, battery state of charge is kWh, hydrogen storage is
kg.  Step length is ``dt_h`` hours; end-of-step states are indexed by the
step they close.

Per-step feasible set (decision variables and the constraints the
builders and validators share):

* bus balance: p_d + p_g + p_r + p_b_d - p_b_c + p_h_d - p_h_c + p_l == load
* battery:     e_b' == retention * e_b + dt * (eta_c p_b_c - p_b_d / eta_d)
* hydrogen:    e_h' == e_h + dt * (h_c - h_d)
* conversion:  h_c == charge_curve(p_h_c), h_d == discharge_curve(p_h_d)
  (piecewise model: one-hot segment selection with an explicit off state
  for the electrolyzer, whose curve domain starts above zero)
* diesel ramp: |p_d' - p_d| <= ramp, bounds on every power, storage
  bounds, optional terminal condition e'_{T-1} >= e_0 per storage.

The stage cost is dt * (c_d p_d + c_l p_l + c_b p_b_d + c_h p_h_d +
c_g p_g); an optional tracking term phi * ((e_h - ref) / e_h_cap)^2 per
step turns the planning LP into a QP.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .electrochem import HHV_KWH_PER_KG, LHV_KWH_PER_KG
from .piecewise import PiecewiseCurve, fit_charge_curve, fit_discharge_curve
from .solver import (ProgramBuilder, SolveOptions, SolveStatus,
                     StandardFormProgram, solve_lp, solve_milp, solve_qp)

HOURS_PER_MONTH = 730.0  # 8760 / 12, used to convert monthly leakage


@dataclass(frozen=True)
class BatteryParams:
    eta_c: float = 0.9          # [-] charge efficiency
    eta_d: float = 0.9          # [-] discharge efficiency
    p_max_kw: float = 50.0      # [kW] charge and discharge power limit
    e_max_kwh: float = 100.0    # [kWh] capacity
    e_min_kwh: float = 0.0      # [kWh] floor
    e0_frac: float = 0.5        # [-] initial state of charge fraction
    leak_per_month: float = 0.01  # [-] self-discharge fraction per month

    @property
    def e0_kwh(self) -> float:
        return self.e0_frac * self.e_max_kwh

    def retention(self, dt_h: float) -> float:
        """Fraction of stored energy kept across one step."""
        return 1.0 - self.leak_per_month / HOURS_PER_MONTH * dt_h


@dataclass(frozen=True)
class HydrogenParams:
    p_max_kw: float = 50.0      # [kW] electrolyzer and fuel cell power limit
    e_max_kg: float = 600.0     # [kg] tank capacity (20 MWh at LHV)
    e_min_kg: float = 0.0       # [kg] floor
    e0_frac: float = 0.5        # [-] initial fill fraction

    @property
    def e0_kg(self) -> float:
        return self.e0_frac * self.e_max_kg


@dataclass(frozen=True)
class DieselParams:
    p_min_kw: float = 0.0       # [kW] minimum stable generation
    p_max_kw: float = 50.0      # [kW] rated power
    ramp_kw_per_h: float = 50.0  # [kW/h] symmetric ramp limit


@dataclass(frozen=True)
class CostParams:
    c_b: float = 0.02           # [$/kWh] battery discharge throughput
    c_h: float = 0.03           # [$/kWh] fuel cell discharge throughput
    c_d: float = 0.30           # [$/kWh] diesel energy
    c_l: float = 5.00           # [$/kWh] loss of load penalty
    c_g: float = 0.00           # [$/kWh] grid import (islanded: no import)


@dataclass
class MicrogridSpec:
    """Full parameterization of the microgrid and its conversion curves."""

    dt_h: float = 1.0
    battery: BatteryParams = field(default_factory=BatteryParams)
    hydrogen: HydrogenParams = field(default_factory=HydrogenParams)
    diesel: DieselParams = field(default_factory=DieselParams)
    costs: CostParams = field(default_factory=CostParams)
    charge_curve: PiecewiseCurve | None = None
    discharge_curve: PiecewiseCurve | None = None
    grid_cap_kw: float = 0.0    # [kW] import limit (0 for islanded)
    load_cap_kw: float = 100.0  # [kW] nameplate load (channel normalization)
    solar_cap_kw: float = 100.0
    wind_cap_kw: float = 100.0

    def with_default_curves(self, n_segments: int = 4) -> "MicrogridSpec":
        out = replace(self)
        if out.charge_curve is None:
            out.charge_curve = fit_charge_curve(n_segments=n_segments)
        if out.discharge_curve is None:
            out.discharge_curve = fit_discharge_curve(n_segments=n_segments)
        return out

    def require_curves(self) -> None:
        if self.charge_curve is None or self.discharge_curve is None:
            raise ValueError("spec has no conversion curves; call "
                             "with_default_curves() or set them explicitly")


@dataclass
class ScenarioSeries:
    """Aligned load and renewable series on a uniform time grid."""

    timestamps: np.ndarray      # datetime64[s], uniform spacing
    load_kw: np.ndarray
    solar_kw: np.ndarray
    wind_kw: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        for name in ("load_kw", "solar_kw", "wind_kw"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.timestamps)
        if not (len(self.load_kw) == len(self.solar_kw) == len(self.wind_kw) == n):
            raise ValueError("scenario channel lengths disagree")
        if n < 2:
            raise ValueError("scenario needs at least 2 steps")
        deltas = np.diff(self.timestamps.astype("int64"))
        if np.any(deltas != deltas[0]) or deltas[0] <= 0:
            raise ValueError("timestamps must be strictly uniform")
        for name in ("load_kw", "solar_kw", "wind_kw"):
            v = getattr(self, name)
            if np.any(~np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and non-negative")

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    @property
    def dt_h(self) -> float:
        return float(np.diff(self.timestamps.astype("int64"))[0]) / 3600.0

    @property
    def renewables_kw(self) -> np.ndarray:
        return self.solar_kw + self.wind_kw

    def window(self, start: int, stop: int) -> "ScenarioSeries":
        if not (0 <= start < stop <= self.n_steps):
            raise ValueError("window out of range")
        return ScenarioSeries(self.timestamps[start:stop], self.load_kw[start:stop],
                              self.solar_kw[start:stop], self.wind_kw[start:stop],
                              label=self.label)

    def months(self) -> np.ndarray:
        """Calendar month (1..12) of each step."""
        return self.timestamps.astype("datetime64[M]").astype(int) % 12 + 1


TRAJECTORY_FIELDS = ("p_b_c", "p_b_d", "p_h_c", "p_h_d", "p_d", "p_l", "p_r",
                     "p_g", "e_b", "e_h")


@dataclass
class TrajectoryFrame:
    """Dense per-step dispatch record (arrays of length T)."""

    p_b_c: np.ndarray
    p_b_d: np.ndarray
    p_h_c: np.ndarray
    p_h_d: np.ndarray
    p_d: np.ndarray
    p_l: np.ndarray
    p_r: np.ndarray
    p_g: np.ndarray
    e_b: np.ndarray             # [kWh] end-of-step battery state
    e_h: np.ndarray             # [kg] end-of-step hydrogen mass
    h_c: np.ndarray             # [kg/h] production rate
    h_d: np.ndarray             # [kg/h] consumption rate
    seg_c: np.ndarray           # [int] charge segment (-1 = off)
    seg_d: np.ndarray           # [int] discharge segment (-1 = off)

    @property
    def n_steps(self) -> int:
        return len(self.p_d)

    @classmethod
    def zeros(cls, n: int) -> "TrajectoryFrame":
        z = lambda: np.zeros(n)
        return cls(z(), z(), z(), z(), z(), z(), z(), z(), z(), z(), z(), z(),
                   -np.ones(n, dtype=int), -np.ones(n, dtype=int))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t",) + TRAJECTORY_FIELDS)
        for t in range(self.n_steps):
            w.writerow([t] + [f"{getattr(self, f)[t]:.10g}" for f in TRAJECTORY_FIELDS])
        return buf.getvalue()


def stage_cost(spec: MicrogridSpec, p_d, p_l, p_b_d, p_h_d, p_g=0.0) -> float:
    """Operating cost [$] of one step (scalars or arrays, summed)."""
    c = spec.costs
    val = spec.dt_h * (c.c_d * np.asarray(p_d) + c.c_l * np.asarray(p_l)
                       + c.c_b * np.asarray(p_b_d) + c.c_h * np.asarray(p_h_d)
                       + c.c_g * np.asarray(p_g))
    return float(np.sum(val))


def battery_step(spec: MicrogridSpec, e_b: float, p_b_c: float, p_b_d: float) -> float:
    """End-of-step battery energy [kWh]."""
    b = spec.battery
    return (b.retention(spec.dt_h) * e_b
            + spec.dt_h * (b.eta_c * p_b_c - p_b_d / b.eta_d))


def hydrogen_step(spec: MicrogridSpec, e_h: float, h_c: float, h_d: float) -> float:
    """End-of-step hydrogen mass [kg]."""
    return e_h + spec.dt_h * (h_c - h_d)


def curve_efficiency_bounds(curve: PiecewiseCurve, direction: str) -> tuple[float, float]:
    """(worst, best) conversion efficiency over a fitted curve's domain.

    Charging efficiency is rate*LHV/p, discharging is p/(rate*HHV); both
    are monotone within each linear segment, so the extremes sit at the
    segment nodes.  The p == 0 node of a pinned discharge curve uses the
    limit 1 / (slope * HHV).
    """
    xs, ys = curve.node_values()
    effs = []
    for x, y in zip(xs, ys):
        if direction == "charge":
            if x <= 0:
                continue
            effs.append(y * LHV_KWH_PER_KG / x)
        else:
            if x <= 0 or y <= 0:
                k = curve.segment_of(max(x, curve.p_lo[0]))
                if curve.slope[k] > 0:
                    effs.append(1.0 / (curve.slope[k] * HHV_KWH_PER_KG))
            else:
                effs.append(x / (y * HHV_KWH_PER_KG))
    if not effs:
        raise ValueError("cannot derive efficiencies from this curve")
    return float(min(effs)), float(max(effs))


# --------------------------------------------------------------------------
# horizon program construction
# --------------------------------------------------------------------------

@dataclass
class HorizonOptions:
    """Controls for :func:`build_horizon_program`.

    efficiency_model:
        "piecewise"  conversion via fitted segments; free segment choice
                     uses one-hot binaries unless ``fixed_segments`` pins
                     the schedule (then the program stays continuous).
        "constant"   h = eta * p / LHV (charge), h = p / (eta * HHV)
                     (discharge) with the given constant efficiencies.
    phi / soc_ref:
        tracking weight [$] and per-step hydrogen reference [kg]; the
        penalty is phi * ((e_h - ref) / e_h_cap)^2, quadratic objective.
    """

    efficiency_model: str = "piecewise"
    const_eta_c: float | None = None
    const_eta_d: float | None = None
    fixed_segments: tuple[np.ndarray, np.ndarray] | None = None
    phi: float = 0.0
    soc_ref: np.ndarray | None = None
    terminal_soc: bool = True
    e0_b_kwh: float | None = None
    e0_h_kg: float | None = None
    d0_kw: float | None = None      # previous diesel output for the first ramp
    terminal_slack_cost: float | None = None  # $/unit soft terminal (repair mode)
    # terminal stock targets; default to the (possibly overridden) initial
    # stock, so rolling windows can aim at the original level instead
    terminal_e_b_kwh: float | None = None
    terminal_e_h_kg: float | None = None


@dataclass
class HorizonMeta:
    """Index bookkeeping for one built horizon program."""

    n_steps: int
    idx: dict                    # field -> (T,) arrays of variable indices
    w_c: np.ndarray              # (T, C) charge segment power indices or -1
    w_d: np.ndarray              # (T, D)
    z_c: np.ndarray              # (T, C) charge segment binaries or -1
    z_d: np.ndarray              # (T, D)
    z_c_off: np.ndarray          # (T,) off binaries or -1
    charge_segments: np.ndarray  # (C, 4) lo, hi, slope, intercept
    discharge_segments: np.ndarray
    options: HorizonOptions


def _clipped_segments(curve: PiecewiseCurve, p_cap: float) -> np.ndarray:
    """Segment table (lo, hi, slope, intercept) clipped to the power cap."""
    rows = []
    for k in range(curve.n_segments):
        lo = float(curve.p_lo[k])
        hi = float(min(curve.p_hi[k], p_cap))
        if hi <= lo + 1e-12 and rows:
            continue
        rows.append((lo, hi, float(curve.slope[k]), float(curve.intercept[k])))
    return np.array(rows)


def horizon_census(n_steps: int, n_seg_c: int, n_seg_d: int,
                   charge_has_off: bool = True, discharge_low_zero: bool = True,
                   terminal_soc: bool = True, has_d0: bool = False) -> dict:
    """Expected variable/row counts of a piecewise-binary horizon program.

    Per step: 12 core variables (8 powers, 2 states, 2 rates), one power
    and one binary per segment and direction, plus the electrolyzer off
    binary.  Equalities: balance, 2 state updates, 2 rate definitions,
    2 total-power definitions, 2 one-hot rows.  Inequalities: segment
    upper links (C + D), segment lower links for segments with positive
    lower edge (C + D - 1 in the standard geometry), 2 ramp rows per
    interior step boundary, and 2 terminal rows.
    """
    per_step_vars = 12 + 2 * n_seg_c + 2 * n_seg_d + (1 if charge_has_off else 0)
    eq_per_step = 9
    low_links = n_seg_c + (n_seg_d - 1 if discharge_low_zero else n_seg_d)
    ineq = (n_seg_c + n_seg_d + low_links) * n_steps \
        + 2 * (n_steps - 1) + (2 if has_d0 else 0) + (2 if terminal_soc else 0)
    return {"n_vars": per_step_vars * n_steps,
            "n_eq": eq_per_step * n_steps,
            "n_ub": ineq,
            "n_binary": (n_seg_c + n_seg_d + (1 if charge_has_off else 0)) * n_steps}


def build_horizon_program(spec: MicrogridSpec, scenario: ScenarioSeries,
                          options: HorizonOptions | None = None
                          ) -> tuple[StandardFormProgram, HorizonMeta]:
    """Assemble the multi-step dispatch program over the whole scenario."""
    options = options or HorizonOptions()
    spec.require_curves()
    t_count = scenario.n_steps
    dt = spec.dt_h
    bat, hyd, dsl, cst = spec.battery, spec.hydrogen, spec.diesel, spec.costs
    e0_b = options.e0_b_kwh if options.e0_b_kwh is not None else bat.e0_kwh
    e0_h = options.e0_h_kg if options.e0_h_kg is not None else hyd.e0_kg
    retention = bat.retention(dt)
    ramp = dsl.ramp_kw_per_h * dt
    e_h_cap = hyd.e_max_kg

    model = options.efficiency_model
    if model not in ("piecewise", "constant"):
        raise ValueError("efficiency_model must be 'piecewise' or 'constant'")
    if model == "constant" and (options.const_eta_c is None
                                or options.const_eta_d is None):
        raise ValueError("constant efficiency model needs const_eta_c/const_eta_d")
    if options.phi < 0:
        raise ValueError("phi must be non-negative")
    if options.phi > 0 and options.soc_ref is None:
        raise ValueError("phi > 0 requires soc_ref")
    if (options.phi > 0 and model == "piecewise"
            and options.fixed_segments is None):
        raise ValueError("tracking term requires fixed segments or a "
                         "constant efficiency model (quadratic objectives "
                         "do not combine with free segment choice)")
    if options.soc_ref is not None and len(options.soc_ref) != t_count:
        raise ValueError("soc_ref length must match the scenario")
    if options.fixed_segments is not None:
        fseg_c, fseg_d = options.fixed_segments
        if len(fseg_c) != t_count or len(fseg_d) != t_count:
            raise ValueError("fixed_segments length must match the scenario")

    cseg = _clipped_segments(spec.charge_curve, hyd.p_max_kw)
    dseg = _clipped_segments(spec.discharge_curve, hyd.p_max_kw)
    n_c, n_d = len(cseg), len(dseg)
    charge_has_off = cseg[0, 0] > 1e-9
    use_binaries = model == "piecewise" and options.fixed_segments is None

    b = ProgramBuilder()
    idx = {f: np.full(t_count, -1, dtype=int) for f in
           ("p_b_c", "p_b_d", "p_h_c", "p_h_d", "p_d", "p_l", "p_r", "p_g",
            "e_b", "e_h", "h_c", "h_d")}
    w_c = np.full((t_count, n_c), -1, dtype=int)
    w_d = np.full((t_count, n_d), -1, dtype=int)
    z_c = np.full((t_count, n_c), -1, dtype=int)
    z_d = np.full((t_count, n_d), -1, dtype=int)
    z_c_off = np.full(t_count, -1, dtype=int)

    for t in range(t_count):
        load = float(scenario.load_kw[t])
        avail_r = float(scenario.renewables_kw[t])
        idx["p_b_c"][t] = b.add_var(f"p_b_c[{t}]", 0.0, bat.p_max_kw)
        idx["p_b_d"][t] = b.add_var(f"p_b_d[{t}]", 0.0, bat.p_max_kw,
                                    cost=dt * cst.c_b)
        idx["p_d"][t] = b.add_var(f"p_d[{t}]", dsl.p_min_kw, dsl.p_max_kw,
                                  cost=dt * cst.c_d)
        idx["p_l"][t] = b.add_var(f"p_l[{t}]", 0.0, load, cost=dt * cst.c_l)
        idx["p_r"][t] = b.add_var(f"p_r[{t}]", 0.0, avail_r)
        idx["p_g"][t] = b.add_var(f"p_g[{t}]", 0.0, spec.grid_cap_kw,
                                  cost=dt * cst.c_g)
        idx["e_b"][t] = b.add_var(f"e_b[{t}]", bat.e_min_kwh, bat.e_max_kwh)
        idx["e_h"][t] = b.add_var(f"e_h[{t}]", hyd.e_min_kg, hyd.e_max_kg)
        idx["h_c"][t] = b.add_var(f"h_c[{t}]", 0.0, np.inf)
        idx["h_d"][t] = b.add_var(f"h_d[{t}]", 0.0, np.inf)

        # --- hydrogen conversion model
        if model == "constant":
            pc = b.add_var(f"p_h_c[{t}]", 0.0, hyd.p_max_kw)
            pd_ = b.add_var(f"p_h_d[{t}]", 0.0, hyd.p_max_kw,
                            cost=dt * cst.c_h)
            b.add_eq({idx["h_c"][t]: 1.0,
                      pc: -options.const_eta_c / LHV_KWH_PER_KG}, 0.0)
            b.add_eq({idx["h_d"][t]: 1.0,
                      pd_: -1.0 / (options.const_eta_d * HHV_KWH_PER_KG)}, 0.0)
        elif use_binaries:
            pc = b.add_var(f"p_h_c[{t}]", 0.0, min(hyd.p_max_kw, cseg[-1, 1]))
            pd_ = b.add_var(f"p_h_d[{t}]", 0.0, min(hyd.p_max_kw, dseg[-1, 1]),
                            cost=dt * cst.c_h)
            hc_row = {idx["h_c"][t]: 1.0}
            pc_row = {pc: 1.0}
            onehot_c = {}
            for s in range(n_c):
                lo, hi, a, bb = cseg[s]
                w = b.add_var(f"w_c[{t},{s}]", 0.0, hi)
                z = b.add_var(f"z_c[{t},{s}]", binary=True)
                w_c[t, s], z_c[t, s] = w, z
                hc_row[w] = -a
                hc_row[z] = -bb
                pc_row[w] = -1.0
                onehot_c[z] = 1.0
                b.add_le({w: 1.0, z: -hi}, 0.0)
                if lo > 1e-9:
                    b.add_le({z: lo, w: -1.0}, 0.0)
            if charge_has_off:
                z_off = b.add_var(f"z_c_off[{t}]", binary=True)
                z_c_off[t] = z_off
                onehot_c[z_off] = 1.0
            b.add_eq(hc_row, 0.0)
            b.add_eq(pc_row, 0.0)
            b.add_eq(onehot_c, 1.0)

            hd_row = {idx["h_d"][t]: 1.0}
            pd_row = {pd_: 1.0}
            onehot_d = {}
            for s in range(n_d):
                lo, hi, a, bb = dseg[s]
                w = b.add_var(f"w_d[{t},{s}]", 0.0, hi)
                z = b.add_var(f"z_d[{t},{s}]", binary=True)
                w_d[t, s], z_d[t, s] = w, z
                hd_row[w] = -a
                hd_row[z] = -bb
                pd_row[w] = -1.0
                onehot_d[z] = 1.0
                b.add_le({w: 1.0, z: -hi}, 0.0)
                if lo > 1e-9:
                    b.add_le({z: lo, w: -1.0}, 0.0)
            b.add_eq(hd_row, 0.0)
            b.add_eq(pd_row, 0.0)
            b.add_eq(onehot_d, 1.0)
        else:
            # fixed segment schedule: no binaries, tight per-step bounds
            sc = int(fseg_c[t])
            sd = int(fseg_d[t])
            if sc < 0:
                pc = b.add_var(f"p_h_c[{t}]", 0.0, 0.0)
                b.add_eq({idx["h_c"][t]: 1.0}, 0.0)
            else:
                lo, hi, a, bb = cseg[sc]
                pc = b.add_var(f"p_h_c[{t}]", lo, hi)
                b.add_eq({idx["h_c"][t]: 1.0, pc: -a}, bb)
            if sd < 0:
                pd_ = b.add_var(f"p_h_d[{t}]", 0.0, 0.0, cost=dt * cst.c_h)
                b.add_eq({idx["h_d"][t]: 1.0}, 0.0)
            else:
                lo, hi, a, bb = dseg[sd]
                pd_ = b.add_var(f"p_h_d[{t}]", lo, hi, cost=dt * cst.c_h)
                b.add_eq({idx["h_d"][t]: 1.0, pd_: -a}, bb)
        idx["p_h_c"][t] = pc
        idx["p_h_d"][t] = pd_

        # --- bus balance
        b.add_eq({idx["p_d"][t]: 1.0, idx["p_g"][t]: 1.0, idx["p_r"][t]: 1.0,
                  idx["p_b_d"][t]: 1.0, idx["p_b_c"][t]: -1.0,
                  idx["p_h_d"][t]: 1.0, pc: -1.0, idx["p_l"][t]: 1.0}, load)

        # --- storage dynamics
        eb_row = {idx["e_b"][t]: 1.0, idx["p_b_c"][t]: -dt * bat.eta_c,
                  idx["p_b_d"][t]: dt / bat.eta_d}
        eh_row = {idx["e_h"][t]: 1.0, idx["h_c"][t]: -dt, idx["h_d"][t]: dt}
        if t == 0:
            b.add_eq(eb_row, retention * e0_b)
            b.add_eq(eh_row, e0_h)
        else:
            eb_row[idx["e_b"][t - 1]] = -retention
            eh_row[idx["e_h"][t - 1]] = -1.0
            b.add_eq(eb_row, 0.0)
            b.add_eq(eh_row, 0.0)

        # --- diesel ramp
        if t == 0 and options.d0_kw is not None:
            b.add_le({idx["p_d"][t]: 1.0}, options.d0_kw + ramp)
            b.add_le({idx["p_d"][t]: -1.0}, ramp - options.d0_kw)
        if t > 0:
            b.add_le({idx["p_d"][t]: 1.0, idx["p_d"][t - 1]: -1.0}, ramp)
            b.add_le({idx["p_d"][t - 1]: 1.0, idx["p_d"][t]: -1.0}, ramp)

        # --- tracking penalty phi * ((e_h - ref) / cap)^2
        if options.phi > 0.0:
            ref = float(options.soc_ref[t])
            scale = options.phi / (e_h_cap * e_h_cap)
            b.add_cost(idx["e_h"][t], cost=-2.0 * scale * ref, quad=scale)
            b.c0 += scale * ref * ref

    if options.terminal_soc:
        tgt_b = (options.terminal_e_b_kwh
                 if options.terminal_e_b_kwh is not None else e0_b)
        tgt_h = (options.terminal_e_h_kg
                 if options.terminal_e_h_kg is not None else e0_h)
        if options.terminal_slack_cost is None:
            b.add_ge({idx["e_b"][t_count - 1]: 1.0}, tgt_b)
            b.add_ge({idx["e_h"][t_count - 1]: 1.0}, tgt_h)
        else:
            sb = b.add_var("t_slack_b", 0.0, np.inf, cost=options.terminal_slack_cost)
            sh = b.add_var("t_slack_h", 0.0, np.inf,
                           cost=options.terminal_slack_cost * LHV_KWH_PER_KG)
            b.add_ge({idx["e_b"][t_count - 1]: 1.0, sb: 1.0}, tgt_b)
            b.add_ge({idx["e_h"][t_count - 1]: 1.0, sh: 1.0}, tgt_h)

    prog = b.build()
    meta = HorizonMeta(t_count, idx, w_c, w_d, z_c, z_d, z_c_off,
                       cseg, dseg, options)
    return prog, meta


def extract_trajectory(x: np.ndarray, meta: HorizonMeta, spec: MicrogridSpec
                       ) -> TrajectoryFrame:
    """Read a solver vector back into a dense per-step trajectory."""
    n = meta.n_steps
    traj = TrajectoryFrame.zeros(n)
    for f in TRAJECTORY_FIELDS + ("h_c", "h_d"):
        cols = meta.idx[f]
        vals = np.where(cols >= 0, x[np.maximum(cols, 0)], 0.0)
        getattr(traj, f)[:] = vals
    if meta.options.fixed_segments is not None:
        fseg_c, fseg_d = meta.options.fixed_segments
        traj.seg_c[:] = fseg_c
        traj.seg_d[:] = fseg_d
    elif meta.options.efficiency_model == "piecewise":
        for t in range(n):
            on_c = np.where(x[meta.z_c[t]] > 0.5)[0]
            traj.seg_c[t] = int(on_c[0]) if len(on_c) else -1
            on_d = np.where(x[meta.z_d[t]] > 0.5)[0]
            traj.seg_d[t] = int(on_d[0]) if len(on_d) else -1
    else:
        # constant-efficiency plan: report the true-curve segment when the
        # power lies inside the fitted domain, else off
        for t in range(n):
            for (p, seg_arr, curve) in ((traj.p_h_c[t], traj.seg_c, spec.charge_curve),
                                        (traj.p_h_d[t], traj.seg_d, spec.discharge_curve)):
                lo, hi = curve.domain
                if lo - 1e-9 <= p <= hi + 1e-9 and p > 1e-9:
                    seg_arr[t] = curve.segment_of(min(max(p, lo), hi))
    return traj


def validate_trajectory(spec: MicrogridSpec, scenario: ScenarioSeries,
                        traj: TrajectoryFrame, *, tol: float = 1e-6,
                        efficiency_model: str = "piecewise",
                        const_eta_c: float | None = None,
                        const_eta_d: float | None = None,
                        check_terminal: bool = True,
                        e0_b_kwh: float | None = None,
                        e0_h_kg: float | None = None) -> list[tuple[int, str, float]]:
    """Constraint audit of a trajectory; returns (step, tag, residual) rows.

    ``efficiency_model`` selects which conversion law h must satisfy:
    "piecewise" (the fitted curves), "constant" (the given etas), or
    "none" (skip the conversion audit, e.g. for reconciled plans whose
    rates were recomputed outside the planning model).
    """
    spec.require_curves()
    bad: list[tuple[int, str, float]] = []
    bat, hyd, dsl = spec.battery, spec.hydrogen, spec.diesel
    dt = spec.dt_h
    e_b_prev = e0_b_kwh if e0_b_kwh is not None else bat.e0_kwh
    e_h_prev = e0_h_kg if e0_h_kg is not None else hyd.e0_kg
    e0_b, e0_h = e_b_prev, e_h_prev
    ramp = dsl.ramp_kw_per_h * dt

    def check(t, tag, residual):
        if residual > tol:
            bad.append((t, tag, float(residual)))

    for t in range(traj.n_steps):
        load = scenario.load_kw[t]
        avail = scenario.renewables_kw[t]
        check(t, "p_b_c_bounds", max(-traj.p_b_c[t], traj.p_b_c[t] - bat.p_max_kw))
        check(t, "p_b_d_bounds", max(-traj.p_b_d[t], traj.p_b_d[t] - bat.p_max_kw))
        check(t, "p_d_bounds", max(dsl.p_min_kw - traj.p_d[t],
                                   traj.p_d[t] - dsl.p_max_kw))
        check(t, "p_l_bounds", max(-traj.p_l[t], traj.p_l[t] - load))
        check(t, "p_r_bounds", max(-traj.p_r[t], traj.p_r[t] - avail))
        check(t, "p_g_bounds", max(-traj.p_g[t], traj.p_g[t] - spec.grid_cap_kw))
        check(t, "p_h_c_bounds", max(-traj.p_h_c[t], traj.p_h_c[t] - hyd.p_max_kw))
        check(t, "p_h_d_bounds", max(-traj.p_h_d[t], traj.p_h_d[t] - hyd.p_max_kw))

        bal = (traj.p_d[t] + traj.p_g[t] + traj.p_r[t] + traj.p_b_d[t]
               - traj.p_b_c[t] + traj.p_h_d[t] - traj.p_h_c[t]
               + traj.p_l[t] - load)
        check(t, "balance", abs(bal))

        e_b_next = battery_step(spec, e_b_prev, traj.p_b_c[t], traj.p_b_d[t])
        check(t, "battery_update", abs(traj.e_b[t] - e_b_next))
        check(t, "battery_bounds", max(bat.e_min_kwh - traj.e_b[t],
                                       traj.e_b[t] - bat.e_max_kwh))
        e_h_next = hydrogen_step(spec, e_h_prev, traj.h_c[t], traj.h_d[t])
        check(t, "hydrogen_update", abs(traj.e_h[t] - e_h_next))
        check(t, "hydrogen_bounds", max(hyd.e_min_kg - traj.e_h[t],
                                        traj.e_h[t] - hyd.e_max_kg))

        if efficiency_model == "piecewise":
            for (p, h, curve, tag) in (
                    (traj.p_h_c[t], traj.h_c[t], spec.charge_curve, "charge_rate"),
                    (traj.p_h_d[t], traj.h_d[t], spec.discharge_curve, "discharge_rate")):
                if p <= tol:
                    check(t, tag, abs(h))
                else:
                    lo, hi = curve.domain
                    if p < lo - tol or p > hi + tol:
                        check(t, tag + "_domain", max(lo - p, p - hi))
                    else:
                        check(t, tag, abs(h - curve.evaluate(min(max(p, lo), hi))))
        elif efficiency_model == "constant":
            check(t, "charge_rate",
                  abs(traj.h_c[t] - const_eta_c * traj.p_h_c[t] / LHV_KWH_PER_KG))
            check(t, "discharge_rate",
                  abs(traj.h_d[t] - traj.p_h_d[t] / (const_eta_d * HHV_KWH_PER_KG)))
        elif efficiency_model != "none":
            raise ValueError("efficiency_model must be piecewise, constant or none")

        if t > 0:
            check(t, "diesel_ramp", abs(traj.p_d[t] - traj.p_d[t - 1]) - ramp)
        e_b_prev, e_h_prev = traj.e_b[t], traj.e_h[t]

    if check_terminal and traj.n_steps > 0:
        check(traj.n_steps - 1, "terminal_battery", e0_b - traj.e_b[-1])
        check(traj.n_steps - 1, "terminal_hydrogen", e0_h - traj.e_h[-1])
    return bad


def trajectory_cost(spec: MicrogridSpec, traj: TrajectoryFrame) -> float:
    """Total operating cost [$] of a trajectory (no tracking term)."""
    return stage_cost(spec, traj.p_d, traj.p_l, traj.p_b_d, traj.p_h_d, traj.p_g)


# --------------------------------------------------------------------------
# planning driver
# --------------------------------------------------------------------------

@dataclass
class PlanResult:
    trajectory: TrajectoryFrame
    objective: float             # solver objective (cost + tracking term)
    cost: float                  # operating cost alone
    status: SolveStatus
    method: str                  # "exact" | "relax_and_fix" | "lp" | "qp"
    node_count: int = 0
    attempts: int = 1


def _round_schedule(meta: HorizonMeta, x: np.ndarray, off_frac: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic segment schedule from a relaxed solution.

    The electrolyzer turns off when its relaxed power is below
    ``off_frac`` of the lowest segment edge, otherwise both directions
    take the segment that contains the relaxed power (clipped into the
    fitted domain).
    """
    n = meta.n_steps
    cseg, dseg = meta.charge_segments, meta.discharge_segments
    seg_c = np.full(n, -1, dtype=int)
    seg_d = np.full(n, -1, dtype=int)
    for t in range(n):
        p_c = x[meta.idx["p_h_c"][t]]
        if p_c >= off_frac * cseg[0, 0]:
            k = int(np.searchsorted(cseg[:, 1], min(max(p_c, cseg[0, 0]),
                                                    cseg[-1, 1]) - 1e-12))
            seg_c[t] = min(k, len(cseg) - 1)
        p_d = x[meta.idx["p_h_d"][t]]
        if p_d > 1e-9:
            k = int(np.searchsorted(dseg[:, 1], min(p_d, dseg[-1, 1]) - 1e-12))
            seg_d[t] = min(k, len(dseg) - 1)
        else:
            seg_d[t] = 0 if dseg[0, 0] <= 1e-9 else -1
    return seg_c, seg_d


def plan_horizon(spec: MicrogridSpec, scenario: ScenarioSeries,
                 options: HorizonOptions | None = None,
                 solve_options: SolveOptions | None = None,
                 exact_step_limit: int = 16) -> PlanResult:
    """Solve the horizon dispatch program.

    Piecewise programs with free segment choice are solved exactly
    (branch and bound) up to ``exact_step_limit`` steps; longer horizons
    use relax-and-fix: solve the continuous relaxation, round a segment
    schedule from it, and re-solve the continuous program with the
    schedule pinned.  If a rounded schedule is infeasible the rounding
    threshold is tightened once, then the terminal condition is softened
    with a high linear penalty so the driver always returns a plan.
    Constant-efficiency and fixed-segment programs are plain LPs (QPs
    when a tracking term is present).
    """
    options = options or HorizonOptions()
    solve_options = solve_options or SolveOptions()
    prog, meta = build_horizon_program(spec, scenario, options)
    use_binaries = (options.efficiency_model == "piecewise"
                    and options.fixed_segments is None)

    if not use_binaries:
        if prog.has_quadratic:
            sol = solve_qp(prog, solve_options)
            method = "qp"
        else:
            sol = solve_lp(prog, solve_options)
            method = "lp"
        if sol.status != SolveStatus.OPTIMAL:
            return PlanResult(TrajectoryFrame.zeros(scenario.n_steps),
                              np.nan, np.nan, sol.status, method)
        traj = extract_trajectory(sol.x, meta, spec)
        return PlanResult(traj, sol.objective, trajectory_cost(spec, traj),
                          sol.status, method)

    if scenario.n_steps <= exact_step_limit:
        sol = solve_milp(prog, solve_options)
        if sol.status != SolveStatus.OPTIMAL:
            return PlanResult(TrajectoryFrame.zeros(scenario.n_steps),
                              np.nan, np.nan, sol.status, "exact",
                              node_count=sol.node_count)
        traj = extract_trajectory(sol.x, meta, spec)
        return PlanResult(traj, sol.objective, trajectory_cost(spec, traj),
                          sol.status, "exact", node_count=sol.node_count)

    relaxed = solve_lp(prog.relaxed(), solve_options)
    if relaxed.status != SolveStatus.OPTIMAL:
        return PlanResult(TrajectoryFrame.zeros(scenario.n_steps),
                          np.nan, np.nan, relaxed.status, "relax_and_fix")
    attempts = 0
    for off_frac, soften in ((0.5, False), (0.25, False), (0.25, True)):
        attempts += 1
        schedule = _round_schedule(meta, relaxed.x, off_frac)
        fixed_opts = replace(options, fixed_segments=schedule,
                             terminal_slack_cost=(10.0 * spec.costs.c_l
                                                  if soften else None))
        fixed_prog, fixed_meta = build_horizon_program(spec, scenario, fixed_opts)
        if fixed_prog.has_quadratic:
            sol = solve_qp(fixed_prog, solve_options)
        else:
            sol = solve_lp(fixed_prog, solve_options)
        if sol.status == SolveStatus.OPTIMAL:
            traj = extract_trajectory(sol.x, fixed_meta, spec)
            return PlanResult(traj, sol.objective, trajectory_cost(spec, traj),
                              sol.status, "relax_and_fix", attempts=attempts)
    return PlanResult(TrajectoryFrame.zeros(scenario.n_steps), np.nan, np.nan,
                      sol.status, "relax_and_fix", attempts=attempts)
