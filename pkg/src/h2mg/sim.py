"""Closed-loop dispatch of the islanded microgrid.

Three controller families produce hourly power proposals:

* offline: solve the whole horizon once with a chosen conversion-efficiency
  belief and replay the plan;
* mpc: re-solve a short receding window every hour from a persistence (or
  oracle) forecast, optionally tracking a kernel-blended storage reference;
* oco: the prediction-free virtual-queue expert ensemble, fed only with
  already-realized data, optionally penalized for leaving the reference.

Whatever the controller proposes, `reconcile_step` is the plant: it nets
contradictory storage commands, enforces device windows, converts hydrogen
power through the fitted curves (not the controller's belief), and restores
exact bus balance through a fixed merit order, shedding load only when every
source is exhausted.  Realized cost is computed from the reconciled step, so
a controller with an optimistic efficiency model pays for it in lost load
rather than in bookkeeping.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from .grid import (HorizonOptions, MicrogridSpec, PlanResult, ScenarioSeries,
                   TrajectoryFrame, battery_step, curve_efficiency_bounds,
                   hydrogen_step, plan_horizon, stage_cost)
from .oco import (AffineConstraints, FeasibleSet, OcoConfig, StepFeedback,
                  compute_regret, ensemble_step, init_ensemble)
from .piecewise import PiecewiseCurve
from .reference import KernelTracker, ReferenceSet
from .solver import SolveOptions

__all__ = [
    "MpcSettings", "OcoSettings", "MethodConfig", "method_preset",
    "Commitment", "reconcile_step", "persistence_forecast",
    "RolloutResult", "run_rollout", "evaluate_methods",
]

log = logging.getLogger(__name__)

CHANNELS = ("p_b_c", "p_b_d", "p_h_c", "p_h_d", "p_d", "p_r", "p_g")
# sign of each channel in the supply balance (charging consumes)
_SIGN = np.array([-1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0])


# --------------------------------------------------------------------------
# method configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MpcSettings:
    """Receding-horizon controller knobs."""
    horizon_h: int = 24
    forecast: str = "persistence"        # "persistence" | "perfect"
    efficiency_model: str = "constant"   # window belief: "piecewise"|"constant"
    const_eta_c: float | None = None     # None -> best-point from the curves
    const_eta_d: float | None = None

    def __post_init__(self) -> None:
        if self.horizon_h < 1:
            raise ValueError(f"horizon_h must be >= 1, got {self.horizon_h}")
        if self.forecast not in ("persistence", "perfect"):
            raise ValueError(f"unknown forecast kind {self.forecast!r}")
        if self.efficiency_model not in ("piecewise", "constant"):
            raise ValueError(
                f"unknown efficiency model {self.efficiency_model!r}")


@dataclass(frozen=True)
class OcoSettings:
    """Queue-ensemble controller knobs (see `h2mg.oco.OcoConfig`)."""
    kappa: float = 0.5
    c: float = 0.5
    alpha0: float = 0.02
    beta0: float = 1.0
    gamma0: float | None = None
    grad_bound: float | None = None      # None -> analytic bound from costs


@dataclass(frozen=True)
class MethodConfig:
    """One dispatch method: planner family plus reference/belief wiring.

    When a reference is tracked, the plant itself is granted two standing
    authorities derived from the blended reference: the fuel cell may draw
    the tank at most `ref_band_frac` of capacity below it, and stranded
    renewables are harvested into the tank up to it.  The planner's own
    tracking terms cannot substitute for these — a myopic window or a
    queue-driven learner will always trade the seasonal reserve for an
    immediate bus need — so the envelope lives at the commitment stage,
    not in the proposal.
    """
    name: str
    planner: str                         # "offline" | "mpc" | "oco"
    use_reference: bool = False
    phi: float = 0.0                     # storage-tracking weight
    ref_band_frac: float = 0.05          # tank may dip this far below ref
    efficiency_model: str = "piecewise"  # offline-plan belief
    const_eta_c: float | None = None
    const_eta_d: float | None = None
    mpc: MpcSettings | None = None
    oco: OcoSettings | None = None

    def __post_init__(self) -> None:
        if self.planner not in ("offline", "mpc", "oco"):
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.planner == "mpc" and self.mpc is None:
            raise ValueError("planner 'mpc' needs MpcSettings")
        if self.planner == "oco" and self.oco is None:
            raise ValueError("planner 'oco' needs OcoSettings")
        if self.planner == "offline" and self.use_reference:
            raise ValueError("the offline planner does not take a reference")
        if self.efficiency_model not in ("piecewise", "constant"):
            raise ValueError(
                f"unknown efficiency model {self.efficiency_model!r}")
        if self.phi < 0.0:
            raise ValueError(f"phi must be >= 0, got {self.phi}")
        if self.phi > 0.0 and not self.use_reference:
            raise ValueError("phi > 0 requires use_reference")
        if not 0.0 <= self.ref_band_frac <= 1.0:
            raise ValueError(
                f"ref_band_frac must be in [0, 1], got {self.ref_band_frac}")


_DEFAULT_PHI = 2000.0


def method_preset(tag: str, **overrides) -> MethodConfig:
    """The five benchmark methods; keyword overrides replace fields."""
    presets = {
        "M0": MethodConfig(name="M0", planner="offline"),
        "M1": MethodConfig(name="M1", planner="oco", use_reference=True,
                           phi=_DEFAULT_PHI, oco=OcoSettings()),
        "M2": MethodConfig(name="M2", planner="mpc", use_reference=True,
                           phi=_DEFAULT_PHI,
                           mpc=MpcSettings(efficiency_model="piecewise")),
        "M3": MethodConfig(name="M3", planner="oco", oco=OcoSettings()),
        "M4": MethodConfig(name="M4", planner="mpc", mpc=MpcSettings()),
    }
    if tag not in presets:
        raise ValueError(f"unknown method preset {tag!r}; "
                         f"expected one of {sorted(presets)}")
    base = presets[tag]
    return dataclasses.replace(base, **overrides) if overrides else base


# --------------------------------------------------------------------------
# plant reconciliation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Commitment:
    """One realized step after plant reconciliation (exact bus balance)."""
    p_b_c: float
    p_b_d: float
    p_h_c: float
    p_h_d: float
    p_d: float
    p_r: float
    p_g: float
    p_l: float
    h_c: float
    h_d: float
    e_b_next: float
    e_h_next: float
    adjustments: tuple[str, ...]


def _charge_power_for_rate(curve: PiecewiseCurve, rate: float,
                           cap: float) -> float:
    """Largest power <= cap whose charge rate fits in `rate` kg/h (0 if the
    device minimum alone would already overshoot)."""
    lo, hi = curve.domain
    hi = min(hi, cap)
    if hi < lo or rate <= 0.0 or rate < curve.evaluate(lo):
        return 0.0
    if rate >= curve.evaluate(hi):
        return hi
    return float(curve.invert(rate))


def _discharge_power_for_rate(curve: PiecewiseCurve, rate: float,
                              cap: float) -> float:
    """Largest power <= cap whose fuel draw stays within `rate` kg/h."""
    hi = min(curve.domain[1], cap)
    if rate <= 0.0 or hi <= 0.0:
        return 0.0
    if rate >= curve.evaluate(hi):
        return hi
    return float(curve.invert(rate))


def reconcile_step(spec: MicrogridSpec, load_kw: float, renew_kw: float,
                   proposal: dict, e_b: float, e_h: float, d_prev: float,
                   *, h_d_floor_kg: float | None = None,
                   h_c_target_kg: float | None = None,
                   tol: float = 1e-9) -> Commitment:
    """Force a proposed step onto the plant. Deterministic and total.

    Steps: net opposed storage commands, clip to device/ramp/energy limits
    (hydrogen limits through the fitted curves, including the electrolyzer
    minimum), then close the bus balance: a shortfall pass raises sources in
    merit order (renewables, cancel charging, generator, battery, fuel cell,
    shed), a surplus pass lowers them (fuel cell, battery, generator, then
    charge battery, electrolyzer, curtail).

    `h_d_floor_kg` is the controller's discharge authority: the merit order
    will not draw the tank below it, so load beyond the remaining sources is
    shed instead.  The plant itself only enforces the physical minimum.

    `h_c_target_kg` is standing charge authority: renewables the proposal
    left stranded are harvested into the tank (raising production and the
    electrolyzer together, which leaves the bus balance untouched) until
    the tank reaches the target mass.
    """
    b, hyd, dsl = spec.battery, spec.hydrogen, spec.diesel
    cc, dc = spec.charge_curve, spec.discharge_curve
    dt = spec.dt_h
    ret = b.retention(dt)
    raw = {k: float(proposal.get(k, 0.0)) for k in CHANNELS}

    d_lo = max(dsl.p_min_kw, d_prev - dsl.ramp_kw_per_h * dt)
    d_hi = min(dsl.p_max_kw, d_prev + dsl.ramp_kw_per_h * dt)
    c_lo = cc.domain[0]
    bc_cap = min(b.p_max_kw, max(0.0, (b.e_max_kwh - ret * e_b) / (b.eta_c * dt)))
    bd_cap = min(b.p_max_kw, max(0.0, (ret * e_b - b.e_min_kwh) * b.eta_d / dt))
    hc_cap = _charge_power_for_rate(cc, (hyd.e_max_kg - e_h) / dt, hyd.p_max_kw)
    tank_floor = hyd.e_min_kg
    if h_d_floor_kg is not None:
        tank_floor = max(tank_floor, min(h_d_floor_kg, hyd.e_max_kg))
    hd_cap = _discharge_power_for_rate(dc, (e_h - tank_floor) / dt,
                                       hyd.p_max_kw)

    net_b = raw["p_b_c"] - raw["p_b_d"]
    net_h = raw["p_h_c"] - raw["p_h_d"]
    p_b_c = min(max(net_b, 0.0), bc_cap)
    p_b_d = min(max(-net_b, 0.0), bd_cap)
    p_h_c = min(max(net_h, 0.0), hc_cap)
    if 0.0 < p_h_c < c_lo:                  # below the electrolyzer minimum
        p_h_c = 0.0
    p_h_d = min(max(-net_h, 0.0), hd_cap)
    p_d = min(max(raw["p_d"], d_lo), d_hi)
    p_r = min(max(raw["p_r"], 0.0), renew_kw)
    p_g = min(max(raw["p_g"], 0.0), spec.grid_cap_kw)
    forced = False

    def residual() -> float:
        return load_kw - (p_r + p_d + p_g + p_b_d + p_h_d - p_b_c - p_h_c)

    # ---- shortfall pass: raise supply in merit order --------------------
    r = residual()
    if r > tol:
        p_r = min(renew_kw, p_r + r)
        r = residual()
    if r > tol and p_b_c > 0.0:
        p_b_c -= min(p_b_c, r)
        r = residual()
    if r > tol and p_h_c > 0.0:
        target = p_h_c - r
        p_h_c = target if target >= c_lo else 0.0
        r = residual()
    if r > tol:
        p_d = min(d_hi, p_d + r)
        r = residual()
    if r > tol and p_b_c <= 0.0:
        p_b_d = min(bd_cap, p_b_d + r)
        r = residual()
    if r > tol and p_h_c <= 0.0:
        p_h_d = min(hd_cap, p_h_d + r)
        r = residual()

    # ---- surplus pass: lower supply, then store, then curtail -----------
    r = residual()
    if r < -tol:
        p_h_d = max(0.0, p_h_d + r)         # r is negative: cut discharge
        r = residual()
    if r < -tol:
        p_b_d = max(0.0, p_b_d + r)
        r = residual()
    if r < -tol:
        p_d = max(d_lo, p_d + r)
        r = residual()
    if r < -tol and p_b_d <= 0.0:
        p_b_c = min(bc_cap, p_b_c - r)
        r = residual()
    if r < -tol and p_h_d <= 0.0:
        lift = min(hc_cap - p_h_c, -r)
        if p_h_c > 0.0 or p_h_c + lift >= c_lo:
            p_h_c += lift
            r = residual()
    if r < -tol:
        p_r = max(0.0, p_r + r)
        r = residual()
    if r < -tol:
        p_g = max(0.0, p_g + r)
        r = residual()
    if r < -tol:
        # generator locked above demand by its ramp window: trip it rather
        # than break the bus balance (should not happen with sane ramps)
        log.warning("reconcile forced the generator below its ramp window")
        forced = True
        p_d = max(0.0, p_d + r)
        r = residual()

    # ---- opportunistic harvest: stranded renewables -> tank -------------
    if h_c_target_kg is not None and p_h_d <= 0.0:
        stranded = max(0.0, renew_kw - p_r)
        room = (min(h_c_target_kg, hyd.e_max_kg) - e_h) / dt
        if stranded > tol and room > 0.0:
            p_room = _charge_power_for_rate(cc, room, hyd.p_max_kw)
            p_new = min(hc_cap, p_room, p_h_c + stranded)
            if p_new >= c_lo and p_new - p_h_c > tol:
                p_r += p_new - p_h_c
                p_h_c = p_new

    p_l = max(r, 0.0)

    h_c = float(cc.evaluate(p_h_c)) if p_h_c > 0.0 else 0.0
    h_d = float(dc.evaluate(p_h_d)) if p_h_d > 0.0 else 0.0
    e_b_next = min(max(battery_step(spec, e_b, p_b_c, p_b_d), b.e_min_kwh),
                   b.e_max_kwh)
    e_h_next = min(max(hydrogen_step(spec, e_h, h_c, h_d), hyd.e_min_kg),
                   hyd.e_max_kg)
    final = {"p_b_c": p_b_c, "p_b_d": p_b_d, "p_h_c": p_h_c, "p_h_d": p_h_d,
             "p_d": p_d, "p_r": p_r, "p_g": p_g}
    adjusted = tuple(k for k in CHANNELS if abs(final[k] - raw[k]) > 1e-9)
    if forced:
        adjusted = adjusted + ("forced_ramp",)
    return Commitment(p_b_c=p_b_c, p_b_d=p_b_d, p_h_c=p_h_c, p_h_d=p_h_d,
                      p_d=p_d, p_r=p_r, p_g=p_g, p_l=p_l, h_c=h_c, h_d=h_d,
                      e_b_next=e_b_next, e_h_next=e_h_next,
                      adjustments=adjusted)


# --------------------------------------------------------------------------
# forecasting
# --------------------------------------------------------------------------


def persistence_forecast(series: np.ndarray, t: int, horizon: int
                         ) -> np.ndarray:
    """Measured value now, same hour of the latest observed day afterwards.

    Truncates at the end of the series.  Before a full day of history
    exists, future hours repeat the current measurement.
    """
    n = len(series)
    horizon = min(horizon, n - t)
    out = np.empty(horizon)
    for k in range(horizon):
        tau = t + k
        if tau <= t:
            out[k] = series[tau]
            continue
        back = tau - 24 * ((tau - t + 23) // 24)   # latest same-hour index <= t
        out[k] = series[back] if back >= 0 else series[t]
    return out


# --------------------------------------------------------------------------
# rollout result
# --------------------------------------------------------------------------


@dataclass
class RolloutResult:
    method: str
    frame: TrajectoryFrame
    theoretical_cost: float        # what the controller's own model priced
    practical_cost: float          # what the reconciled plant actually cost
    lol_kwh: float
    diesel_kwh: float
    step_costs: np.ndarray         # realized cost per step [$]
    step_ms: np.ndarray            # online decision wall time per step
    rmse_pct: float | None = None  # realized tank SoC vs tracked reference
    regret: float | None = None    # filled by evaluate_methods


class _Plant:
    """Mutable rollout state: storage levels, commitments, timings."""

    def __init__(self, spec: MicrogridSpec, n: int):
        self.spec = spec
        self.e_b = spec.battery.e0_frac * spec.battery.e_max_kwh
        self.e_h = spec.hydrogen.e0_frac * spec.hydrogen.e_max_kg
        self.d_prev = 0.0
        self.frame = TrajectoryFrame.zeros(n)
        self.step_costs = np.zeros(n)
        self.step_ms = np.zeros(n)
        self.t = 0

    def commit(self, scen: ScenarioSeries, proposal: dict,
               h_d_floor_kg: float | None = None,
               h_c_target_kg: float | None = None) -> Commitment:
        t = self.t
        renew = float(scen.solar_kw[t] + scen.wind_kw[t])
        c = reconcile_step(self.spec, float(scen.load_kw[t]), renew, proposal,
                           self.e_b, self.e_h, self.d_prev,
                           h_d_floor_kg=h_d_floor_kg,
                           h_c_target_kg=h_c_target_kg)
        f = self.frame
        for k in CHANNELS:
            getattr(f, k)[t] = getattr(c, k)
        f.p_l[t] = c.p_l
        f.h_c[t] = c.h_c
        f.h_d[t] = c.h_d
        f.e_b[t] = c.e_b_next
        f.e_h[t] = c.e_h_next
        f.seg_c[t] = self._segment(self.spec.charge_curve, c.p_h_c)
        f.seg_d[t] = self._segment(self.spec.discharge_curve, c.p_h_d)
        self.step_costs[t] = stage_cost(self.spec, c.p_d, c.p_l, c.p_b_d,
                                        c.p_h_d, c.p_g)
        self.e_b, self.e_h, self.d_prev = c.e_b_next, c.e_h_next, c.p_d
        self.t += 1
        return c

    @staticmethod
    def _segment(curve: PiecewiseCurve, p: float) -> int:
        lo, hi = curve.domain
        if p <= 1e-9 or p < lo - 1e-9 or p > hi + 1e-9:
            return -1
        return int(curve.segment_of(min(max(p, lo), hi)))


def _best_point_etas(spec: MicrogridSpec) -> tuple[float, float]:
    return (curve_efficiency_bounds(spec.charge_curve, "charge")[1],
            curve_efficiency_bounds(spec.discharge_curve, "discharge")[1])


def _resolve_etas(spec: MicrogridSpec, eta_c: float | None,
                  eta_d: float | None) -> tuple[float, float]:
    best_c, best_d = _best_point_etas(spec)
    return (best_c if eta_c is None else eta_c,
            best_d if eta_d is None else eta_d)


def _proposal_from_plan(tr: TrajectoryFrame, t: int) -> dict:
    return {k: float(getattr(tr, k)[t]) for k in CHANNELS}


# --------------------------------------------------------------------------
# controller loops
# --------------------------------------------------------------------------


def _run_offline(spec, scen, method, plant, solve_options):
    opts = HorizonOptions(efficiency_model=method.efficiency_model)
    if method.efficiency_model == "constant":
        ec, ed = _resolve_etas(spec, method.const_eta_c, method.const_eta_d)
        opts = dataclasses.replace(opts, const_eta_c=ec, const_eta_d=ed)
    res = plan_horizon(spec, scen, opts, solve_options)
    for t in range(scen.n_steps):
        t0 = time.perf_counter()
        plant.commit(scen, _proposal_from_plan(res.trajectory, t))
        plant.step_ms[t] = (time.perf_counter() - t0) * 1e3
    return float(res.cost)


def _run_mpc(spec, scen, method, plant, tracker, solve_options):
    ms = method.mpc
    T = scen.n_steps
    if solve_options is None and method.phi > 0.0:
        # tracking windows are QPs; hourly re-solves want speed over the
        # last digits of the objective
        solve_options = SolveOptions(qp_eps=1e-5, qp_max_iter=4000)
    theoretical = 0.0
    ec = ed = None
    if ms.efficiency_model == "constant":
        ec, ed = _resolve_etas(spec, ms.const_eta_c, ms.const_eta_d)
    tail = None    # second planned step, executed at the final hour
    for t in range(T):
        t0 = time.perf_counter()
        if tracker is not None:
            # the controller has measured the current step; let the tracker
            # see it before the window is shaped
            tracker.update(float(scen.load_kw[t]), float(scen.solar_kw[t]),
                           float(scen.wind_kw[t]))
        floor = target = None
        if method.use_reference:
            ref_t = tracker.blend(t)
            floor = ref_t - method.ref_band_frac * spec.hydrogen.e_max_kg
            target = ref_t
        if T - t < 2:
            # a window needs two steps; the previous window already planned
            # this hour, so execute its stored second step
            proposal, planned = tail
            theoretical += planned
            plant.commit(scen, proposal, h_d_floor_kg=floor,
                         h_c_target_kg=target)
            plant.step_ms[t] = (time.perf_counter() - t0) * 1e3
            continue
        h = max(2, min(ms.horizon_h, T - t))
        if ms.forecast == "perfect":
            window = scen.window(t, t + h)
        else:
            window = ScenarioSeries(
                scen.timestamps[t:t + h],
                persistence_forecast(scen.load_kw, t, h),
                persistence_forecast(scen.solar_kw, t, h),
                persistence_forecast(scen.wind_kw, t, h),
                label=scen.label)
        opts = HorizonOptions(
            efficiency_model=ms.efficiency_model,
            const_eta_c=ec, const_eta_d=ed,
            terminal_soc=(t + h >= T),
            terminal_slack_cost=(spec.costs.c_l if t + h >= T else None),
            terminal_e_b_kwh=spec.battery.e0_kwh,
            terminal_e_h_kg=spec.hydrogen.e0_kg,
            e0_b_kwh=plant.e_b, e0_h_kg=plant.e_h, d0_kw=plant.d_prev)
        if method.use_reference:
            seg_c, seg_d = tracker.schedule_window(t, t + h)
            ref = np.array([tracker.blend(tau) for tau in range(t, t + h)])
            opts = dataclasses.replace(
                opts, fixed_segments=(seg_c, seg_d), phi=method.phi,
                soc_ref=ref)
            if ms.efficiency_model != "piecewise":
                raise ValueError("reference tracking fixes curve segments; "
                                 "window belief must be 'piecewise'")
        res = plan_horizon(spec, window, opts, solve_options)
        tr = res.trajectory
        theoretical += stage_cost(spec, tr.p_d[0], tr.p_l[0], tr.p_b_d[0],
                                  tr.p_h_d[0], tr.p_g[0])
        tail = (_proposal_from_plan(tr, 1),
                stage_cost(spec, tr.p_d[1], tr.p_l[1], tr.p_b_d[1],
                           tr.p_h_d[1], tr.p_g[1]))
        plant.commit(scen, _proposal_from_plan(tr, 0), h_d_floor_kg=floor,
                     h_c_target_kg=target)
        plant.step_ms[t] = (time.perf_counter() - t0) * 1e3
    return theoretical


def _dispatch_scales(spec: MicrogridSpec) -> np.ndarray:
    caps = np.array([
        spec.battery.p_max_kw, spec.battery.p_max_kw,
        min(spec.hydrogen.p_max_kw, spec.charge_curve.domain[1]),
        min(spec.hydrogen.p_max_kw, spec.discharge_curve.domain[1]),
        spec.diesel.p_max_kw,
        spec.solar_cap_kw + spec.wind_cap_kw,
        spec.grid_cap_kw,
    ])
    return np.where(caps > 0.0, caps, 1.0)


def _dispatch_gradient_bound(spec: MicrogridSpec, phi: float,
                             scale: np.ndarray) -> float:
    c, dt = spec.costs, spec.dt_h
    cost_vec = dt * np.array([0.0, c.c_b, 0.0, c.c_h, c.c_d, 0.0, c.c_g])
    bound = float(np.linalg.norm(cost_vec * scale))
    bound += c.c_l * dt * float(np.linalg.norm(scale))
    if phi > 0.0:
        slope = max(spec.charge_curve.slope.max(),
                    spec.discharge_curve.slope.max())
        mask = np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        bound += (2.0 * phi * dt * slope / spec.hydrogen.e_max_kg
                  * float(np.linalg.norm(mask * scale)))
    return bound


def _dispatch_box(spec: MicrogridSpec, plant: _Plant, scale: np.ndarray,
                  floor_kg: float | None = None) -> FeasibleSet:
    b, hyd, dsl = spec.battery, spec.hydrogen, spec.diesel
    dt = spec.dt_h
    ret = b.retention(dt)
    bc = min(b.p_max_kw, max(0.0, (b.e_max_kwh - ret * plant.e_b)
                             / (b.eta_c * dt)))
    bd = min(b.p_max_kw, max(0.0, (ret * plant.e_b - b.e_min_kwh)
                             * b.eta_d / dt))
    hc = _charge_power_for_rate(spec.charge_curve,
                                (hyd.e_max_kg - plant.e_h) / dt,
                                hyd.p_max_kw)
    tank_floor = hyd.e_min_kg
    if floor_kg is not None:
        tank_floor = max(tank_floor, min(floor_kg, hyd.e_max_kg))
    hd = _discharge_power_for_rate(spec.discharge_curve,
                                   (plant.e_h - tank_floor) / dt,
                                   hyd.p_max_kw)
    d_lo = max(dsl.p_min_kw, plant.d_prev - dsl.ramp_kw_per_h * dt)
    d_hi = min(dsl.p_max_kw, plant.d_prev + dsl.ramp_kw_per_h * dt)
    ub = np.array([bc, bd, hc, hd, d_hi,
                   spec.solar_cap_kw + spec.wind_cap_kw,
                   spec.grid_cap_kw]) / scale
    lb = np.zeros(7)
    lb[4] = d_lo / scale[4]
    return FeasibleSet(lb=lb, ub=np.maximum(ub, lb))


def _run_oco(spec, scen, method, plant, tracker, solve_options):
    T = scen.n_steps
    st = method.oco
    scale = _dispatch_scales(spec)
    if solve_options is None:
        # dispatch-grade accuracy: the proximal steps are heuristic moves,
        # so a capped iteration budget beats a tight tolerance
        solve_options = SolveOptions(qp_eps=1e-5, qp_max_iter=600)
    grad_bound = st.grad_bound
    if grad_bound is None:
        grad_bound = _dispatch_gradient_bound(spec, method.phi, scale)
    config = OcoConfig(horizon=max(T, 2), kappa=st.kappa, c=st.c,
                       alpha0=st.alpha0, beta0=st.beta0, gamma0=st.gamma0,
                       grad_bound=grad_bound)
    state = init_ensemble(config, x0=np.zeros(7), n_constraints=3)
    # run one throwaway decision so compiled kernels are warm before the
    # first real step is timed
    warm = init_ensemble(dataclasses.replace(config, horizon=2),
                         x0=np.zeros(7), n_constraints=3)
    ensemble_step(warm, StepFeedback(
        grad_f=np.zeros(7), g_vals=np.zeros(3),
        g_affine=AffineConstraints(np.zeros((3, 7)), np.zeros(3)),
        feasible=FeasibleSet(lb=np.zeros(7), ub=np.ones(7))),
        options=solve_options)
    c, dt = spec.costs, spec.dt_h
    cost_vec = dt * np.array([0.0, c.c_b, 0.0, c.c_h, c.c_d, 0.0, c.c_g])
    x_prev = np.zeros(7)
    e_h_prev = plant.e_h
    for t in range(T):
        t0 = time.perf_counter()
        floor = target = None
        if method.use_reference:
            ref_t = tracker.blend(t)
            floor = ref_t - method.ref_band_frac * spec.hydrogen.e_max_kg
            target = ref_t
        if t > 0:
            load_p = float(scen.load_kw[t - 1])
            renew_p = float(scen.solar_kw[t - 1] + scen.wind_kw[t - 1])
            p_prev = x_prev * scale
            supply = float(_SIGN @ p_prev)
            grad = cost_vec * scale
            if load_p - supply > 0.0:       # shedding was active: its cost
                grad = grad - c.c_l * dt * _SIGN * scale
            if method.phi > 0.0:
                seg_c, seg_d = tracker.schedule(t - 1)
                cc, dc = spec.charge_curve, spec.discharge_curve
                s_c = float(cc.slope[max(int(seg_c), 0)])
                s_d = float(dc.slope[max(int(seg_d), 0)])
                e_pred = e_h_prev + dt * (s_c * p_prev[2] - s_d * p_prev[3])
                dev = (e_pred - tracker.blend(t - 1)) / spec.hydrogen.e_max_kg
                track_vec = np.array([0.0, 0.0, dt * s_c, -dt * s_d,
                                      0.0, 0.0, 0.0]) * scale
                grad = grad + (2.0 * method.phi * dev
                               / spec.hydrogen.e_max_kg) * track_vec
            a = np.vstack([-_SIGN * scale, _SIGN * scale,
                           np.array([0, 0, 0, 0, 0, scale[5], 0.0])])
            bvec = np.array([-load_p, load_p, renew_p])
            feedback = StepFeedback(
                grad_f=grad, g_vals=a @ x_prev - bvec,
                g_affine=AffineConstraints(a, bvec),
                feasible=_dispatch_box(spec, plant, scale, floor))
            x = ensemble_step(state, feedback, options=solve_options)
        else:
            x = np.zeros(7)
        e_h_prev = plant.e_h
        proposal = dict(zip(CHANNELS, x * scale))
        plant.commit(scen, proposal, h_d_floor_kg=floor,
                     h_c_target_kg=target)
        plant.step_ms[t] = (time.perf_counter() - t0) * 1e3
        x_prev = x
        if tracker is not None:
            tracker.update(float(scen.load_kw[t]), float(scen.solar_kw[t]),
                           float(scen.wind_kw[t]))
    return float(np.sum(plant.step_costs))


# --------------------------------------------------------------------------
# harness
# --------------------------------------------------------------------------


def run_rollout(spec: MicrogridSpec, scen: ScenarioSeries,
                method: MethodConfig, *, refset: ReferenceSet | None = None,
                library: list[ScenarioSeries] | None = None,
                sigma: float = 1.0,
                solve_options: SolveOptions | None = None) -> RolloutResult:
    """Run one method over the scenario and return realized accounting."""
    if method.use_reference and (refset is None or library is None):
        raise ValueError(
            f"method {method.name!r} tracks a reference; pass refset and "
            f"library")
    T = scen.n_steps
    plant = _Plant(spec, T)
    tracker = None
    report_tracker = None
    if refset is not None and library is not None:
        tracker = KernelTracker(refset, library, spec, sigma=sigma)
        report_tracker = KernelTracker(refset, library, spec, sigma=sigma)

    # reference path as it was visible online (for uniform reporting)
    ref_path = np.full(T, np.nan)
    if report_tracker is not None:
        for t in range(T):
            ref_path[t] = report_tracker.blend(t)
            report_tracker.update(float(scen.load_kw[t]),
                                  float(scen.solar_kw[t]),
                                  float(scen.wind_kw[t]))

    control_tracker = tracker if method.use_reference else None
    if method.planner == "offline":
        theoretical = _run_offline(spec, scen, method, plant, solve_options)
    elif method.planner == "mpc":
        theoretical = _run_mpc(spec, scen, method, plant, control_tracker,
                               solve_options)
    else:
        theoretical = _run_oco(spec, scen, method, plant, control_tracker,
                               solve_options)

    rmse_pct = None
    if report_tracker is not None:
        dev = plant.frame.e_h - ref_path
        rmse_pct = float(100.0 * np.sqrt(np.mean(dev ** 2))
                         / spec.hydrogen.e_max_kg)
    return RolloutResult(
        method=method.name,
        frame=plant.frame,
        theoretical_cost=float(theoretical),
        practical_cost=float(np.sum(plant.step_costs)),
        lol_kwh=float(np.sum(plant.frame.p_l) * spec.dt_h),
        diesel_kwh=float(np.sum(plant.frame.p_d) * spec.dt_h),
        step_costs=plant.step_costs,
        step_ms=plant.step_ms,
        rmse_pct=rmse_pct,
    )


def evaluate_methods(spec: MicrogridSpec, scen: ScenarioSeries,
                     methods: list[MethodConfig], *,
                     refset: ReferenceSet | None = None,
                     library: list[ScenarioSeries] | None = None,
                     sigma: float = 1.0,
                     solve_options: SolveOptions | None = None
                     ) -> list[RolloutResult]:
    """Run several methods on the same scenario; regret is measured against
    the first offline method's realized step costs."""
    results = [run_rollout(spec, scen, m, refset=refset, library=library,
                           sigma=sigma, solve_options=solve_options)
               for m in methods]
    benchmark = next((r for r, m in zip(results, methods)
                      if m.planner == "offline"), None)
    if benchmark is not None:
        for r in results:
            if r is benchmark:
                continue
            r.regret = compute_regret(r.step_costs,
                                      benchmark.step_costs).regret
    return results
