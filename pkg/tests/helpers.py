"""Shared builders for small test instances."""

import numpy as np

from h2mg.grid import BatteryParams, HydrogenParams, MicrogridSpec, ScenarioSeries
from h2mg.piecewise import PiecewiseCurve


def charge2() -> PiecewiseCurve:
    # concave two-piece rate curve, continuous at 25 kW (0.4 kg/h)
    return PiecewiseCurve(p_lo=np.array([0.0, 25.0]), p_hi=np.array([25.0, 50.0]),
                          slope=np.array([0.016, 0.012]),
                          intercept=np.array([0.0, 0.1]),
                          direction="charge", fit_rmse=0.0)


def discharge2() -> PiecewiseCurve:
    # convex two-piece consumption curve through the origin (0.84 kg/h at 20 kW)
    return PiecewiseCurve(p_lo=np.array([0.0, 20.0]), p_hi=np.array([20.0, 50.0]),
                          slope=np.array([0.042, 0.055]),
                          intercept=np.array([0.0, -0.26]),
                          direction="discharge", fit_rmse=0.0)


def small_spec(**over) -> MicrogridSpec:
    kw = dict(battery=BatteryParams(e_max_kwh=30.0),
              hydrogen=HydrogenParams(e_max_kg=40.0),
              charge_curve=charge2(), discharge_curve=discharge2())
    kw.update(over)
    return MicrogridSpec(**kw)


def scenario(load, solar=None, wind=None, start="2023-01-01",
             step_s=3600, label="test") -> ScenarioSeries:
    load = np.asarray(load, dtype=float)
    n = len(load)
    ts = np.datetime64(start, "s") + np.arange(n) * np.timedelta64(step_s, "s")
    z = np.zeros(n)
    return ScenarioSeries(ts, load,
                          z if solar is None else np.asarray(solar, float),
                          z if wind is None else np.asarray(wind, float),
                          label=label)
