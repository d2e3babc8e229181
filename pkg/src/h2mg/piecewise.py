"""Piecewise-linear approximation of the hydrogen conversion curves.

A fitted curve is a list of contiguous segments ``rate = slope * p +
intercept`` on power intervals ``[p_lo, p_hi]``.  Fitting minimizes
least-squares error on curve samples in two stages:

1. dynamic programming over breakpoint positions restricted to the sample
   grid (optimal segmented regression with free, discontinuous segments);
2. a continuous refit on the chosen knots with a hat-function basis, which
   restores exact value continuity at the breakpoints.

Candidate segment counts ``k = 1 .. n_segments`` are all refit and the
best RMSE wins; if the winner uses fewer than ``n_segments`` pieces, the
widest pieces are split at their midpoints (the split leaves the function
unchanged, so the padding is free).  Charging curves are clamped
non-negative; discharge curves can be pinned through the origin.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import electrochem

DIRECTIONS = ("charge", "discharge")

#: breakpoint continuity tolerance [kg/h]
CONTINUITY_TOL = 1e-6
#: slack allowed when evaluating at the domain edges [kW]
DOMAIN_TOL = 1e-9


@dataclass
class PiecewiseCurve:
    """Continuous piecewise-linear map from power [kW] to H2 rate [kg/h].

    ``direction`` is "charge" (power to stored hydrogen, electrolyzer) or
    "discharge" (consumed hydrogen for delivered power, fuel cell).
    Segments must tile a contiguous power interval and agree at shared
    breakpoints to within ``CONTINUITY_TOL``.
    """

    p_lo: np.ndarray
    p_hi: np.ndarray
    slope: np.ndarray
    intercept: np.ndarray
    direction: str
    fit_rmse: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.p_lo = np.atleast_1d(np.asarray(self.p_lo, dtype=float))
        self.p_hi = np.atleast_1d(np.asarray(self.p_hi, dtype=float))
        self.slope = np.atleast_1d(np.asarray(self.slope, dtype=float))
        self.intercept = np.atleast_1d(np.asarray(self.intercept, dtype=float))
        n = len(self.p_lo)
        if not (len(self.p_hi) == len(self.slope) == len(self.intercept) == n) or n == 0:
            raise ValueError("segment arrays must be non-empty and of equal length")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if np.any(self.p_hi - self.p_lo <= 0):
            raise ValueError("every segment needs p_hi > p_lo")
        if np.any(np.abs(self.p_hi[:-1] - self.p_lo[1:]) > DOMAIN_TOL):
            raise ValueError("segments must tile a contiguous power interval")
        left = self.slope[1:] * self.p_hi[:-1] + self.intercept[1:]
        right = self.slope[:-1] * self.p_hi[:-1] + self.intercept[:-1]
        if np.any(np.abs(left - right) > CONTINUITY_TOL):
            raise ValueError("segment values disagree at a breakpoint")
        if not (np.all(np.isfinite(self.slope)) and np.all(np.isfinite(self.intercept))):
            raise ValueError("non-finite segment coefficients")

    @property
    def n_segments(self) -> int:
        return len(self.p_lo)

    @property
    def domain(self) -> tuple[float, float]:
        """Power interval [kW] covered by the curve."""
        return float(self.p_lo[0]), float(self.p_hi[-1])

    def segment_of(self, p) -> np.ndarray | int:
        """Index of the segment containing power ``p`` [kW].

        Breakpoints belong to the left segment; the domain edges tolerate
        ``DOMAIN_TOL`` of overshoot.  Raises ValueError outside the domain.
        """
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        lo, hi = self.domain
        if np.any(p_arr < lo - DOMAIN_TOL) or np.any(p_arr > hi + DOMAIN_TOL):
            raise ValueError(f"power outside curve domain [{lo:g}, {hi:g}] kW")
        idx = np.searchsorted(self.p_hi, p_arr, side="left")
        idx = np.clip(idx, 0, self.n_segments - 1)
        return idx if np.ndim(p) else int(idx[0])

    def evaluate(self, p):
        """Hydrogen rate [kg/h] at power ``p`` [kW] (scalar or array)."""
        idx = np.atleast_1d(self.segment_of(p))
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        val = self.slope[idx] * p_arr + self.intercept[idx]
        return val if np.ndim(p) else float(val[0])

    def node_values(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoint powers and rates: arrays of length n_segments + 1."""
        xs = np.concatenate([self.p_lo, self.p_hi[-1:]])
        ys = np.concatenate([self.slope * self.p_lo + self.intercept,
                             [self.slope[-1] * self.p_hi[-1] + self.intercept[-1]]])
        return xs, ys

    def invert(self, rate) -> float:
        """Power [kW] at which the curve attains ``rate`` [kg/h].

        Requires the curve to be strictly increasing (true for both
        conversion directions); raises ValueError outside the rate range.
        """
        xs, ys = self.node_values()
        if np.any(np.diff(ys) <= 0):
            raise ValueError("curve is not strictly increasing; cannot invert")
        r = float(rate)
        if r < ys[0] - CONTINUITY_TOL or r > ys[-1] + CONTINUITY_TOL:
            raise ValueError(f"rate {r:g} outside curve range [{ys[0]:g}, {ys[-1]:g}]")
        r = min(max(r, ys[0]), ys[-1])
        k = int(np.clip(np.searchsorted(ys, r, side="left") - 1, 0, self.n_segments - 1))
        if self.slope[k] <= 0:
            raise ValueError("non-increasing segment encountered during inversion")
        return float((r - self.intercept[k]) / self.slope[k])


def _interval_sse(x: np.ndarray, y: np.ndarray):
    """SSE table of independent OLS lines on every sample range [i..j].

    Returns ``sse`` with ``sse[i, j]`` the least-squares error of a single
    line fit to samples i..j inclusive (j > i); entries j <= i are 0.
    Prefix sums make each entry O(1); data are centered first to limit
    cancellation error.
    """
    n = len(x)
    xc = x - x.mean()
    yc = y - y.mean()
    z = np.zeros(1)
    cx = np.concatenate([z, np.cumsum(xc)])
    cy = np.concatenate([z, np.cumsum(yc)])
    cxx = np.concatenate([z, np.cumsum(xc * xc)])
    cyy = np.concatenate([z, np.cumsum(yc * yc)])
    cxy = np.concatenate([z, np.cumsum(xc * yc)])

    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    cnt = (j - i + 1).astype(float)
    sx = cx[j + 1] - cx[i]
    sy = cy[j + 1] - cy[i]
    sxx = cxx[j + 1] - cxx[i]
    syy = cyy[j + 1] - cyy[i]
    sxy = cxy[j + 1] - cxy[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = cnt * sxx - sx * sx
        a = np.where(denom > 0, (cnt * sxy - sx * sy) / np.where(denom > 0, denom, 1.0), 0.0)
        b = (sy - a * sx) / cnt
    sse = syy + a * a * sxx + cnt * b * b + 2 * a * b * sx - 2 * a * sxy - 2 * b * sy
    sse = np.where(j > i, np.maximum(sse, 0.0), 0.0)
    return sse


def _dp_breakpoints(x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Optimal shared-endpoint breakpoint indices for k segments.

    Segments are sample ranges [b_{r-1}..b_r] with b_0 = 0 and b_k = n-1;
    adjacent segments share their boundary sample.  Returns the index
    array b of length k+1.
    """
    n = len(x)
    sse = _interval_sse(x, y)
    # dp[r, j]: best cost of covering samples 0..j with r segments.
    dp = np.full((k + 1, n), np.inf)
    arg = np.zeros((k + 1, n), dtype=int)
    dp[1, 1:] = sse[0, 1:]
    for r in range(2, k + 1):
        # predecessor i is the shared boundary sample: segment r covers i..j.
        for jj in range(r, n):
            cand = dp[r - 1, r - 1:jj] + sse[r - 1:jj, jj]
            best = int(np.argmin(cand))
            dp[r, jj] = cand[best]
            arg[r, jj] = best + r - 1
    b = np.empty(k + 1, dtype=int)
    b[k] = n - 1
    for r in range(k, 1, -1):
        b[r - 1] = arg[r, b[r]]
    b[0] = 0
    return b


def _refit_nodes(x: np.ndarray, y: np.ndarray, knots: np.ndarray,
                 pin_first: float | None = None):
    """Least-squares node values on fixed knots with a hat-function basis.

    Returns ``(values, rmse)``.  ``pin_first`` fixes the value at the first
    knot (used to pin discharge curves through the origin).
    """
    m = len(knots)
    design = np.zeros((len(x), m))
    seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, m - 2)
    width = knots[seg + 1] - knots[seg]
    w_hi = (x - knots[seg]) / width
    rows = np.arange(len(x))
    design[rows, seg] = 1.0 - w_hi
    design[rows, seg + 1] = w_hi
    if pin_first is None:
        values, *_ = np.linalg.lstsq(design, y, rcond=None)
    else:
        target = y - design[:, 0] * pin_first
        rest, *_ = np.linalg.lstsq(design[:, 1:], target, rcond=None)
        values = np.concatenate([[pin_first], rest])
    resid = design @ values - y
    return values, float(np.sqrt(np.mean(resid**2)))


def _nodes_to_curve(knots: np.ndarray, values: np.ndarray, direction: str,
                    rmse: float | None) -> PiecewiseCurve:
    slope = np.diff(values) / np.diff(knots)
    intercept = values[:-1] - slope * knots[:-1]
    return PiecewiseCurve(knots[:-1], knots[1:], slope, intercept, direction,
                          fit_rmse=rmse)


def fit_piecewise(powers, rates, n_segments: int, direction: str,
                  pin_origin: bool = False) -> PiecewiseCurve:
    """Fit a continuous piecewise-linear curve to conversion samples.

    Parameters
    ----------
    powers, rates : array-like
        Strictly increasing powers [kW] and the sampled rates [kg/h].
    n_segments : int
        Exact number of segments of the returned curve.
    direction : str
        "charge" or "discharge"; charging fits are clamped non-negative.
    pin_origin : bool
        Force the curve through (powers[0], 0); used for discharge curves
        whose first sample is the physical off point.

    Raises ValueError when there are fewer than ``2 * n_segments`` samples
    or the powers are not strictly increasing.
    """
    x = np.asarray(powers, dtype=float)
    y = np.asarray(rates, dtype=float)
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("powers and rates must be 1-D arrays of equal length")
    if len(x) < 2 * n_segments:
        raise ValueError(f"need at least {2 * n_segments} samples for "
                         f"{n_segments} segments, got {len(x)}")
    if np.any(np.diff(x) <= 0):
        raise ValueError("powers must be strictly increasing")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples contain non-finite values")

    pin = float(y[0]) if pin_origin else None
    best = None
    for k in range(1, n_segments + 1):
        b = _dp_breakpoints(x, y, k)
        knots = x[b]
        values, rmse = _refit_nodes(x, y, knots, pin)
        if direction == "charge":
            clipped = np.maximum(values, 0.0)
            if np.any(clipped != values):
                values = clipped
                design_resid = _piecewise_eval(knots, values, x) - y
                rmse = float(np.sqrt(np.mean(design_resid**2)))
        if best is None or rmse < best[2] - 1e-15:
            best = (knots.copy(), values.copy(), rmse)

    knots, values, rmse = best
    # Pad to exactly n_segments by splitting the widest pieces at their
    # midpoint; the function (and hence the RMSE) is unchanged.
    while len(knots) - 1 < n_segments:
        widths = np.diff(knots)
        k = int(np.argmax(widths))
        mid = 0.5 * (knots[k] + knots[k + 1])
        v_mid = values[k] + (values[k + 1] - values[k]) * 0.5
        knots = np.insert(knots, k + 1, mid)
        values = np.insert(values, k + 1, v_mid)
    return _nodes_to_curve(knots, values, direction, rmse)


def _piecewise_eval(knots: np.ndarray, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    seg = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(knots) - 2)
    w = (x - knots[seg]) / (knots[seg + 1] - knots[seg])
    return values[seg] * (1 - w) + values[seg + 1] * w


def fit_charge_curve(params: electrochem.ElectrolyzerParams | None = None,
                     n_segments: int = 4, n_samples: int = 256) -> PiecewiseCurve:
    """Sample the electrolyzer model and fit its charging curve."""
    params = params or electrochem.DEFAULT_ELECTROLYZER
    powers, rates = electrochem.sample_charge_curve(params, n_samples)
    return fit_piecewise(powers, rates, n_segments, "charge")


def fit_discharge_curve(params: electrochem.FuelCellParams | None = None,
                        n_segments: int = 4, n_samples: int = 256) -> PiecewiseCurve:
    """Sample the fuel cell model and fit its discharging curve.

    The curve is pinned through the origin: zero power consumes no
    hydrogen, which the dispatch model relies on when the unit is off.
    """
    params = params or electrochem.DEFAULT_FUELCELL
    powers, rates = electrochem.sample_discharge_curve(params, n_samples)
    return fit_piecewise(powers, rates, n_segments, "discharge", pin_origin=True)


CURVE_CSV_HEADER = ["p_lo", "p_hi", "slope", "intercept", "direction"]


def curve_to_csv(curve: PiecewiseCurve) -> str:
    """Serialize a curve to CSV text (header ``p_lo,p_hi,slope,intercept,direction``)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_CSV_HEADER)
    for k in range(curve.n_segments):
        w.writerow([f"{curve.p_lo[k]:.17g}", f"{curve.p_hi[k]:.17g}",
                    f"{curve.slope[k]:.17g}", f"{curve.intercept[k]:.17g}",
                    curve.direction])
    return buf.getvalue()


def curve_from_csv(text: str) -> PiecewiseCurve:
    """Parse a curve from CSV text produced by :func:`curve_to_csv`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CURVE_CSV_HEADER:
        raise ValueError(f"expected header {','.join(CURVE_CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError("curve CSV has no segments")
    direction = body[0][4]
    if any(r[4] != direction for r in body):
        raise ValueError("mixed directions in one curve CSV")
    cols = np.array([[float(v) for v in r[:4]] for r in body])
    return PiecewiseCurve(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], direction)
