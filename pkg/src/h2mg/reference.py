"""Offline storage references and online scenario tracking.

Long-term hydrogen management needs a seasonal target: for each library
scenario (a plausible year of load/solar/wind) the horizon optimizer
produces the optimal hydrogen state-of-charge path and conversion
segment schedule.  Online, the dispatcher cannot know which scenario the
running year resembles, so a Gaussian kernel regression over the
observed history weights the library:

    omega_s(t)  ∝  exp( - d2_s(t) / (t * sigma^2) )

where d2_s(t) is the accumulated squared distance between the observed
exogenous channels and scenario s's channels (each normalized by its
nameplate capacity), t is the number of observed steps, and sigma is the
kernel bandwidth.  The blended reference sum_s omega_s * e_h_s[t] feeds
the online dispatcher's tracking term; the argmax scenario's segment
schedule gives a receding-horizon controller its conversion segments.

All updates are O(S) per step via running accumulators; a batch form of
the same weights exists purely as a cross-check.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .grid import (HorizonOptions, MicrogridSpec, PlanResult, ScenarioSeries,
                   plan_horizon)
from .solver import SolveOptions

QUARTER_OF_MONTH = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3])


@dataclass
class ReferenceSet:
    """Per-scenario optimal hydrogen paths and segment schedules."""

    labels: list[str]
    e_h_kg: np.ndarray          # (S, T) end-of-step hydrogen mass
    seg_c: np.ndarray           # (S, T) charge segment index, -1 = off
    seg_d: np.ndarray           # (S, T) discharge segment index, -1 = off

    def __post_init__(self):
        self.e_h_kg = np.asarray(self.e_h_kg, dtype=float)
        self.seg_c = np.asarray(self.seg_c, dtype=int)
        self.seg_d = np.asarray(self.seg_d, dtype=int)
        s, t = self.e_h_kg.shape
        if len(self.labels) != s:
            raise ValueError("label count does not match reference rows")
        if self.seg_c.shape != (s, t) or self.seg_d.shape != (s, t):
            raise ValueError("segment schedules do not match reference shape")

    @property
    def n_scenarios(self) -> int:
        return self.e_h_kg.shape[0]

    @property
    def n_steps(self) -> int:
        return self.e_h_kg.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scenario", "t", "e_h_kg", "seg_c", "seg_d"))
        for s, label in enumerate(self.labels):
            for t in range(self.n_steps):
                w.writerow((label, t, f"{self.e_h_kg[s, t]:.17g}",
                            self.seg_c[s, t], self.seg_d[s, t]))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReferenceSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["scenario", "t", "e_h_kg", "seg_c", "seg_d"]:
            raise ValueError("unrecognized reference CSV header")
        labels: list[str] = []
        data: dict[str, list[tuple[int, float, int, int]]] = {}
        for rec in rows[1:]:
            if not rec:
                continue
            label = rec[0]
            if label not in data:
                labels.append(label)
                data[label] = []
            data[label].append((int(rec[1]), float(rec[2]), int(rec[3]),
                                int(rec[4])))
        n_steps = len(data[labels[0]])
        e_h = np.zeros((len(labels), n_steps))
        seg_c = np.zeros((len(labels), n_steps), dtype=int)
        seg_d = np.zeros((len(labels), n_steps), dtype=int)
        for s, label in enumerate(labels):
            recs = sorted(data[label])
            if len(recs) != n_steps:
                raise ValueError("scenario blocks have unequal lengths")
            for t, e, sc, sd in recs:
                e_h[s, t] = e
                seg_c[s, t] = sc
                seg_d[s, t] = sd
        return cls(labels, e_h, seg_c, seg_d)


def generate_offline_references(spec: MicrogridSpec,
                                scenarios: list[ScenarioSeries],
                                solve_options: SolveOptions | None = None,
                                exact_step_limit: int = 16,
                                ) -> tuple[ReferenceSet, list[PlanResult]]:
    """Optimal hydrogen path and segment schedule per library scenario."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    t_count = scenarios[0].n_steps
    plans = []
    for scen in scenarios:
        if scen.n_steps != t_count:
            raise ValueError("library scenarios must share a time grid")
        plan = plan_horizon(spec, scen, HorizonOptions(),
                            solve_options=solve_options,
                            exact_step_limit=exact_step_limit)
        if plan.trajectory.n_steps != t_count or not np.isfinite(plan.objective):
            raise RuntimeError(f"reference plan failed for {scen.label!r}: "
                               f"{plan.status.value}")
        plans.append(plan)
    refset = ReferenceSet(
        labels=[s.label for s in scenarios],
        e_h_kg=np.stack([p.trajectory.e_h for p in plans]),
        seg_c=np.stack([p.trajectory.seg_c for p in plans]),
        seg_d=np.stack([p.trajectory.seg_d for p in plans]))
    return refset, plans


def make_scenario_library(base: ScenarioSeries, n_variants: int,
                          amplitude: float = 0.3, seed: int = 0
                          ) -> list[ScenarioSeries]:
    """Base scenario plus seeded quarterly-rescaled variants.

    Each variant multiplies every channel by a per-quarter factor drawn
    uniformly from [1 - amplitude, 1 + amplitude]; seasonal shape is
    preserved within quarters while annual budgets shift.
    """
    if not (0.0 <= amplitude < 1.0):
        raise ValueError("amplitude must be in [0, 1)")
    rng = np.random.default_rng(seed)
    months = base.months()                       # 1..12
    quarter = QUARTER_OF_MONTH[months - 1]       # 0..3 per step
    out = [base]
    for v in range(n_variants):
        factors = rng.uniform(1.0 - amplitude, 1.0 + amplitude, size=(3, 4))
        out.append(ScenarioSeries(
            base.timestamps,
            base.load_kw * factors[0, quarter],
            base.solar_kw * factors[1, quarter],
            base.wind_kw * factors[2, quarter],
            label=f"{base.label or 'base'}-v{v + 1}"))
    return out


def _normalized_channels(scen: ScenarioSeries, spec: MicrogridSpec) -> np.ndarray:
    """(T, 3) channel matrix scaled by nameplate capacities."""
    caps = np.array([max(spec.load_cap_kw, 1e-9),
                     max(spec.solar_cap_kw, 1e-9),
                     max(spec.wind_cap_kw, 1e-9)])
    return np.stack([scen.load_kw, scen.solar_kw, scen.wind_kw], axis=1) / caps


def kernel_weights(d2: np.ndarray, m: int, sigma: float) -> np.ndarray:
    """Gaussian scenario weights from accumulated squared distances.

    Uses the max-shift trick so arbitrarily large distances stay finite;
    with no observations yet (m == 0) the weights are uniform.
    """
    d2 = np.asarray(d2, dtype=float)
    if m <= 0:
        return np.full(len(d2), 1.0 / len(d2))
    expo = -(d2 - d2.min()) / (m * sigma * sigma)
    w = np.exp(expo)
    return w / w.sum()


class KernelTracker:
    """Online scenario weighting against a reference library.

    ``blend(t)`` and ``schedule(t)`` use only observations fed through
    ``update`` so far, which keeps the tracker prediction-free: ask for
    step t's reference first, then feed step t's realized channels.
    """

    def __init__(self, refset: ReferenceSet, library: list[ScenarioSeries],
                 spec: MicrogridSpec, sigma: float = 1.0):
        if len(library) != refset.n_scenarios:
            raise ValueError("library size does not match the reference set")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        for scen in library:
            if scen.n_steps != refset.n_steps:
                raise ValueError("library scenario length does not match "
                                 "the reference set")
        self.refset = refset
        self.sigma = float(sigma)
        self._channels = np.stack([_normalized_channels(s, spec)
                                   for s in library])   # (S, T, 3)
        self._caps = np.array([max(spec.load_cap_kw, 1e-9),
                               max(spec.solar_cap_kw, 1e-9),
                               max(spec.wind_cap_kw, 1e-9)])
        self.d2 = np.zeros(refset.n_scenarios)
        self.m = 0

    def weights(self) -> np.ndarray:
        return kernel_weights(self.d2, self.m, self.sigma)

    def blend(self, t: int) -> float:
        """Weighted reference hydrogen mass [kg] for step t."""
        return float(self.weights() @ self.refset.e_h_kg[:, t])

    def blend_path(self) -> np.ndarray:
        """Current weighted reference over the whole horizon."""
        return self.weights() @ self.refset.e_h_kg

    def schedule(self, t: int) -> tuple[int, int]:
        """Segment pair (charge, discharge) of the max-weight scenario."""
        s = int(np.argmax(self.weights()))
        return int(self.refset.seg_c[s, t]), int(self.refset.seg_d[s, t])

    def schedule_window(self, t0: int, t1: int) -> tuple[np.ndarray, np.ndarray]:
        s = int(np.argmax(self.weights()))
        return (self.refset.seg_c[s, t0:t1].copy(),
                self.refset.seg_d[s, t0:t1].copy())

    def update(self, load_kw: float, solar_kw: float, wind_kw: float) -> None:
        """Fold one realized step into the running distances."""
        if self.m >= self.refset.n_steps:
            raise ValueError("tracker has already consumed the full horizon")
        obs = np.array([load_kw, solar_kw, wind_kw]) / self._caps
        diff = self._channels[:, self.m, :] - obs
        self.d2 += np.einsum("sc,sc->s", diff, diff)
        self.m += 1


def batch_weights(refset: ReferenceSet, library: list[ScenarioSeries],
                  spec: MicrogridSpec, observed: ScenarioSeries, m: int,
                  sigma: float) -> np.ndarray:
    """Weights recomputed from scratch on the first ``m`` observed steps.

    Cross-check twin of :class:`KernelTracker`: both must agree exactly.
    """
    obs = _normalized_channels(observed, spec)[:m]
    d2 = np.zeros(len(library))
    for s, scen in enumerate(library):
        diff = _normalized_channels(scen, spec)[:m] - obs
        d2[s] = float(np.sum(diff * diff))
    return kernel_weights(d2, m, sigma)


def reference_rmse(pred: np.ndarray, truth: np.ndarray,
                   cap_kg: float | None = None) -> float:
    """Root mean squared error; in percent of capacity when cap given."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("shape mismatch")
    rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
    if cap_kg is not None:
        return 100.0 * rmse / cap_kg
    return rmse


def tracked_reference_path(refset: ReferenceSet, library: list[ScenarioSeries],
                           spec: MicrogridSpec, observed: ScenarioSeries,
                           sigma: float) -> np.ndarray:
    """Reference path produced by running the tracker along ``observed``."""
    tracker = KernelTracker(refset, library, spec, sigma)
    path = np.zeros(observed.n_steps)
    for t in range(observed.n_steps):
        path[t] = tracker.blend(t)
        tracker.update(observed.load_kw[t], observed.solar_kw[t],
                       observed.wind_kw[t])
    return path


def select_bandwidth(refset: ReferenceSet, library: list[ScenarioSeries],
                     spec: MicrogridSpec, validation: ScenarioSeries,
                     validation_ref: np.ndarray,
                     log10_bounds: tuple[float, float] = (-2.0, 2.0),
                     coarse: int = 9, refine_iters: int = 24) -> float:
    """Kernel bandwidth minimizing tracked-reference RMSE on a held-out year.

    Deterministic: coarse log-spaced sweep, then golden-section descent
    inside the bracket around the best coarse point.
    """
    lo, hi = log10_bounds

    def rmse_of(log_sigma: float) -> float:
        path = tracked_reference_path(refset, library, spec, validation,
                                      10.0 ** log_sigma)
        return reference_rmse(path, validation_ref)

    grid = np.linspace(lo, hi, coarse)
    vals = [rmse_of(g) for g in grid]
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, coarse - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = rmse_of(c), rmse_of(d)
    for _ in range(refine_iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = rmse_of(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = rmse_of(d)
    best = (a + b) / 2.0
    return float(10.0 ** best)
