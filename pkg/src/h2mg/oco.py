"""Prediction-free online dispatch with virtual-queue proximal experts.

A bank of parallel learners shares one stream of delayed feedback: after a
decision is committed, the previous step's cost subgradient and constraint
values are revealed.  Each learner runs a proximal first-order step at its
own learning rate, pricing time-varying constraints through a per-expert
virtual queue -- a dual-variable surrogate that only ever grows when
constraints are violated.  An exponential-weight meta-learner blends the
experts into the committed decision, so the ensemble adapts its effective
step size to the (unknown) drift of the problem.

The inner per-expert problem

    min_{x in X}  alpha <grad, x> + alpha beta <Q, [g(x)]_+> + ||x - x_prev||^2

is solved exactly through a slack reformulation (s >= 0, s >= g(x)) which is
tight because the queue Q is componentwise nonnegative.

A drifting synthetic quadratic stream plus a regret benchmark are included
so sublinearity of the ensemble's dynamic regret can be measured end to end.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .solver import ProgramBuilder, SolveOptions, SolveStatus, solve_qp

logger = logging.getLogger(__name__)

__all__ = [
    "OcoConfig", "FeasibleSet", "AffineConstraints", "StepFeedback",
    "ExpertState", "EnsembleState", "RegretReport", "RegretPoint",
    "StreamRunResult", "DriftingQuadraticStream",
    "initial_weights", "init_ensemble", "update_virtual_queue",
    "expert_decision", "update_expert_weights", "aggregate_decision",
    "ensemble_step", "compute_regret", "estimate_gradient_bound",
    "run_stream", "run_regret_benchmark", "regret_slope",
]


# ---------------------------------------------------------------------------
# configuration


def initial_weights(m: int) -> np.ndarray:
    """Seed weights (m+1)/[i(i+1)m]: sum to one, favour fast learners."""
    if m < 1:
        raise ValueError(f"need at least one expert, got {m}")
    i = np.arange(1, m + 1, dtype=float)
    return (m + 1.0) / (i * (i + 1.0) * m)


@dataclass
class OcoConfig:
    """Horizon, learning-rate ladder and weight decay for the ensemble.

    ``alpha(i, t) = alpha0 * 2^(i-1) / t^c`` spaces the experts one octave
    apart; ``beta(i, t) = beta0 / sqrt(alpha(i, t))`` couples the queue
    pressure to the step size; ``gamma = gamma0 / horizon^c`` damps the
    meta-learner.  ``gamma0`` must stay below ``1/(sqrt(2) * grad_bound)``
    (defaults to half that cap); ``grad_bound`` is an estimate of the
    largest cost-subgradient norm, see :func:`estimate_gradient_bound`.
    """

    horizon: int
    kappa: float = 0.5
    c: float = 0.5
    alpha0: float = 1.0
    beta0: float = 1.0
    gamma0: float | None = None
    grad_bound: float = 1.0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        if not 0.0 <= self.kappa <= self.c:
            raise ValueError(f"kappa must lie in [0, c]={self.c}, got {self.kappa}")
        if self.alpha0 <= 0.0 or self.beta0 <= 0.0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.grad_bound <= 0.0:
            raise ValueError(f"grad_bound must be positive, got {self.grad_bound}")
        cap = 1.0 / (math.sqrt(2.0) * self.grad_bound)
        if self.gamma0 is None:
            self.gamma0 = 0.5 * cap
        if not 0.0 < self.gamma0 < cap:
            raise ValueError(
                f"gamma0 must lie in (0, {cap:.6g}) for grad_bound="
                f"{self.grad_bound}, got {self.gamma0}")

    @property
    def n_experts(self) -> int:
        return int(math.floor(self.kappa * math.log2(1.0 + self.horizon))) + 1

    @property
    def gamma(self) -> float:
        return self.gamma0 / self.horizon ** self.c

    def alpha(self, i: int, t: int) -> float:
        """Step size of expert ``i`` (1-based) at step ``t`` (1-based)."""
        return self.alpha0 * 2.0 ** (i - 1) / t ** self.c

    def beta(self, i: int, t: int) -> float:
        """Queue gain of expert ``i`` at step ``t``."""
        return self.beta0 / math.sqrt(self.alpha(i, t))

    def initial_weights(self) -> np.ndarray:
        return initial_weights(self.n_experts)


# ---------------------------------------------------------------------------
# feedback model


@dataclass
class FeasibleSet:
    """Static decision set: a box plus optional fixed linear rows.

    Lower bounds must be finite (the QP solver requires it); upper bounds
    may be infinite.  ``a_eq x == b_eq`` and ``a_ub x <= b_ub`` hold at
    every step regardless of the observed data.
    """

    lb: np.ndarray
    ub: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.lb.ndim != 1 or self.lb.shape != self.ub.shape:
            raise ValueError("lb and ub must be 1-D arrays of equal length")
        if np.any(~np.isfinite(self.lb)):
            raise ValueError("all lower bounds must be finite")
        if np.any(self.ub < self.lb):
            raise ValueError("ub < lb for some coordinate")
        for a_name, b_name in (("a_eq", "b_eq"), ("a_ub", "b_ub")):
            a, b = getattr(self, a_name), getattr(self, b_name)
            if (a is None) != (b is None):
                raise ValueError(f"{a_name} and {b_name} must come together")
            if a is None:
                continue
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            if a.ndim != 2 or b.ndim != 1 or a.shape != (b.size, self.n):
                raise ValueError(f"{a_name} must be ({b_name} rows, {self.n}) matrix")
            setattr(self, a_name, a)
            setattr(self, b_name, b)

    @property
    def n(self) -> int:
        return self.lb.size


@dataclass
class AffineConstraints:
    """Rows of an affine constraint function g(x) = a x - b (g <= 0 wanted)."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.ndim != 2 or self.b.ndim != 1 or self.a.shape[0] != self.b.size:
            raise ValueError("need a (k, n) matrix with a k-vector offset")

    @property
    def n_rows(self) -> int:
        return self.b.size

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.a @ x - self.b


@dataclass
class StepFeedback:
    """What the previous step reveals once its observation arrives.

    ``grad_f`` is the cost subgradient at the committed decision;
    ``g_vals`` the time-varying constraint values there (they feed the
    queues); ``g_affine`` the full affine description of those constraints
    (it feeds the inner proximal problem); ``feasible`` the static set.
    """

    grad_f: np.ndarray
    g_vals: np.ndarray
    g_affine: AffineConstraints
    feasible: FeasibleSet

    def __post_init__(self) -> None:
        self.grad_f = np.asarray(self.grad_f, dtype=float)
        self.g_vals = np.asarray(self.g_vals, dtype=float)
        n = self.feasible.n
        if self.grad_f.shape != (n,):
            raise ValueError(
                f"grad_f has {self.grad_f.size} entries for {n} decision vars")
        if self.g_affine.a.shape[1] != n:
            raise ValueError(
                f"constraint matrix has {self.g_affine.a.shape[1]} columns "
                f"for {n} decision vars")
        if self.g_vals.shape != (self.g_affine.n_rows,):
            raise ValueError(
                f"{self.g_vals.size} constraint values for "
                f"{self.g_affine.n_rows} constraint rows")


# ---------------------------------------------------------------------------
# ensemble state


@dataclass
class ExpertState:
    """One learner: its last decision and its virtual queue (1-based index)."""

    index: int
    x: np.ndarray
    q: np.ndarray


@dataclass
class EnsembleState:
    """Expert bank, meta-weights and the last committed decision."""

    config: OcoConfig
    experts: list[ExpertState]
    rho: np.ndarray
    gamma: float
    x_last: np.ndarray
    t: int = 1
    cum_violation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    qp_limits: int = 0


def init_ensemble(config: OcoConfig, x0: np.ndarray,
                  n_constraints: int) -> EnsembleState:
    """Start all experts at the designated feasible point with empty queues."""
    x0 = np.asarray(x0, dtype=float)
    experts = [ExpertState(index=i + 1, x=x0.copy(), q=np.zeros(n_constraints))
               for i in range(config.n_experts)]
    return EnsembleState(
        config=config,
        experts=experts,
        rho=config.initial_weights(),
        gamma=config.gamma,
        x_last=x0.copy(),
        t=1,
        cum_violation=np.zeros(n_constraints),
    )


# ---------------------------------------------------------------------------
# per-step operations


def update_virtual_queue(q: np.ndarray, g_prev_vals: np.ndarray,
                         beta: float) -> np.ndarray:
    """Grow the queue by beta times the clipped constraint values."""
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    q = np.asarray(q, dtype=float)
    g_prev_vals = np.asarray(g_prev_vals, dtype=float)
    if q.shape != g_prev_vals.shape:
        raise ValueError(f"queue has shape {q.shape}, values {g_prev_vals.shape}")
    return q + beta * np.clip(g_prev_vals, 0.0, None)


def expert_decision(x_prev: np.ndarray, q: np.ndarray, feedback: StepFeedback,
                    alpha: float, beta: float, *,
                    options: SolveOptions | None = None,
                    diag: dict | None = None) -> np.ndarray:
    """Proximal step: linearized cost plus queue-priced constraint slack.

    Solves ``min alpha <grad, x> + alpha beta <Q, s> + ||x - x_prev||^2``
    over ``x`` in the static set and slacks ``s >= 0, s >= g(x)``.  Because
    the queue is nonnegative this equals the clipped-penalty objective at
    the optimum.  On an iteration-limited solve the best iterate is
    returned and ``diag["status"]`` records it.
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise ValueError("alpha and beta must be positive")
    x_prev = np.asarray(x_prev, dtype=float)
    q = np.asarray(q, dtype=float)
    fs = feedback.feasible
    n = fs.n
    k = feedback.g_affine.n_rows
    if x_prev.shape != (n,):
        raise ValueError(f"x_prev has {x_prev.size} entries for {n} vars")
    if q.shape != (k,):
        raise ValueError(f"queue has {q.size} entries for {k} constraint rows")

    pb = ProgramBuilder()
    for j in range(n):
        pb.add_var(f"x{j}", lb=fs.lb[j], ub=fs.ub[j],
                   cost=alpha * feedback.grad_f[j] - 2.0 * x_prev[j], quad=1.0)
    s_idx = [pb.add_var(f"s{r}", lb=0.0, cost=alpha * beta * q[r])
             for r in range(k)]
    a_g, b_g = feedback.g_affine.a, feedback.g_affine.b
    for r in range(k):
        row = {j: a_g[r, j] for j in range(n) if a_g[r, j] != 0.0}
        row[s_idx[r]] = -1.0
        pb.add_le(row, b_g[r])
    if fs.a_eq is not None:
        for r in range(fs.b_eq.size):
            pb.add_eq({j: fs.a_eq[r, j] for j in range(n) if fs.a_eq[r, j] != 0.0},
                      fs.b_eq[r])
    if fs.a_ub is not None:
        for r in range(fs.b_ub.size):
            pb.add_le({j: fs.a_ub[r, j] for j in range(n) if fs.a_ub[r, j] != 0.0},
                      fs.b_ub[r])
    pb.c0 += float(x_prev @ x_prev)

    res = solve_qp(pb.build(), options or SolveOptions())
    if diag is not None:
        diag["objective"] = res.objective
        diag["status"] = res.status.value
    if res.status is not SolveStatus.OPTIMAL:
        # routine under a capped iteration budget; the best iterate is a
        # valid (if slightly inexact) proximal step
        logger.debug("expert step stopped at status %s; using best iterate",
                     res.status.value)
    return np.array(res.x[:n], dtype=float)


def update_expert_weights(rho: np.ndarray, losses: np.ndarray,
                          gamma: float) -> np.ndarray:
    """Exponential reweighting with max-shift; uniform fallback on underflow."""
    if gamma < 0.0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    rho = np.asarray(rho, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if rho.shape != losses.shape:
        raise ValueError(f"weights {rho.shape} vs losses {losses.shape}")
    exponents = -gamma * losses
    shift = np.max(exponents)
    if not np.isfinite(shift):
        logger.warning("non-finite expert losses; resetting to uniform weights")
        return np.full(rho.size, 1.0 / rho.size)
    scaled = rho * np.exp(exponents - shift)
    total = scaled.sum()
    if not np.isfinite(total) or total <= 0.0:
        logger.warning("expert weights underflowed; resetting to uniform")
        return np.full(rho.size, 1.0 / rho.size)
    return scaled / total


def aggregate_decision(rho: np.ndarray, expert_decisions) -> np.ndarray:
    """Weighted average of the expert decisions."""
    rho = np.asarray(rho, dtype=float)
    xs = np.asarray(expert_decisions, dtype=float)
    if xs.shape[0] != rho.size:
        raise ValueError(f"{rho.size} weights for {xs.shape[0]} decisions")
    return rho @ xs


def ensemble_step(state: EnsembleState, feedback: StepFeedback, *,
                  options: SolveOptions | None = None,
                  trace: list | None = None) -> np.ndarray:
    """Advance to the next decision from one step of delayed feedback.

    Per step: score each expert's previous decision against the committed
    one under the revealed subgradient, grow every queue from the committed
    decision's constraint values, take all proximal steps (independent, so
    order is irrelevant), reweight, and aggregate.  Learning rates are taken
    at the previous step index.  Appends a JSON-able record to ``trace``
    when given.
    """
    cfg = state.config
    t_prev = state.t
    losses = np.array([feedback.grad_f @ (e.x - state.x_last)
                       for e in state.experts])
    objectives = []
    for expert in state.experts:
        alpha = cfg.alpha(expert.index, t_prev)
        beta = cfg.beta(expert.index, t_prev)
        expert.q = update_virtual_queue(expert.q, feedback.g_vals, beta)
        diag: dict = {}
        expert.x = expert_decision(expert.x, expert.q, feedback, alpha, beta,
                                   options=options, diag=diag)
        if diag["status"] != SolveStatus.OPTIMAL.value:
            state.qp_limits += 1
        objectives.append(float(diag["objective"]))
    state.rho = update_expert_weights(state.rho, losses, state.gamma)
    x_t = aggregate_decision(state.rho, [e.x for e in state.experts])
    state.cum_violation = state.cum_violation + np.clip(feedback.g_vals, 0.0, None)
    state.x_last = x_t
    state.t = t_prev + 1
    if trace is not None:
        trace.append({
            "t": state.t,
            "rho": state.rho.tolist(),
            "queue_norms": [float(np.linalg.norm(e.q)) for e in state.experts],
            "x": x_t.tolist(),
            "expert_objectives": objectives,
        })
    return x_t


# ---------------------------------------------------------------------------
# regret accounting


@dataclass(frozen=True)
class RegretReport:
    """Cumulative cost gap to the benchmark and the benchmark's path length."""

    regret: float
    path_length: float


def compute_regret(realized_costs: np.ndarray, benchmark_costs: np.ndarray,
                   benchmark_decisions: np.ndarray | None = None) -> RegretReport:
    """Sum of per-step cost gaps, plus total benchmark movement if given."""
    realized = np.asarray(realized_costs, dtype=float)
    benchmark = np.asarray(benchmark_costs, dtype=float)
    if realized.shape != benchmark.shape:
        raise ValueError(
            f"{realized.size} realized costs vs {benchmark.size} benchmark costs")
    path = 0.0
    if benchmark_decisions is not None:
        ys = np.asarray(benchmark_decisions, dtype=float)
        if ys.shape[0] >= 2:
            path = float(np.sum(np.linalg.norm(np.diff(ys, axis=0), axis=1)))
    return RegretReport(regret=float(np.sum(realized - benchmark)),
                        path_length=path)


def estimate_gradient_bound(grad_samples) -> float:
    """Largest gradient norm over a calibration prefix (1.0 when empty)."""
    best = 0.0
    for g in grad_samples:
        best = max(best, float(np.linalg.norm(np.asarray(g, dtype=float))))
    return best if best > 0.0 else 1.0


# ---------------------------------------------------------------------------
# synthetic drifting stream and sublinearity benchmark


@dataclass
class DriftingQuadraticStream:
    """Quadratic tracking stream with a slowly drifting optimum.

    Costs are ``f_t(x) = ||x - theta_t||^2`` on the unit box, with one
    time-varying budget row ``sum(x) <= b_t``.  Targets and budgets follow
    a few seeded sinusoids whose periods scale with the horizon, so the
    per-step optimum moves a bounded total distance no matter how long the
    stream runs -- the regime where sublinear dynamic regret is achievable.
    """

    horizon: int
    n_dims: int = 2
    seed: int = 0
    drift_amplitude: float = 0.35
    budget_amplitude: float = 0.25

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        rng = np.random.default_rng(self.seed)
        t = np.arange(1, self.horizon + 1, dtype=float)
        harmonics = np.arange(1, 4, dtype=float)
        # Random per-coordinate mix of the first three harmonics, scaled so
        # the total swing stays within drift_amplitude of the box centre.
        amp = rng.uniform(0.3, 1.0, size=(self.n_dims, 3)) / harmonics
        amp *= self.drift_amplitude / amp.sum(axis=1, keepdims=True)
        phase = rng.uniform(0.0, 2.0 * math.pi, size=(self.n_dims, 3))
        angles = 2.0 * math.pi * harmonics[None, None, :] * \
            t[:, None, None] / self.horizon + phase[None, :, :]
        self._theta = 0.5 + np.sum(amp[None, :, :] * np.sin(angles), axis=2)
        budget_phase = rng.uniform(0.0, 2.0 * math.pi)
        self._budget = 0.55 * self.n_dims + self.budget_amplitude * np.sin(
            2.0 * math.pi * t / self.horizon + budget_phase)
        self._feasible = FeasibleSet(lb=np.zeros(self.n_dims),
                                     ub=np.ones(self.n_dims))

    # -- stream queries (t is 1-based) --

    def target(self, t: int) -> np.ndarray:
        return self._theta[t - 1]

    def budget(self, t: int) -> float:
        return float(self._budget[t - 1])

    def cost(self, t: int, x: np.ndarray) -> float:
        return float(np.sum((x - self.target(t)) ** 2))

    def grad(self, t: int, x: np.ndarray) -> np.ndarray:
        return 2.0 * (x - self.target(t))

    def constraint_value(self, t: int, x: np.ndarray) -> float:
        return float(np.sum(x) - self.budget(t))

    @property
    def feasible(self) -> FeasibleSet:
        return self._feasible

    def feedback(self, t_prev: int, x_prev: np.ndarray) -> StepFeedback:
        """Feedback revealed after step ``t_prev`` played ``x_prev``."""
        return StepFeedback(
            grad_f=self.grad(t_prev, x_prev),
            g_vals=np.array([self.constraint_value(t_prev, x_prev)]),
            g_affine=AffineConstraints(a=np.ones((1, self.n_dims)),
                                       b=np.array([self.budget(t_prev)])),
            feasible=self._feasible,
        )

    # -- per-step benchmark --

    def project(self, theta: np.ndarray, budget: float) -> np.ndarray:
        """Euclidean projection of theta onto the box cut by the budget row."""
        free = np.clip(theta, 0.0, 1.0)
        if free.sum() <= budget:
            return free
        lo, hi = 0.0, float(np.max(theta))
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.clip(theta - mid, 0.0, 1.0).sum() > budget:
                lo = mid
            else:
                hi = mid
        return np.clip(theta - hi, 0.0, 1.0)

    def oracle(self, t: int) -> np.ndarray:
        """Perfect-foresight per-step optimum y_t."""
        return self.project(self.target(t), self.budget(t))


@dataclass(frozen=True)
class StreamRunResult:
    """One full rollout on a synthetic stream plus its regret report."""

    stream: DriftingQuadraticStream
    decisions: np.ndarray
    realized_costs: np.ndarray
    benchmark_costs: np.ndarray
    benchmark_decisions: np.ndarray
    report: RegretReport
    state: EnsembleState


def run_stream(config: OcoConfig, stream: DriftingQuadraticStream, *,
               options: SolveOptions | None = None,
               trace: list | None = None) -> StreamRunResult:
    """Roll the ensemble over a synthetic stream and score it per step."""
    if config.horizon != stream.horizon:
        raise ValueError(f"config horizon {config.horizon} != stream "
                         f"horizon {stream.horizon}")
    horizon, n = stream.horizon, stream.n_dims
    x0 = np.zeros(n)
    state = init_ensemble(config, x0, n_constraints=1)
    decisions = np.empty((horizon, n))
    realized = np.empty(horizon)
    bench_x = np.empty((horizon, n))
    bench_c = np.empty(horizon)
    decisions[0] = x0
    realized[0] = stream.cost(1, x0)
    bench_x[0] = stream.oracle(1)
    bench_c[0] = stream.cost(1, bench_x[0])
    for t in range(2, horizon + 1):
        fb = stream.feedback(t - 1, decisions[t - 2])
        decisions[t - 1] = ensemble_step(state, fb, options=options, trace=trace)
        realized[t - 1] = stream.cost(t, decisions[t - 1])
        bench_x[t - 1] = stream.oracle(t)
        bench_c[t - 1] = stream.cost(t, bench_x[t - 1])
    report = compute_regret(realized, bench_c, bench_x)
    return StreamRunResult(stream=stream, decisions=decisions,
                           realized_costs=realized, benchmark_costs=bench_c,
                           benchmark_decisions=bench_x, report=report,
                           state=state)


@dataclass(frozen=True)
class RegretPoint:
    """One benchmark measurement at a given horizon."""

    horizon: int
    regret: float
    path_length: float
    n_experts: int
    wall_s: float


def run_regret_benchmark(horizons=(256, 512, 1024, 2048, 4096), *,
                         kappa: float = 0.5, c: float = 0.5,
                         alpha0: float = 1.0, beta0: float = 1.0,
                         n_dims: int = 2, seed: int = 0,
                         options: SolveOptions | None = None) -> list[RegretPoint]:
    """Measure dynamic regret across horizons on the drifting stream.

    The gradient bound is estimated per horizon from a short calibration
    prefix (gradients at the start point over the first 16 steps).
    """
    points = []
    for horizon in horizons:
        stream = DriftingQuadraticStream(horizon=int(horizon), n_dims=n_dims,
                                         seed=seed)
        x0 = np.zeros(n_dims)
        prefix = [stream.grad(t, x0)
                  for t in range(1, min(int(horizon), 16) + 1)]
        config = OcoConfig(horizon=int(horizon), kappa=kappa, c=c,
                           alpha0=alpha0, beta0=beta0,
                           grad_bound=estimate_gradient_bound(prefix))
        start = time.perf_counter()
        result = run_stream(config, stream, options=options)
        points.append(RegretPoint(
            horizon=int(horizon),
            regret=result.report.regret,
            path_length=result.report.path_length,
            n_experts=config.n_experts,
            wall_s=time.perf_counter() - start,
        ))
    return points


def regret_slope(points) -> float:
    """Least-squares slope of log(regret) against log(horizon)."""
    pairs = [(p.horizon, p.regret) if hasattr(p, "horizon") else (p[0], p[1])
             for p in points]
    if len(pairs) < 2:
        raise ValueError("need at least two points to fit a slope")
    if any(reg <= 0.0 for _, reg in pairs):
        raise ValueError("regret must be positive to fit a power law")
    xs = np.log([float(t) for t, _ in pairs])
    ys = np.log([float(reg) for _, reg in pairs])
    return float(np.polyfit(xs, ys, 1)[0])
