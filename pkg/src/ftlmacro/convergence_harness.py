"""Micro-to-macro rescaling experiments and fundamental-diagram studies.

The rescaled microscopic quantity eps * U_{floor(x/eps)}(t/eps), started
from U_i(0) = u0(eps*i)/eps, is compared against the macroscopic solution
of u_t = F(u_x) on a fixed (x, t) evaluation lattice, for a decreasing
ladder of eps and an ensemble of seeds. The macroscopic reference is the
monotone HJ scheme on a grid two refinement levels finer than the finest
eps (its own self-convergence is covered by the solver tests), since the
limit has no closed form except for affine data.

Window sizing: the integrator update couples car i to car i+1 only, so
influence travels backward one car per step; the index window extends
ceil(2 * T * alpha / (eps * dt_factor)) + 2 cars beyond the evaluated
range (twice the step count T*alpha/(eps*dt_factor)). Cars behind the
evaluated range never matter. Time steps per cell are chosen so snapshot
times land exactly on the evaluation lattice.

With a common window start (x-window beginning at 0) and a common seed,
every ladder eps sees the same type sequence prefix: the experiment
follows one realization of the randomness as eps decreases, exactly the
setting of the convergence statement.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .effective_flux import EffectiveFlux, build_flux, flux_eval, flux_lipschitz
from .errors import ConfigurationError, DomainError
from .io_utils import canonical_hash
from .macro_solvers import Grid1D, solve_hj
from .micro_sim import MicroState, MicroTrajectory, asymptotic_speed, integrate
from .velocity_models import TypeDistribution, sample_types, validate_assumptions


# ---------------------------------------------------------------------------
# Initial macroscopic profiles (nondecreasing, positive gradient)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineProfile:
    """u0(x) = gradient * x + offset."""

    gradient: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.gradient > 0:
            raise DomainError("affine gradient must be positive")

    def __call__(self, x):
        return self.gradient * np.asarray(x, dtype=float) + self.offset

    @property
    def gradient_bounds(self):
        return (self.gradient, self.gradient)

    def describe(self):
        return {"family": "affine", "gradient": self.gradient, "offset": self.offset}


@dataclass(frozen=True)
class SmoothRampProfile:
    """Gradient blends smoothly from g_left to g_right across [x0, x0+width].

    The gradient is g_left + (g_right - g_left) * s(tau) with the cubic
    smoothstep s(tau) = 3 tau^2 - 2 tau^3; the profile is its exact
    integral, so gradients are C^1 and stay inside [min(g), max(g)].
    """

    gradient_left: float
    gradient_right: float
    x0: float
    width: float
    offset: float = 0.0

    def __post_init__(self):
        if not (self.gradient_left > 0 and self.gradient_right > 0):
            raise DomainError("ramp gradients must be positive")
        if not self.width > 0:
            raise DomainError("ramp width must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        tau = (x - self.x0) / self.width
        # S(t) = integral of smoothstep: t^3 - t^4/2 on [0,1], then t - 1/2.
        tc = np.clip(tau, 0.0, 1.0)
        s_int = tc ** 3 - 0.5 * tc ** 4 + np.maximum(tau - 1.0, 0.0)
        return (self.offset + self.gradient_left * x
                + (self.gradient_right - self.gradient_left) * self.width * s_int)

    @property
    def gradient_bounds(self):
        lo = min(self.gradient_left, self.gradient_right)
        hi = max(self.gradient_left, self.gradient_right)
        return (lo, hi)

    def describe(self):
        return {"family": "smooth_ramp", "gradient_left": self.gradient_left,
                "gradient_right": self.gradient_right, "x0": self.x0,
                "width": self.width, "offset": self.offset}


@dataclass(frozen=True)
class PiecewiseLinearProfile:
    """Interpolates strictly increasing (x, u) breakpoints; linear beyond."""

    points: tuple  # of (x, u)

    def __post_init__(self):
        pts = tuple((float(x), float(u)) for x, u in self.points)
        object.__setattr__(self, "points", pts)
        xs = np.array([p[0] for p in pts])
        us = np.array([p[1] for p in pts])
        if xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise DomainError("breakpoint x values must be strictly increasing")
        if np.any(np.diff(us) <= 0):
            raise DomainError("breakpoint u values must be strictly increasing")

    def _arrays(self):
        xs = np.array([p[0] for p in self.points])
        us = np.array([p[1] for p in self.points])
        return xs, us

    def __call__(self, x):
        xs, us = self._arrays()
        x = np.asarray(x, dtype=float)
        out = np.interp(x, xs, us)
        slopes = np.diff(us) / np.diff(xs)
        out = np.where(x < xs[0], us[0] + (x - xs[0]) * slopes[0], out)
        out = np.where(x > xs[-1], us[-1] + (x - xs[-1]) * slopes[-1], out)
        return out

    @property
    def gradient_bounds(self):
        xs, us = self._arrays()
        slopes = np.diff(us) / np.diff(xs)
        return (float(np.min(slopes)), float(np.max(slopes)))

    def describe(self):
        return {"family": "piecewise_linear", "points": list(self.points)}


# ---------------------------------------------------------------------------
# Scenario and report containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """One convergence experiment: mix, profile, window, ladder, seeds."""

    dist: TypeDistribution
    u0: object
    x_window: tuple  # (a, b), meters
    t_macro: float
    epsilons: tuple
    seeds: tuple
    dt_factor: float = 0.5
    eval_nx: int = 21
    eval_nt: int = 11
    error_threshold: float = 0.25
    slack: float = 0.10
    flux_p_max: float | None = None
    flux_grid_points: int = 512
    flux_tol: float = 1e-10
    ref_refine: int = 4
    memory_budget_cells: int = 20_000_000

    def __post_init__(self):
        a, b = self.x_window
        if not b > a:
            raise ConfigurationError("x_window must satisfy b > a")
        if not self.t_macro > 0:
            raise ConfigurationError("t_macro must be positive")
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 1 or any(e <= 0 for e in eps) or any(
                e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ConfigurationError("epsilon ladder must be positive and strictly decreasing")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) < 1:
            raise ConfigurationError("need at least one seed")
        if not 0 < self.dt_factor <= 1:
            raise ConfigurationError("dt_factor must be in (0, 1]")
        if self.eval_nx < 2 or self.eval_nt < 2:
            raise ConfigurationError("evaluation lattice needs >= 2 points per axis")
        gmin, _ = self.u0.gradient_bounds
        if not gmin > 0:
            raise ConfigurationError("u0 must be strictly increasing (positive gradient)")

    @property
    def lattice_x(self) -> np.ndarray:
        return np.linspace(self.x_window[0], self.x_window[1], self.eval_nx)

    @property
    def lattice_t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_macro, self.eval_nt)

    def flux_table_max(self) -> float:
        _, gmax = self.u0.gradient_bounds
        auto = max(1.5 * gmax, self.dist.h0_bar + 1.0, gmax + 1.0)
        return self.flux_p_max if self.flux_p_max is not None else auto

    def hash_payload(self):
        return {
            "types": [{"id": s.id, "family": s.family, "h0": s.h0,
                       "v_max": s.v_max, "params": {k: list(v) if isinstance(v, (tuple, list)) else v
                                                    for k, v in s.params.items()}}
                      for s in self.dist.types],
            "probabilities": list(self.dist.probabilities),
            "u0": self.u0.describe(),
            "x_window": list(self.x_window), "t_macro": self.t_macro,
            "epsilons": list(self.epsilons), "seeds": list(self.seeds),
            "dt_factor": self.dt_factor, "eval_nx": self.eval_nx,
            "eval_nt": self.eval_nt, "error_threshold": self.error_threshold,
            "slack": self.slack, "flux_p_max": self.flux_table_max(),
            "flux_grid_points": self.flux_grid_points, "flux_tol": self.flux_tol,
            "ref_refine": self.ref_refine,
        }

    @property
    def scenario_hash(self) -> str:
        return canonical_hash(self.hash_payload())


@dataclass(frozen=True)
class CellResult:
    epsilon: float
    seed: int
    sup_error: float
    l1_error: float  # lattice-mean absolute error (secondary diagnostic)
    wall_time_s: float


@dataclass(frozen=True)
class EpsilonSummary:
    epsilon: float
    mean_sup: float
    max_sup: float
    mean_l1: float


@dataclass(frozen=True)
class ConvergenceReport:
    scenario_hash: str
    lattice_x: np.ndarray
    lattice_t: np.ndarray
    cells: tuple
    per_epsilon: tuple
    trend_verdict: str  # "pass" | "fail" | "insufficient data"
    threshold: float
    threshold_ok: bool
    verdict: str
    slack: float
    wall_time_total_s: float

    def max_sup_errors(self) -> np.ndarray:
        return np.array([s.max_sup for s in self.per_epsilon])

    def to_csv(self, path):
        from .io_utils import write_csv
        meta = [f"verdict={self.verdict}", f"trend={self.trend_verdict}",
                f"threshold={self.threshold!r}", f"slack={self.slack!r}"]
        rows = ((c.epsilon, c.seed, c.sup_error, c.l1_error, c.wall_time_s)
                for c in self.cells)
        write_csv(path, meta, ("epsilon", "seed", "sup_error", "l1_error", "wall_time_s"),
                  rows, self.scenario_hash)

    def to_json(self, path):
        from .io_utils import write_json
        payload = {
            "verdicts": {"overall": self.verdict, "trend": self.trend_verdict,
                         "threshold_ok": self.threshold_ok,
                         "threshold": self.threshold, "slack": self.slack},
            "per_epsilon": [{"epsilon": s.epsilon, "mean_sup": s.mean_sup,
                             "max_sup": s.max_sup, "mean_l1": s.mean_l1}
                            for s in self.per_epsilon],
            "lattice": {"x": self.lattice_x, "t": self.lattice_t},
            "timing": {"wall_time_total_s": self.wall_time_total_s},
        }
        write_json(path, payload, self.scenario_hash)

    def write_plot_script(self, script_path, csv_path):
        """log-log error-vs-epsilon plot referencing the report CSV."""
        from .io_utils import write_gnuplot_script
        write_gnuplot_script(
            script_path, csv_path, "sup-norm error vs epsilon", "epsilon",
            "sup error",
            ["csv using 1:3 with points pt 7 title 'per seed'"],
            extra=("set logscale xy", "set grid"),
            scenario_hash=self.scenario_hash)


# ---------------------------------------------------------------------------
# Discretization and rescaling
# ---------------------------------------------------------------------------

def window_index_range(x_window, epsilon: float, t_macro: float,
                       dist: TypeDistribution, dt_factor: float = 0.5):
    """Index range [i_min, i_max] covering the window plus propagation margin."""
    a, b = x_window
    i_min = int(math.floor(a / epsilon + 1e-9))
    n_steps_bound = t_macro * dist.alpha / (epsilon * dt_factor)
    margin = int(math.ceil(2.0 * n_steps_bound)) + 2
    i_max = int(math.floor(b / epsilon + 1e-9)) + margin
    return i_min, i_max


def discretize_initial(u0, epsilon: float, i_min: int, i_max: int,
                       memory_budget_cells: int = 20_000_000) -> np.ndarray:
    """Micro initial positions U_i = u0(eps*i)/eps for i in [i_min, i_max]."""
    n = i_max - i_min + 1
    if n < 2:
        raise ConfigurationError("index window must contain at least two cars")
    if n > memory_budget_cells:
        raise ConfigurationError(
            f"index window needs {n} cars, beyond the memory budget of "
            f"{memory_budget_cells}; shrink the window or raise the budget")
    i = np.arange(i_min, i_max + 1, dtype=float)
    positions = np.asarray(u0(epsilon * i), dtype=float) / epsilon
    if np.any(np.diff(positions) <= 0):
        raise DomainError("u0 must be strictly increasing to discretize")
    return positions


def rescale_micro(traj: MicroTrajectory, epsilon: float, eval_points,
                  index_offset: int = 0):
    """eps * U_{floor(x/eps)}(t/eps) at the given (x, t) points.

    Positions are interpolated linearly in time between stored snapshots;
    the car index floor(x/eps) is shifted by the window's first index.
    """
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if pts.shape[1] != 2:
        raise DomainError("eval_points must be (x, t) pairs")
    times = traj.times
    out = np.empty(pts.shape[0])
    for k, (x, t) in enumerate(pts):
        i_abs = int(math.floor(x / epsilon + 1e-9))
        col = i_abs - index_offset
        if not 0 <= col < traj.n_vehicles:
            raise DomainError(
                f"eval point x={x:g} needs car {i_abs}, outside the covered window")
        s = t / epsilon
        if s < times[0] - 1e-9 or s > times[-1] + 1e-6 * max(1.0, times[-1]):
            raise DomainError(f"eval point t={t:g} outside the integrated horizon")
        out[k] = epsilon * np.interp(s, times, traj.positions[:, col])
    return out


# ---------------------------------------------------------------------------
# The convergence study
# ---------------------------------------------------------------------------

def _reference_solution(scenario: Scenario, flux: EffectiveFlux):
    """HJ reference sampled on the evaluation lattice (values[t_idx, x_idx])."""
    a, b = scenario.x_window
    T = scenario.t_macro
    _, gmax = scenario.u0.gradient_bounds
    lip = max(flux_lipschitz(flux, 0.0, gmax), 1e-12)
    dx_ref = min(scenario.epsilons) / scenario.ref_refine
    x_lo = a - 1.0
    x_hi = b + 1.5 * lip * T + 1.0
    nx = int(math.ceil((x_hi - x_lo) / dx_ref))
    dt_lat = T / (scenario.eval_nt - 1)
    sub = max(1, int(math.ceil(dt_lat / (0.9 * dx_ref / lip))))
    grid = Grid1D(x_min=x_lo, x_max=x_lo + nx * dx_ref, nx=nx, t_final=T,
                  dt=dt_lat / sub)
    field = solve_hj(scenario.u0, flux, grid, store_every=sub)
    ref = np.empty((scenario.eval_nt, scenario.eval_nx))
    for k, t in enumerate(scenario.lattice_t):
        ref[k] = field.sample(scenario.lattice_x, t)
    return ref


def _cell_steps(scenario: Scenario, epsilon: float):
    """(dt, n_steps, sample_every) aligning snapshots with the lattice."""
    horizon = scenario.t_macro / epsilon
    dt_target = scenario.dt_factor / scenario.dist.alpha
    intervals = scenario.eval_nt - 1
    per = max(1, int(math.ceil(horizon / (intervals * dt_target) - 1e-9)))
    n_steps = intervals * per
    return horizon / n_steps, n_steps, per


def _run_cell(scenario: Scenario, epsilon: float, seed: int, ref: np.ndarray):
    start = time.perf_counter()
    i_min, i_max = window_index_range(scenario.x_window, epsilon,
                                      scenario.t_macro, scenario.dist,
                                      scenario.dt_factor)
    positions = discretize_initial(scenario.u0, epsilon, i_min, i_max,
                                   scenario.memory_budget_cells)
    types = sample_types(scenario.dist, i_max - i_min + 1, seed)
    state = MicroState(positions=positions, type_indices=types, dist=scenario.dist)
    dt, n_steps, per = _cell_steps(scenario, epsilon)
    traj = integrate(state, scenario.t_macro / epsilon, dt, sample_every=per,
                     seed=seed)
    xs, ts = scenario.lattice_x, scenario.lattice_t
    pts = np.column_stack([np.repeat(xs, ts.size), np.tile(ts, xs.size)])
    vals = rescale_micro(traj, epsilon, pts, index_offset=i_min)
    diff = np.abs(vals.reshape(xs.size, ts.size).T - ref)
    wall = time.perf_counter() - start
    return CellResult(epsilon=epsilon, seed=seed,
                      sup_error=float(np.max(diff)),
                      l1_error=float(np.mean(diff)), wall_time_s=wall)


def _run_cell_args(args):
    return _run_cell(*args)


def convergence_study(scenario: Scenario, flux: EffectiveFlux | None = None,
                      n_jobs: int = 1) -> ConvergenceReport:
    """Run the full (epsilon, seed) grid and aggregate the error verdicts.

    The verdict is "pass" when the max-over-seeds sup error is nonincreasing
    along the ladder up to the slack factor and the smallest-eps error is
    below the scenario threshold. Cells are independent; n_jobs > 1 runs
    them in worker processes.
    """
    t_start = time.perf_counter()
    report = validate_assumptions(scenario.dist)
    if not report.all_pass:
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        raise ConfigurationError(f"distribution fails assumptions: {failed}")
    if flux is None:
        flux = build_flux(scenario.dist, scenario.flux_table_max(),
                          scenario.flux_grid_points, scenario.flux_tol)
    ref = _reference_solution(scenario, flux)

    tasks = [(scenario, eps, seed, ref)
             for eps in scenario.epsilons for seed in scenario.seeds]
    cells = []
    interrupted = False
    try:
        if n_jobs > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                cells = list(pool.map(_run_cell_args, tasks))
        else:
            for task in tasks:
                cells.append(_run_cell(*task))
    except KeyboardInterrupt:
        interrupted = True  # keep completed cells as a partial report

    per_eps = []
    for eps in scenario.epsilons:
        sups = np.array([c.sup_error for c in cells if c.epsilon == eps])
        l1s = np.array([c.l1_error for c in cells if c.epsilon == eps])
        if sups.size:
            per_eps.append(EpsilonSummary(epsilon=eps, mean_sup=float(np.mean(sups)),
                                          max_sup=float(np.max(sups)),
                                          mean_l1=float(np.mean(l1s))))

    if interrupted:
        trend = "interrupted"
    elif len(per_eps) < 2:
        trend = "insufficient data"
    else:
        ok = all(nxt.max_sup <= (1.0 + scenario.slack) * cur.max_sup
                 for cur, nxt in zip(per_eps, per_eps[1:]))
        trend = "pass" if ok else "fail"
    threshold_ok = bool(per_eps and per_eps[-1].max_sup <= scenario.error_threshold)
    if trend in ("insufficient data", "interrupted"):
        verdict = trend
    else:
        verdict = "pass" if (trend == "pass" and threshold_ok) else "fail"

    return ConvergenceReport(
        scenario_hash=scenario.scenario_hash,
        lattice_x=scenario.lattice_x, lattice_t=scenario.lattice_t,
        cells=tuple(cells), per_epsilon=tuple(per_eps),
        trend_verdict=trend, threshold=scenario.error_threshold,
        threshold_ok=threshold_ok, verdict=verdict, slack=scenario.slack,
        wall_time_total_s=time.perf_counter() - t_start)


# ---------------------------------------------------------------------------
# Fundamental diagram study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalDiagramRow:
    p: float
    F_bar: float
    empirical_mean: float
    empirical_sd: float
    n_seeds: int


@dataclass(frozen=True)
class FundamentalDiagramStudy:
    rows: tuple
    horizon: float
    scenario_hash: str | None = None

    def to_csv(self, path):
        from .io_utils import write_csv
        meta = [f"horizon={self.horizon!r}"]
        rows = ((r.p, r.F_bar, r.empirical_mean, r.empirical_sd, r.n_seeds)
                for r in self.rows)
        write_csv(path, meta, ("p", "F_bar", "empirical_mean", "empirical_sd", "n_seeds"),
                  rows, self.scenario_hash)

    def max_discrepancy(self) -> float:
        return max(abs(r.empirical_mean - r.F_bar) for r in self.rows)


def fundamental_diagram_study(dist: TypeDistribution, p_values, seeds,
                              horizon: float, n_vehicles: int | None = None,
                              dt: float | None = None,
                              flux: EffectiveFlux | None = None,
                              flux_grid_points: int = 256,
                              flux_tol: float = 1e-10,
                              scenario_hash: str | None = None) -> FundamentalDiagramStudy:
    """Empirical long-run speeds vs the tabulated effective velocity.

    For each headway p, averages asymptotic_speed over the seeds and pairs
    it with flux_eval(p). The car count defaults to the per-p minimum
    satisfying the insulation precondition (plus margin).
    """
    p_values = [float(p) for p in p_values]
    if any(p < 0 for p in p_values):
        raise DomainError("headways must be nonnegative")
    seeds = [int(s) for s in seeds]
    if flux is None:
        p_max = max(max(p_values) + 1.0, dist.h0_bar * 2.0)
        flux = build_flux(dist, p_max, flux_grid_points, flux_tol)
    rows = []
    for p in p_values:
        if n_vehicles is None:
            n = int(math.ceil(2.0 * dist.v_max_global * horizon / max(p, 1e-12))) + 16
        else:
            n = n_vehicles
        speeds = np.array([asymptotic_speed(p, dist, seed, n, horizon, dt)
                           for seed in seeds])
        sd = float(np.std(speeds, ddof=1)) if speeds.size > 1 else 0.0
        rows.append(FundamentalDiagramRow(p=p, F_bar=float(flux_eval(flux, p)),
                                          empirical_mean=float(np.mean(speeds)),
                                          empirical_sd=sd, n_seeds=len(seeds)))
    return FundamentalDiagramStudy(rows=tuple(rows), horizon=horizon,
                                   scenario_hash=scenario_hash)
