"""Macroscopic solvers: monotone HJ scheme, Godunov LWR, and their bridge.

Hamilton-Jacobi side: u_t = F(u_x) with the effective velocity F. The
scheme is

    u_j <- u_j + dt * F((u_{j+1} - u_j)/dx),

a one-sided (forward) difference inside F. Since F is nondecreasing the
update is nondecreasing in u_{j+1}, and under the CFL bound
dt * Lip(F) <= dx also in u_j, hence monotone: it preserves nodewise
ordering, keeps discrete gradients inside the convex hull of the initial
gradient range, is exact on affine data, and converges to the viscosity
solution. Negative discrete gradients (outside F's domain) are clamped to
0 and counted in the field diagnostics.

LWR side: rho_t + q(rho)_x = 0 with q(rho) = rho * F(1/rho). The Godunov
interface flux uses the min/max-over-interval form,

    min over [rho_L, rho_R] of q   if rho_L <= rho_R,
    max over [rho_R, rho_L] of q   otherwise,

valid without any convexity assumption. Because the tabulated q is
piecewise linear in rho, the interval extrema are computed exactly from
the endpoint values and the interior breakpoints where the slope changes
sign.

The bridge: for strictly increasing u, w = u^{-1} (inverse in space) has
derivative rho = w_y, the push-forward density of dx under u. Both are
computed by exact piecewise-linear inversion, with cell densities formed
as difference quotients of w across cell edges so the mass identity
sum(rho * dy) = b - a holds to round-off.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .effective_flux import (EffectiveFlux, flux_eval, flux_lipschitz,
                             lwr_flow_breakpoints)
from .errors import ConfigurationError, DomainError

BOUNDARY_LINEAR = "linear_extension"
BOUNDARY_PERIODIC = "periodic"


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time grid; dt=None lets solvers pick 0.9x the CFL bound."""

    x_min: float
    x_max: float
    nx: int
    t_final: float
    dt: float | None = None
    boundary: str = BOUNDARY_LINEAR

    def __post_init__(self):
        if self.nx < 4:
            raise ConfigurationError("need nx >= 4 cells")
        if not self.x_max > self.x_min:
            raise ConfigurationError("x_max must exceed x_min")
        if not self.t_final > 0:
            raise ConfigurationError("t_final must be positive")
        if self.boundary not in (BOUNDARY_LINEAR, BOUNDARY_PERIODIC):
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def nodes(self) -> np.ndarray:
        """nx + 1 node coordinates (HJ unknowns, LWR cell edges)."""
        return self.x_min + self.dx * np.arange(self.nx + 1)

    @property
    def centers(self) -> np.ndarray:
        """nx cell-center coordinates (LWR unknowns)."""
        return self.x_min + self.dx * (np.arange(self.nx) + 0.5)


@dataclass(frozen=True)
class GridField:
    """Time-stamped snapshots of u (at nodes) or rho (at cell centers)."""

    grid: Grid1D
    kind: str  # "hj_u" | "lwr_rho"
    times: np.ndarray
    values: np.ndarray  # shape (n_times, n_points)
    diagnostics: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes if self.kind == "hj_u" else self.grid.centers

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def values_at(self, t: float) -> np.ndarray:
        ts = self.times
        if t < ts[0] - 1e-9 or t > ts[-1] + 1e-9:
            raise DomainError(f"time {t} outside stored range [{ts[0]}, {ts[-1]}]")
        if ts.size == 1 or t <= ts[0]:
            return self.values[0].copy()
        k = min(max(np.searchsorted(ts, t, side="right") - 1, 0), ts.size - 2)
        w = min(max((t - ts[k]) / (ts[k + 1] - ts[k]), 0.0), 1.0)
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def sample(self, x, t: float):
        """Space-time interpolated values (linear in both variables)."""
        row = self.values_at(t)
        out = np.interp(np.asarray(x, dtype=float), self.x, row)
        return float(out) if np.isscalar(x) else out

    def to_csv(self, path, scenario_hash=None):
        """Rows (t, x, value) for every stored snapshot."""
        from .io_utils import write_csv
        xs = self.x
        meta = [f"kind={self.kind}", f"nx={self.grid.nx}",
                f"boundary={self.grid.boundary}"]
        rows = ((t, xs[j], self.values[k, j])
                for k, t in enumerate(self.times) for j in range(xs.size))
        write_csv(path, meta, ("t", "x", "value"), rows, scenario_hash)


def _resolve_steps(t_final, dt, cfl_dt, what):
    """Pick/validate dt against the CFL bound; return (dt, n_full, rem)."""
    if dt is None:
        dt = min(0.9 * cfl_dt, t_final)
    elif dt > cfl_dt * (1.0 + 1e-12):
        raise ConfigurationError(
            f"{what}: dt={dt:g} violates the CFL bound dt <= {cfl_dt:g}")
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    n_full = int(math.floor(t_final / dt + 1e-9))
    rem = t_final - n_full * dt
    if rem < 1e-12 * max(1.0, t_final):
        rem = 0.0
    return dt, n_full, rem


def solve_hj(u0, flux: EffectiveFlux, grid: Grid1D, store_every: int = 1) -> GridField:
    """March u_t = F(u_x) with the monotone one-sided scheme.

    ``u0`` is an array of nx+1 node values or a callable sampled at the
    nodes. The boundary gradient is extended (linear_extension) or wrapped
    (periodic). Affine initial data evolves exactly as u0 + t*F(gradient).
    """
    u = np.asarray(u0(grid.nodes) if callable(u0) else u0, dtype=float).copy()
    if u.shape != (grid.nx + 1,):
        raise DomainError(f"u0 must have nx+1 = {grid.nx + 1} node values")

    dx = grid.dx
    g0 = np.diff(u) / dx
    n_clamped = int(np.sum(g0 < 0))
    if n_clamped:
        warnings.warn(f"{n_clamped} negative initial gradient(s) clamped to 0: "
                      "the effective velocity is defined for p >= 0 only",
                      RuntimeWarning)
    g_lo = max(0.0, float(np.min(g0)))
    g_hi = max(0.0, float(np.max(g0)))
    lip = flux_lipschitz(flux, g_lo, g_hi)
    cfl_dt = grid.dx / max(lip, 1e-300)
    dt, n_full, rem = _resolve_steps(grid.t_final, grid.dt, cfl_dt, "solve_hj")
    n_steps = n_full + (1 if rem else 0)

    periodic = grid.boundary == BOUNDARY_PERIODIC
    p_tab, f_tab = flux.p_grid, flux.F_values
    snaps = [u.copy()]
    times = [0.0]
    for step in range(1, n_steps + 1):
        h = dt if step <= n_full else rem
        g = np.diff(u) / dx
        g_last = g[0] if periodic else g[-1]
        g_full = np.concatenate((g, (g_last,)))
        np.maximum(g_full, 0.0, out=g_full)
        u = u + h * np.interp(g_full, p_tab, f_tab)
        if step % store_every == 0 or step == n_steps:
            snaps.append(u.copy())
            times.append(step * dt if step <= n_full else grid.t_final)

    return GridField(grid=grid, kind="hj_u", times=np.asarray(times),
                     values=np.asarray(snaps),
                     diagnostics={"clamped_gradients": n_clamped,
                                  "dt": dt, "lipschitz": lip})


def _q_extrema(rho_bps, q_bps):
    """Interior breakpoints where the slope of piecewise-linear q changes sign."""
    slopes = np.diff(q_bps) / np.diff(rho_bps)
    mins, maxs = [], []
    for k in range(1, rho_bps.size - 1):
        s_prev, s_next = slopes[k - 1], slopes[k]
        if (s_prev < 0 <= s_next) or (s_prev <= 0 < s_next):
            mins.append(k)
        if (s_prev > 0 >= s_next) or (s_prev >= 0 > s_next):
            maxs.append(k)
    return np.asarray(mins, dtype=int), np.asarray(maxs, dtype=int)


def _godunov_flux(rho_l, rho_r, rho_bps, q_bps, min_idx, max_idx):
    """Exact min/max-over-interval Godunov flux for piecewise-linear q."""
    q_l = np.interp(rho_l, rho_bps, q_bps)
    q_r = np.interp(rho_r, rho_bps, q_bps)
    up = rho_l <= rho_r
    out_min = np.minimum(q_l, q_r)
    for k in min_idx:
        inside = (rho_l < rho_bps[k]) & (rho_bps[k] < rho_r)
        out_min = np.where(inside, np.minimum(out_min, q_bps[k]), out_min)
    out_max = np.maximum(q_l, q_r)
    for k in max_idx:
        inside = (rho_r < rho_bps[k]) & (rho_bps[k] < rho_l)
        out_max = np.where(inside, np.maximum(out_max, q_bps[k]), out_max)
    return np.where(up, out_min, out_max)


def solve_lwr_godunov(rho0, flux: EffectiveFlux, grid: Grid1D,
                      store_every: int = 1) -> GridField:
    """Finite-volume march of rho_t + (rho * F(1/rho))_x = 0.

    ``rho0`` holds nx cell averages (or a callable sampled at centers).
    With the periodic boundary the total mass sum(rho)*dx is conserved to
    round-off; the per-step drift is recorded in the diagnostics.
    """
    rho = np.asarray(rho0(grid.centers) if callable(rho0) else rho0, dtype=float).copy()
    if rho.shape != (grid.nx,):
        raise DomainError(f"rho0 must have nx = {grid.nx} cell values")
    if np.any(rho < 0):
        raise DomainError("densities must be nonnegative")

    rho_bps, q_bps = lwr_flow_breakpoints(flux)
    min_idx, max_idx = _q_extrema(rho_bps, q_bps)
    wave_speed = float(np.max(np.abs(np.diff(q_bps) / np.diff(rho_bps))))
    cfl_dt = grid.dx / max(wave_speed, 1e-300)
    dt, n_full, rem = _resolve_steps(grid.t_final, grid.dt, cfl_dt, "solve_lwr_godunov")
    n_steps = n_full + (1 if rem else 0)

    periodic = grid.boundary == BOUNDARY_PERIODIC
    lam_base = 1.0 / grid.dx
    snaps = [rho.copy()]
    times = [0.0]
    mass_drift = 0.0
    mass_prev = float(np.sum(rho)) * grid.dx
    for step in range(1, n_steps + 1):
        h = dt if step <= n_full else rem
        if periodic:
            ext = np.concatenate((rho[-1:], rho, rho[:1]))
        else:
            left = max(2.0 * rho[0] - rho[1], 0.0)
            right = max(2.0 * rho[-1] - rho[-2], 0.0)
            ext = np.concatenate(((left,), rho, (right,)))
        f_iface = _godunov_flux(ext[:-1], ext[1:], rho_bps, q_bps, min_idx, max_idx)
        rho = rho + (h * lam_base) * (f_iface[:-1] - f_iface[1:])
        if periodic:
            mass = float(np.sum(rho)) * grid.dx
            mass_drift = max(mass_drift, abs(mass - mass_prev))
            mass_prev = mass
        if step % store_every == 0 or step == n_steps:
            snaps.append(rho.copy())
            times.append(step * dt if step <= n_full else grid.t_final)

    return GridField(grid=grid, kind="lwr_rho", times=np.asarray(times),
                     values=np.asarray(snaps),
                     diagnostics={"dt": dt, "wave_speed": wave_speed,
                                  "max_mass_drift_per_step": mass_drift})


def invert_profile(x, u, y):
    """Exact piecewise-linear spatial inverse w = u^{-1} sampled at y.

    ``u`` must be strictly increasing over the nodes ``x``. Outside the
    range [u[0], u[-1]] the inverse is extended linearly with the edge
    gradients. Round trip: u(w(y)) = y exactly (to round-off) at interior
    points.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape or x.ndim != 1 or x.size < 2:
        raise DomainError("need matching 1-d node and value arrays")
    du = np.diff(u)
    bad = np.nonzero(du <= 0)[0]
    if bad.size:
        raise DomainError(f"profile not strictly increasing: first violation "
                          f"between nodes {bad[0]} and {bad[0] + 1}")
    y = np.asarray(y, dtype=float)
    w = np.interp(y, u, x)
    dx = np.diff(x)
    below = y < u[0]
    above = y > u[-1]
    if np.any(below):
        w = np.where(below, x[0] + (y - u[0]) * dx[0] / du[0], w)
    if np.any(above):
        w = np.where(above, x[-1] + (y - u[-1]) * dx[-1] / du[-1], w)
    return w


def pushforward_density(x, u, target_grid: Grid1D) -> np.ndarray:
    """Cell averages of the push-forward density of dx under u.

    The density of cars on the road is rho = d/dy u^{-1}(y). Returned as
    exact cell averages over the target grid's cells: rho_j =
    (w(y_{j+1}) - w(y_j)) / dy with w the exact inverse, so the mass in any
    union of cells telescopes to a difference of w values.
    """
    edges = target_grid.nodes
    w = invert_profile(x, u, edges)
    return np.diff(w) / target_grid.dx


def write_field_plot_script(field: GridField, csv_path, script_path,
                            scenario_hash=None, max_curves: int = 8):
    """Gnuplot script drawing a few stored snapshots from the field CSV."""
    from .io_utils import write_gnuplot_script
    n = field.times.size
    pick = np.unique(np.linspace(0, n - 1, min(max_curves, n)).astype(int))
    ylabel = "u" if field.kind == "hj_u" else "rho"
    plot_lines = [
        (f"csv using (abs($1 - {field.times[int(k)]!r}) < 1e-12 ? $2 : NaN):3 "
         f"with lines title 't={field.times[int(k)]:.3g}'")
        for k in pick
    ]
    write_gnuplot_script(script_path, csv_path,
                         f"{ylabel}(x,t) snapshots", "x", ylabel,
                         plot_lines, extra=("set grid",),
                         scenario_hash=scenario_hash)
