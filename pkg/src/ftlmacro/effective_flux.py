"""Effective velocity construction and the macroscopic speed/flow laws.

The homogenized speed-vs-headway law of a type mix is the increasing map
F(p) with F(p) = 0 for p <= h0_bar and, above h0_bar, the unique root of

    E[V^{-1}_{Z}(F(p))] = p,

where the expectation is an exact finite sum over the discrete law. The
root is found by bisection in theta on (0, v_max_under): the expected
inverse is increasing and continuous there, its derivative can blow up
near v_max_under, so bisection is the unconditionally convergent choice.

The tabulated map yields the macroscopic speed law v(rho) = F(1/rho) and
flow q(rho) = rho * v(rho). Because F is piecewise linear in p, q is
piecewise linear in rho with breakpoints at rho = 1/p, which the
conservation-law solver exploits for exact interface fluxes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, FluxConstructionError
from .velocity_models import TypeDistribution, ovf_inverse, validate_assumptions

_MAX_BISECTIONS = 200


def expected_inverse(dist: TypeDistribution, theta):
    """Exact finite sum E[V^{-1}(theta)] = sum_i prob_i * V_i^{-1}(theta).

    Defined for 0 <= theta < v_max_under; equals h0_bar at theta = 0.
    """
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0):
        raise DomainError("speed must be nonnegative")
    if np.any(arr >= dist.v_max_under):
        raise DomainError(f"expected inverse undefined at or above v_max_under={dist.v_max_under}")
    out = _expected_inverse_raw(dist, arr)
    return float(out) if np.isscalar(theta) else out


def _expected_inverse_raw(dist, theta_arr):
    out = np.zeros_like(theta_arr, dtype=float)
    for spec, prob in dist.entries:
        out += prob * ovf_inverse(spec, theta_arr)
    return out


@dataclass(frozen=True)
class EffectiveFlux:
    """Tabulated effective velocity: p_grid -> F_values, plus mix metadata."""

    p_grid: np.ndarray
    F_values: np.ndarray
    h0_bar: float
    v_max_under: float
    tol: float

    def __post_init__(self):
        p = np.asarray(self.p_grid, dtype=float)
        f = np.asarray(self.F_values, dtype=float)
        object.__setattr__(self, "p_grid", p)
        object.__setattr__(self, "F_values", f)
        if p.ndim != 1 or p.shape != f.shape or p.size < 2:
            raise DomainError("flux table needs matching 1-d grids with >= 2 points")
        if p[0] != 0.0 or np.any(np.diff(p) <= 0):
            raise DomainError("p_grid must start at 0 and increase strictly")
        below = p <= self.h0_bar
        if np.any(f[below] != 0.0):
            raise DomainError("F must vanish exactly at grid points <= h0_bar")
        above = p > self.h0_bar
        if np.any(f[above] <= 0.0) or np.any(np.diff(f[above]) <= 0.0):
            raise DomainError("F must be strictly increasing above h0_bar")
        if np.any(f >= self.v_max_under):
            raise DomainError("F must stay below v_max_under")

    @property
    def p_max(self) -> float:
        return float(self.p_grid[-1])

    def __call__(self, p):
        return flux_eval(self, p)


def effective_speed_at(dist: TypeDistribution, p, tol: float = 1e-12):
    """Root solve for the effective speed at headway p (scalar or array).

    Returns 0 for p <= h0_bar; otherwise bisects theta on (0, v_max_under)
    until |E[V^{-1}(theta)] - p| <= tol. If double precision near
    v_max_under cannot reach tol, a capped-precision warning is issued and
    the best bracket midpoint is returned.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p_arr < 0):
        raise DomainError("headway must be nonnegative")
    out = np.zeros_like(p_arr)
    active = p_arr > dist.h0_bar
    if np.any(active):
        out[active] = _bisect_effective_speed(dist, p_arr[active], tol)
    return float(out[0]) if np.isscalar(p) else out.reshape(np.shape(p))


def _bisect_effective_speed(dist, targets, tol):
    v_under = dist.v_max_under
    # Shrink the bracket's gap to v_max_under geometrically until the upper
    # endpoint's expected inverse exceeds every target headway.
    eps = 1e-3 * v_under
    eps_floor = 8.0 * np.finfo(float).eps * v_under
    p_need = float(np.max(targets))
    while _expected_inverse_raw(dist, np.array([v_under - eps]))[0] < p_need:
        if eps <= eps_floor:
            raise FluxConstructionError(
                f"cannot bracket the effective speed for p={p_need:g}: "
                "E[V^{-1}] stays below it up to double-precision limits near "
                f"v_max_under={v_under:g} (H5 failure or p too large)")
        eps = max(eps / 8.0, eps_floor)

    lo = np.zeros_like(targets)
    hi = np.full_like(targets, v_under - eps)
    mid = 0.5 * (lo + hi)
    done = np.zeros(targets.shape, dtype=bool)
    for _ in range(_MAX_BISECTIONS):
        resid = _expected_inverse_raw(dist, mid) - targets
        done = np.abs(resid) <= tol
        if np.all(done):
            break
        lo = np.where(~done & (resid < 0), mid, lo)
        hi = np.where(~done & (resid > 0), mid, hi)
        mid = np.where(done, mid, 0.5 * (lo + hi))
        if np.all(done | (hi - lo <= np.finfo(float).eps * v_under)):
            break
    if not np.all(done):
        warnings.warn(
            "effective-speed bisection hit double-precision resolution before "
            f"reaching tol={tol:g} at {int(np.sum(~done))} grid point(s); "
            "returning the capped-precision values", RuntimeWarning)
    return mid


def build_flux(dist: TypeDistribution, p_max: float, grid_points: int,
               tol: float = 1e-10) -> EffectiveFlux:
    """Tabulate the effective velocity on a uniform headway grid.

    The grid spans [0, p_max] with a node placed exactly at h0_bar (the
    zero plateau ends exactly there); values above h0_bar are bisection
    roots with headway residual <= tol, values at or below are exactly 0.
    Requires the distribution to pass H1-H5.
    """
    report = validate_assumptions(dist)
    if not report.all_pass:
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        raise FluxConstructionError(
            f"distribution fails assumptions {failed}; the defining root may "
            "not exist for large headways")
    if not p_max > dist.h0_bar:
        raise ConfigurationError(f"p_max={p_max:g} must exceed h0_bar={dist.h0_bar:g}")
    if grid_points < 2:
        raise ConfigurationError("need at least 2 grid points")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")

    grid = np.linspace(0.0, p_max, grid_points)
    h0b = dist.h0_bar
    if np.min(np.abs(grid - h0b)) > 1e-9 * max(1.0, p_max):
        grid = np.sort(np.append(grid, h0b))
    else:
        grid[np.argmin(np.abs(grid - h0b))] = h0b

    values = effective_speed_at(dist, grid, tol)
    values[grid <= h0b] = 0.0
    above = grid > h0b
    if np.any(np.diff(values[above]) <= 0.0):
        raise FluxConstructionError(
            "tabulated effective speeds are not strictly increasing: adjacent "
            "roots collapsed at double precision near v_max_under; reduce p_max "
            "or the number of grid points")
    return EffectiveFlux(p_grid=grid, F_values=values, h0_bar=h0b,
                         v_max_under=dist.v_max_under, tol=tol)


def flux_eval(flux: EffectiveFlux, p):
    """Piecewise-linear interpolation of the table; clamps beyond p_max.

    Clamping documents the saturation: F is asymptotically flat near
    v_max_under, so holding the last tabulated value is the intended
    large-headway behavior.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0):
        raise DomainError("headway must be nonnegative")
    out = np.interp(arr, flux.p_grid, flux.F_values)
    return float(out) if np.isscalar(p) else out


def flux_lipschitz(flux: EffectiveFlux, p_lo: float | None = None,
                   p_hi: float | None = None) -> float:
    """Max adjacent table slope over [p_lo, p_hi] (whole table by default)."""
    p, f = flux.p_grid, flux.F_values
    slopes = np.diff(f) / np.diff(p)
    if p_lo is not None or p_hi is not None:
        lo = 0.0 if p_lo is None else p_lo
        hi = flux.p_max if p_hi is None else p_hi
        keep = (p[1:] >= lo) & (p[:-1] <= hi)
        slopes = slopes[keep] if np.any(keep) else slopes
    return float(np.max(slopes)) if slopes.size else 0.0


def lwr_speed(flux: EffectiveFlux, rho):
    """Macroscopic speed law v(rho) = F(1/rho), defined for rho > 0."""
    arr = np.asarray(rho, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("density must be strictly positive")
    out = np.interp(1.0 / arr, flux.p_grid, flux.F_values)
    return float(out) if np.isscalar(rho) else out


def lwr_flow(flux: EffectiveFlux, rho):
    """Flow q(rho) = rho * v(rho); q(0) = 0 by continuity."""
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0):
        raise DomainError("density must be nonnegative")
    safe = np.where(arr > 0, arr, 1.0)
    out = np.where(arr > 0, arr * np.interp(1.0 / safe, flux.p_grid, flux.F_values), 0.0)
    return float(out) if np.isscalar(rho) else out


def lwr_flow_breakpoints(flux: EffectiveFlux):
    """Exact piecewise-linear representation of q(rho).

    On each table segment F(p) = a + b*p, so q(rho) = rho*F(1/rho) = a*rho + b
    for rho in [1/p_{k+1}, 1/p_k]: q is piecewise linear in rho with
    breakpoints at the reciprocals of the positive grid headways, plus the
    origin (the segment rho in (0, 1/p_max] has slope F(p_max)).

    Returns (rho_bps, q_bps), strictly increasing densities.
    """
    pos = flux.p_grid > 0
    p = flux.p_grid[pos]
    f = flux.F_values[pos]
    rho = 1.0 / p[::-1]
    q = (f / p)[::-1]
    rho = np.concatenate(([0.0], rho))
    q = np.concatenate(([0.0], q))
    return rho, q


def write_flux_csv(flux: EffectiveFlux, path, extra_header=()):
    """Flux table as CSV with metadata header comment lines."""
    from .io_utils import write_csv
    meta = [f"h0_bar={flux.h0_bar!r}", f"v_max_under={flux.v_max_under!r}",
            f"tol={flux.tol!r}", *extra_header]
    write_csv(path, meta, ("p", "F"), np.column_stack([flux.p_grid, flux.F_values]))


def read_flux_csv(path) -> EffectiveFlux:
    """Read back a table written by :func:`write_flux_csv`."""
    meta = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ")
                if "=" in body:
                    key, _, val = body.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            if line.startswith("p,"):
                continue
            rows.append([float(tok) for tok in line.split(",")])
    data = np.asarray(rows, dtype=float)
    return EffectiveFlux(p_grid=data[:, 0], F_values=data[:, 1],
                         h0_bar=float(meta["h0_bar"]),
                         v_max_under=float(meta["v_max_under"]),
                         tol=float(meta["tol"]))


def write_fundamental_diagram_csv(flux: EffectiveFlux, path, n_points: int = 200,
                                  extra_header=()):
    """(rho, v, q) curve from near-zero density up to the jam density 1/h0_bar."""
    from .io_utils import write_csv
    rho_jam = 1.0 / flux.h0_bar
    rho = np.linspace(1.0 / flux.p_max, rho_jam, n_points)
    v = lwr_speed(flux, rho)
    q = rho * v
    meta = [f"h0_bar={flux.h0_bar!r}", f"v_max_under={flux.v_max_under!r}", *extra_header]
    write_csv(path, meta, ("rho", "v", "q"), np.column_stack([rho, v, q]))
