"""Optimal velocity families, random driver-type mixes, and model checks.

A driver type z is described by an optimal velocity function V_z mapping
headway p (distance to the car in front, meters) to speed (m/s):

- zero for p in [0, h0] (jam headway),
- increasing beyond h0,
- bounded by v_max, approached (or attained) as p grows.

Three families are provided:

- ``newell_exponential``:   V(p) = v_max * (1 - exp(-lam*(p - h0))),  p >= h0.
  Closed-form inverse, never attains v_max (inverse diverges at v_max).
- ``truncated_linear``:     V(p) = min(sigma*(p - h0), v_max),        p >= h0.
  Attains v_max at the saturation headway h0 + v_max/sigma, so its
  inverse stays bounded near v_max.
- ``piecewise_linear_table``: V interpolates increasing breakpoints
  (p_k, v_k) starting at (h0, 0); constant v_max beyond the last one.

A ``TypeDistribution`` is a finite law over types with strictly positive
probabilities. Sampling is reproducible: a PCG64 stream seeded with the
given integer produces uniform doubles u_k, and index k is the inverse-CDF
lookup ``searchsorted(cumsum(probabilities), u_k, side="right")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

FAMILY_NEWELL = "newell_exponential"
FAMILY_TRUNCATED_LINEAR = "truncated_linear"
FAMILY_TABLE = "piecewise_linear_table"

FAMILIES = (FAMILY_NEWELL, FAMILY_TRUNCATED_LINEAR, FAMILY_TABLE)


@dataclass(frozen=True)
class VehicleTypeSpec:
    """One driver type: an optimal velocity function and its parameters.

    Units: h0 in meters, v_max in m/s; newell rate ``lam`` per meter,
    truncated-linear slope ``sigma`` per second, table breakpoints in
    (meters, m/s).
    """

    id: str
    family: str
    h0: float
    v_max: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not self.h0 > 0:
            raise DomainError(f"jam headway must be positive, got h0={self.h0}")
        if not self.v_max > 0:
            raise DomainError(f"maximal speed must be positive, got v_max={self.v_max}")
        if self.family == FAMILY_NEWELL:
            lam = self.params.get("lam")
            if lam is None or not lam > 0:
                raise DomainError("newell_exponential needs params['lam'] > 0")
        elif self.family == FAMILY_TRUNCATED_LINEAR:
            sigma = self.params.get("sigma")
            if sigma is None or not sigma > 0:
                raise DomainError("truncated_linear needs params['sigma'] > 0")
        else:
            bps = self.params.get("breakpoints")
            if bps is None or len(bps) < 2:
                raise DomainError("piecewise_linear_table needs >= 2 breakpoints")
            ps = np.asarray([b[0] for b in bps], dtype=float)
            vs = np.asarray([b[1] for b in bps], dtype=float)
            if ps[0] != self.h0 or vs[0] != 0.0:
                raise DomainError("first table breakpoint must be (h0, 0)")
            if np.any(np.diff(ps) <= 0):
                raise DomainError("table headways must be strictly increasing")
            if np.any(np.diff(vs) < 0):
                raise DomainError("table speeds must be nondecreasing")
            if vs[-1] != self.v_max:
                raise DomainError("last table speed must equal v_max")

    @property
    def lipschitz_constant(self) -> float:
        """Finite Lipschitz constant of V (the H1 constant alpha_z)."""
        if self.family == FAMILY_NEWELL:
            return self.v_max * self.params["lam"]
        if self.family == FAMILY_TRUNCATED_LINEAR:
            return self.params["sigma"]
        ps, vs = self._table_arrays()
        return float(np.max(np.diff(vs) / np.diff(ps)))

    @property
    def inverse_diverges(self) -> bool:
        """True when V never attains v_max, so V^{-1}(theta) -> inf at v_max."""
        return self.family == FAMILY_NEWELL

    @property
    def saturation_headway(self) -> float | None:
        """Headway at which v_max is attained, or None when only asymptotic."""
        if self.family == FAMILY_TRUNCATED_LINEAR:
            return self.h0 + self.v_max / self.params["sigma"]
        if self.family == FAMILY_TABLE:
            ps, vs = self._table_arrays()
            return float(ps[np.argmax(vs == self.v_max)])
        return None

    def _table_arrays(self):
        bps = self.params["breakpoints"]
        ps = np.asarray([b[0] for b in bps], dtype=float)
        vs = np.asarray([b[1] for b in bps], dtype=float)
        return ps, vs


def ovf_eval(spec: VehicleTypeSpec, p):
    """Evaluate V_z at headway p (scalar or array), meters -> m/s.

    Exactly zero for p <= h0; raises DomainError on negative headway.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0):
        raise DomainError("headway must be nonnegative")
    if spec.family == FAMILY_NEWELL:
        lam = spec.params["lam"]
        out = np.where(arr > spec.h0,
                       spec.v_max * -np.expm1(-lam * np.maximum(arr - spec.h0, 0.0)),
                       0.0)
    elif spec.family == FAMILY_TRUNCATED_LINEAR:
        sigma = spec.params["sigma"]
        out = np.minimum(sigma * np.maximum(arr - spec.h0, 0.0), spec.v_max)
    else:
        ps, vs = spec._table_arrays()
        out = np.interp(arr, ps, vs)
    return float(out) if np.isscalar(p) else out


def ovf_inverse(spec: VehicleTypeSpec, theta):
    """Unique headway p in [h0, inf) with V_z(p) = theta.

    Defined for 0 <= theta < v_max (strict); V^{-1}(0) = h0. For the table
    family a flat segment maps to its leftmost headway.
    """
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0):
        raise DomainError("speed must be nonnegative")
    if np.any(arr >= spec.v_max):
        raise DomainError(f"inverse undefined at or above v_max={spec.v_max}")
    if spec.family == FAMILY_NEWELL:
        lam = spec.params["lam"]
        out = spec.h0 - np.log1p(-arr / spec.v_max) / lam
    elif spec.family == FAMILY_TRUNCATED_LINEAR:
        out = spec.h0 + arr / spec.params["sigma"]
    else:
        ps, vs = spec._table_arrays()
        out = _table_inverse(ps, vs, np.atleast_1d(arr)).reshape(arr.shape)
    return float(out) if np.isscalar(theta) else out


def _table_inverse(ps, vs, theta):
    # Leftmost exact piecewise-linear inversion; theta < vs[-1] guaranteed.
    idx = np.searchsorted(vs, theta, side="left")
    hit = vs[idx] == theta
    seg = np.maximum(idx - 1, 0)
    dv = vs[seg + 1] - vs[seg]
    dv = np.where(dv == 0.0, 1.0, dv)  # only used where not an exact hit
    frac = (theta - vs[seg]) / dv
    return np.where(hit, ps[idx], ps[seg] + frac * (ps[seg + 1] - ps[seg]))


@dataclass(frozen=True)
class TypeDistribution:
    """Finite full-support law of the i.i.d. driver types.

    Derived metadata: h0_bar (mean jam headway), v_max_under (min of the
    per-type maximal speeds), v_max_global (max of them), alpha (max of the
    per-type Lipschitz constants).
    """

    entries: tuple  # of (VehicleTypeSpec, probability)

    def __post_init__(self):
        entries = tuple((spec, float(prob)) for spec, prob in self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) < 1:
            raise DomainError("distribution needs at least one type")
        probs = np.array([prob for _, prob in entries], dtype=float)
        if np.any(probs <= 0):
            raise DomainError("all probabilities must be strictly positive (full support)")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1 within 1e-12")

    @property
    def types(self) -> tuple:
        return tuple(spec for spec, _ in self.entries)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([prob for _, prob in self.entries], dtype=float)

    @property
    def h0_bar(self) -> float:
        return float(sum(prob * spec.h0 for spec, prob in self.entries))

    @property
    def v_max_under(self) -> float:
        return min(spec.v_max for spec, _ in self.entries)

    @property
    def v_max_global(self) -> float:
        return max(spec.v_max for spec, _ in self.entries)

    @property
    def alpha(self) -> float:
        return max(spec.lipschitz_constant for spec, _ in self.entries)

    def speed_of(self, type_indices, headways):
        """Vectorized V_{Z_i}(headway_i) for index array Z and headway array."""
        type_indices = np.asarray(type_indices)
        headways = np.asarray(headways, dtype=float)
        out = np.empty_like(headways)
        for k, spec in enumerate(self.types):
            mask = type_indices == k
            if np.any(mask):
                out[mask] = ovf_eval(spec, headways[mask])
        return out

    def inverse_of(self, type_indices, theta: float):
        """Vectorized V^{-1}_{Z_i}(theta) for an index array Z."""
        type_indices = np.asarray(type_indices)
        out = np.empty(type_indices.shape, dtype=float)
        for k, spec in enumerate(self.types):
            mask = type_indices == k
            if np.any(mask):
                out[mask] = ovf_inverse(spec, theta)
        return out


def sample_types(dist: TypeDistribution, n: int, seed: int) -> np.ndarray:
    """Draw n i.i.d. type indices, reproducibly.

    Generator: PCG64 bit stream seeded with ``seed``; u = rng.random(n);
    index = searchsorted(cumsum(probabilities), u, side="right"). Identical
    (dist, n, seed) always yields the identical index sequence.
    """
    if n < 1:
        raise DomainError(f"need n >= 1 samples, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(n)
    cum = np.cumsum(dist.probabilities)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, u, side="right")
    return idx.astype(np.int64)


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """Per-assumption verdicts for a type distribution (H1..H5)."""

    checks: tuple
    divergence_probe: tuple  # (theta, E[V^{-1}(theta)]) pairs near v_max_under

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary_lines(self):
        return [f"{c.name}: {'pass' if c.passed else 'FAIL'} - {c.detail}" for c in self.checks]


def validate_assumptions(dist: TypeDistribution) -> ValidationReport:
    """Check H1-H5 for a finite type distribution.

    H1-H4 are structural per family (each family is Lipschitz, flat on
    [0, h0], increasing past h0, bounded by v_max), backed by spot checks.
    H5 (divergence of E[V^{-1}(theta)] as theta -> v_max_under) holds for a
    finite mix exactly when some type attaining the minimal v_max has a
    divergent inverse - true for newell_exponential, false for the families
    that reach v_max at finite headway.
    """
    checks = []

    # H1: uniform Lipschitz bound.
    alphas = [spec.lipschitz_constant for spec in dist.types]
    h1_ok = all(math.isfinite(a) and a > 0 for a in alphas)
    checks.append(AssumptionCheck(
        "H1", h1_ok, f"max Lipschitz constant alpha = {max(alphas):g}"))

    # H2: positive jam headway and exact zero speed on [0, h0].
    h2_ok, h2_detail = True, "V = 0 on [0, h0] for every type"
    for spec in dist.types:
        samples = np.linspace(0.0, spec.h0, 5)
        vals = ovf_eval(spec, samples)
        if spec.h0 <= 0 or np.any(vals != 0.0):
            h2_ok, h2_detail = False, f"type {spec.id}: nonzero speed at or below h0"
            break
    checks.append(AssumptionCheck("H2", h2_ok, h2_detail))

    # H3: increasing past h0 (strictly, below saturation).
    h3_ok, h3_detail = True, "strictly increasing past h0 up to saturation"
    for spec in dist.types:
        if spec.family == FAMILY_TABLE:
            _, vs = spec._table_arrays()
            if np.any(np.diff(vs) == 0.0):
                h3_ok = False
                h3_detail = f"type {spec.id}: flat interior table segment"
                break
        sat = spec.saturation_headway
        hi = sat if sat is not None else spec.h0 + 20.0 / spec.lipschitz_constant
        probe = np.linspace(spec.h0, hi, 33)
        if np.any(np.diff(ovf_eval(spec, probe)) < 0):
            h3_ok, h3_detail = False, f"type {spec.id}: not nondecreasing"
            break
    checks.append(AssumptionCheck("H3", h3_ok, h3_detail))

    # H4: speeds bounded by v_max and approaching it.
    h4_ok, h4_detail = True, f"v_max_global = {dist.v_max_global:g}"
    for spec in dist.types:
        far = spec.h0 + 50.0 / spec.params.get("lam", 1.0) if spec.family == FAMILY_NEWELL \
            else (spec.saturation_headway or spec.h0) + 1.0
        v = ovf_eval(spec, far)
        if v > spec.v_max or v < spec.v_max * (1.0 - 1e-6):
            h4_ok, h4_detail = False, f"type {spec.id}: V({far:g}) = {v:g} vs v_max {spec.v_max:g}"
            break
    checks.append(AssumptionCheck("H4", h4_ok, h4_detail))

    # H5: some minimal-v_max type must have a divergent inverse.
    v_under = dist.v_max_under
    h5_ok = any(spec.v_max == v_under and spec.inverse_diverges for spec in dist.types)
    if h5_ok:
        h5_detail = "a minimal-v_max type has divergent inverse near v_max"
    else:
        h5_detail = ("every type attaining v_max_under reaches it at finite headway; "
                     "E[V^{-1}(theta)] stays bounded near v_max_under")
    probe = []
    for k in range(2, 7):
        theta = v_under - 10.0 ** (-k)
        if theta < 0:
            continue
        val = sum(prob * float(ovf_inverse(spec, theta)) for spec, prob in dist.entries)
        probe.append((theta, val))
    checks.append(AssumptionCheck("H5", h5_ok, h5_detail))

    return ValidationReport(checks=tuple(checks), divergence_probe=tuple(probe))


def demo_two_type_mix() -> TypeDistribution:
    """Equiprobable two-type mix used across demos and tests.

    Type A: newell, h0=1, v_max=1, lam=1; type B: newell, h0=2, v_max=2,
    lam=0.5. Mean jam headway 1.5, v_max_under 1, alpha 1.
    """
    a = VehicleTypeSpec("A", FAMILY_NEWELL, h0=1.0, v_max=1.0, params={"lam": 1.0})
    b = VehicleTypeSpec("B", FAMILY_NEWELL, h0=2.0, v_max=2.0, params={"lam": 0.5})
    return TypeDistribution(((a, 0.5), (b, 0.5)))
