"""Follow-the-leader integrator, corrector profiles, and order properties.

The microscopic model advances each car at the speed its type assigns to
the gap ahead:

    dU_i/dt = V_{Z_i}(U_{i+1} - U_i),    i = 0..N-1,

closed at the top by a leader rule. Integration is explicit Euler with the
step bound dt * alpha <= 1 (alpha = max Lipschitz constant of the mix):
under that bound the update is monotone in every position, so the discrete
system inherits the continuous comparison principle exactly, keeps strict
ordering, and admits the corrector profiles as exact traveling solutions
(every car advances by exactly theta*dt per step).

Headways are always formed as differences of adjacent positions, never
accumulated separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError
from .velocity_models import TypeDistribution, ovf_inverse, sample_types


@dataclass(frozen=True)
class FreeFlow:
    """Leader drives at its own maximal speed."""

    label = "free_flow"


@dataclass(frozen=True)
class GhostHeadway:
    """Leader sees a constant virtual gap, hence drives at V_{Z_N}(gap)."""

    gap: float
    label = "ghost_headway"


@dataclass(frozen=True)
class PrescribedTrajectory:
    """Leader position is a given function of time (must stay ahead)."""

    position: Callable[[float], float]
    label = "prescribed"


@dataclass(frozen=True)
class MicroState:
    """Positions, frozen types, and top closure of a finite car window."""

    positions: np.ndarray
    type_indices: np.ndarray
    dist: TypeDistribution
    time: float = 0.0
    leader_closure: object = field(default_factory=FreeFlow)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        idx = np.asarray(self.type_indices, dtype=np.int64)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "type_indices", idx)
        if pos.ndim != 1 or pos.size < 2:
            raise DomainError("need at least two cars (one follower, one leader)")
        if idx.shape != pos.shape:
            raise DomainError("positions and type_indices must have equal length")
        if np.any(np.diff(pos) <= 0):
            raise DomainError("initial positions must be strictly increasing")
        if np.any(idx < 0) or np.any(idx >= len(self.dist.types)):
            raise DomainError("type index out of range")

    @property
    def n_vehicles(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class MicroTrajectory:
    """Sampled positions over time plus the originating run metadata."""

    times: np.ndarray
    positions: np.ndarray  # shape (n_samples, n_vehicles)
    type_indices: np.ndarray
    dist: TypeDistribution
    closure_label: str
    dt: float
    sample_every: int
    seed: int | None = None

    @property
    def n_vehicles(self) -> int:
        return self.positions.shape[1]

    def positions_at(self, t: float) -> np.ndarray:
        """All positions at time t, linearly interpolated between samples."""
        ts = self.times
        if t < ts[0] - 1e-9 or t > ts[-1] + 1e-9:
            raise DomainError(f"time {t} outside sampled range [{ts[0]}, {ts[-1]}]")
        k = np.searchsorted(ts, t, side="right") - 1
        k = min(max(k, 0), ts.size - 2) if ts.size > 1 else 0
        if ts.size == 1 or t <= ts[0]:
            return self.positions[0].copy()
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.positions[k] + w * self.positions[k + 1]

    def position_of(self, i, t):
        """Car-i position at times t (scalar or array), time-interpolated."""
        ts = self.times
        tq = np.asarray(t, dtype=float)
        if np.any(tq < ts[0] - 1e-9) or np.any(tq > ts[-1] + 1e-9):
            raise DomainError("query time outside sampled range")
        col = self.positions[:, i]
        out = np.interp(tq, ts, col)
        return float(out) if np.isscalar(t) else out

    def to_csv(self, path, scenario_hash=None):
        """Export rows (t, i, U_i, Z_i-label), one per sampled (t, i)."""
        from .io_utils import write_csv
        labels = [spec.id for spec in self.dist.types]
        meta = [f"closure={self.closure_label}", f"dt={self.dt!r}",
                f"sample_every={self.sample_every}", f"seed={self.seed}"]
        rows = ((t, i, self.positions[k, i], labels[self.type_indices[i]])
                for k, t in enumerate(self.times)
                for i in range(self.n_vehicles))
        write_csv(path, meta, ("t", "i", "U_i", "type"), rows, scenario_hash)


def default_dt(dist: TypeDistribution) -> float:
    """Half the monotonicity-preserving bound: dt = 0.5 / alpha."""
    return 0.5 / dist.alpha


def integrate(initial: MicroState, horizon: float, dt: float | None = None,
              sample_every: int = 1, seed: int | None = None) -> MicroTrajectory:
    """Forward-Euler integration over [time, time + horizon].

    Requires dt * alpha <= 1 (else the scheme would not be monotone); a
    final fractional step lands exactly on the horizon. Snapshots are kept
    every ``sample_every`` steps plus the final state. Deterministic:
    identical inputs produce bitwise-identical trajectories.
    """
    if horizon <= 0:
        raise ConfigurationError("horizon must be positive")
    if sample_every < 1:
        raise ConfigurationError("sample_every must be >= 1")
    dist = initial.dist
    if dt is None:
        dt = default_dt(dist)
    if dt <= 0 or dt * dist.alpha > 1.0 + 1e-12:
        raise ConfigurationError(
            f"dt={dt:g} violates the monotone step bound dt*alpha <= 1 "
            f"(alpha={dist.alpha:g}, bound dt <= {1.0 / dist.alpha:g})")

    n_full = int(math.floor(horizon / dt + 1e-9))
    rem = horizon - n_full * dt
    if rem < 1e-12 * max(1.0, horizon):
        rem = 0.0
    n_steps = n_full + (1 if rem > 0 else 0)

    evaluators = _type_evaluators(dist, initial.type_indices[:-1])
    leader_speed = _leader_rule(initial, dist)

    n_snap = n_steps // sample_every + 2 + (1 if n_steps % sample_every else 0)
    n_cars = initial.n_vehicles
    snaps = np.empty((n_snap, n_cars))
    times = np.empty(n_snap)

    u = initial.positions.copy()
    t0 = initial.time
    snaps[0] = u
    times[0] = t0
    out_k = 1
    speeds = np.zeros(n_cars)

    for step in range(1, n_steps + 1):
        h = dt if step <= n_full else rem
        t_prev = t0 + min(step - 1, n_full) * dt
        headways = np.diff(u)
        for idx, ev in evaluators:
            speeds[idx] = ev(headways[idx])
        if leader_speed is not None:
            speeds[-1] = leader_speed
            u = u + h * speeds
        else:  # prescribed leader: position set directly, not Euler-advanced
            u_new = u + h * speeds
            u_new[-1] = initial.leader_closure.position(t_prev + h)
            u = u_new
        if u[-1] <= u[-2]:
            raise DomainError("leader closure violated the ordering invariant")
        if step % sample_every == 0 or step == n_steps:
            snaps[out_k] = u
            times[out_k] = t0 + (step * dt if step <= n_full else horizon)
            out_k += 1

    return MicroTrajectory(times=times[:out_k], positions=snaps[:out_k],
                           type_indices=initial.type_indices, dist=dist,
                           closure_label=initial.leader_closure.label,
                           dt=dt, sample_every=sample_every, seed=seed)


def _type_evaluators(dist, follower_indices):
    """(index-array, vectorized V) pairs grouping followers by type."""
    from .velocity_models import ovf_eval
    groups = []
    for k, spec in enumerate(dist.types):
        idx = np.nonzero(follower_indices == k)[0]
        if idx.size:
            groups.append((idx, lambda h, s=spec: ovf_eval(s, h)))
    return groups


def _leader_rule(initial, dist):
    """Constant leader speed, or None when the trajectory is prescribed."""
    closure = initial.leader_closure
    leader_spec = dist.types[initial.type_indices[-1]]
    if isinstance(closure, FreeFlow):
        return leader_spec.v_max
    if isinstance(closure, GhostHeadway):
        if closure.gap < 0:
            raise DomainError("ghost gap must be nonnegative")
        from .velocity_models import ovf_eval
        return ovf_eval(leader_spec, closure.gap)
    if isinstance(closure, PrescribedTrajectory):
        return None
    raise DomainError(f"unknown leader closure {closure!r}")


def corrector_sequence(type_indices, dist: TypeDistribution, theta: float) -> np.ndarray:
    """Positions c_0..c_N at which every car drives at exactly speed theta.

    c_0 = 0 and c_{i+1} = c_i + V^{-1}_{Z_i}(theta): by construction
    V_{Z_i}(c_{i+1} - c_i) = theta, so c_i + theta*t solves the model. By
    the law of large numbers c_N / N converges to E[V^{-1}(theta)].
    """
    if not (0.0 < theta < dist.v_max_under):
        raise DomainError(
            f"theta={theta:g} outside (0, v_max_under={dist.v_max_under:g})")
    idx = np.asarray(type_indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size < 1:
        raise DomainError("need at least one type index")
    increments = dist.inverse_of(idx[:-1], theta) if idx.size > 1 else np.empty(0)
    return np.concatenate(([0.0], np.cumsum(increments)))


def asymptotic_speed(p: float, dist: TypeDistribution, seed: int,
                     n_vehicles: int, horizon: float,
                     dt: float | None = None) -> float:
    """Estimate the long-run speed U_0(T)/T from linear initial data U_i = p*i.

    Vehicle 0 must be insulated from the leader closure over the horizon:
    v_max_global * horizon < (n_vehicles/2) * p is required, else a
    configuration error reports the minimal admissible car count.
    """
    if p < 0:
        raise DomainError("headway must be nonnegative")
    if p == 0 or dist.v_max_global * horizon >= 0.5 * n_vehicles * p:
        n_min = math.inf if p == 0 else math.ceil(2.0 * dist.v_max_global * horizon / p) + 1
        raise ConfigurationError(
            f"vehicle 0 not insulated from the leader closure: need "
            f"n_vehicles > 2*v_max_global*horizon/p = minimal admissible {n_min}")
    types = sample_types(dist, n_vehicles + 1, seed)
    state = MicroState(positions=p * np.arange(n_vehicles + 1, dtype=float),
                       type_indices=types, dist=dist)
    if dt is None:
        dt = default_dt(dist)
    n_steps = max(1, int(math.ceil(horizon / dt - 1e-9)))
    traj = integrate(state, horizon, dt, sample_every=n_steps, seed=seed)
    return float(traj.positions[-1, 0] / horizon)


def check_comparison(traj_a: MicroTrajectory, traj_b: MicroTrajectory,
                     i0: int = 0) -> bool:
    """True iff U_i(t) <= tilde-U_i(t) + 1e-9 for all samples and i >= i0.

    Both trajectories must share types, closure, step size, and sample
    times, and must start ordered (U_i(0) <= tilde-U_i(0) for i >= i0).
    """
    if (traj_a.positions.shape != traj_b.positions.shape
            or not np.array_equal(traj_a.times, traj_b.times)
            or not np.array_equal(traj_a.type_indices, traj_b.type_indices)
            or traj_a.closure_label != traj_b.closure_label
            or traj_a.dt != traj_b.dt):
        raise DomainError("trajectories must share types, closure, dt, and sample times")
    if not 0 <= i0 < traj_a.n_vehicles:
        raise DomainError(f"i0={i0} out of range")
    if np.any(traj_a.positions[0, i0:] > traj_b.positions[0, i0:]):
        raise DomainError("initial data not ordered above i0")
    return bool(np.all(traj_a.positions[:, i0:] <= traj_b.positions[:, i0:] + 1e-9))


@dataclass(frozen=True)
class LocalizationReport:
    """Outcome of one tail-perturbation experiment against the decay bound."""

    K: int
    horizon: float
    dt: float
    n_vehicles: int
    max_excess: float
    max_gap: float  # max over samples of U_0 - tilde-U_0 (no bound subtracted)
    passed: bool


def localization_bound_check(dist: TypeDistribution, seed: int, K: int,
                             horizon: float, dt: float | None = None,
                             n_vehicles: int | None = None) -> LocalizationReport:
    """Probe how far a tail perturbation can push vehicle 0 forward.

    Builds two solutions ordered on cars 0..K only (the second starts
    behind the first somewhere above K), integrates both, and reports the
    maximal observed excess

        U_0(t) - tilde-U_0(t) - v_max_global * t * (1 - exp(-alpha*t))^K

    over sample times. Flags failure if the excess exceeds 1e-6.
    """
    if K < 1:
        raise DomainError("K must be >= 1")
    n = n_vehicles if n_vehicles is not None else K + 50
    if n <= K + 2:
        raise ConfigurationError("need n_vehicles > K + 2")
    rng = np.random.Generator(np.random.PCG64(seed))
    gaps = dist.h0_bar * rng.uniform(0.6, 3.0, size=n)
    base = np.concatenate(([0.0], np.cumsum(gaps)))

    # Shift profile: +0.75 m through car K, then drifts down to -1.5 m at a
    # rate below the local gap so the shifted positions stay increasing.
    shift = np.full(n + 1, 0.75)
    for i in range(K + 1, n + 1):
        shift[i] = max(shift[i - 1] - 0.4 * gaps[i - 1], -1.5)
    other = base + shift

    types = sample_types(dist, n + 1, seed)
    if dt is None:
        dt = 0.25 / dist.alpha
    state_a = MicroState(positions=base, type_indices=types, dist=dist)
    state_b = MicroState(positions=other, type_indices=types, dist=dist)
    traj_a = integrate(state_a, horizon, dt, sample_every=1, seed=seed)
    traj_b = integrate(state_b, horizon, dt, sample_every=1, seed=seed)

    t = traj_a.times
    gap = traj_a.positions[:, 0] - traj_b.positions[:, 0]
    bound = dist.v_max_global * t * (1.0 - np.exp(-dist.alpha * t)) ** K
    excess = gap - bound
    max_excess = float(np.max(excess))
    return LocalizationReport(K=K, horizon=horizon, dt=dt, n_vehicles=n,
                              max_excess=max_excess, max_gap=float(np.max(gap)),
                              passed=max_excess <= 1e-6)
