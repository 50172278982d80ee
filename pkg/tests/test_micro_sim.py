import math

import numpy as np
import pytest

from ftlmacro import (ConfigurationError, DomainError, FreeFlow, GhostHeadway,
                      MicroState, PrescribedTrajectory, asymptotic_speed,
                      check_comparison, corrector_sequence, integrate,
                      localization_bound_check, ovf_inverse, sample_types)
from conftest import EXPECTED_INV_HALF, P_HALF_A


def make_state(dist, positions, seed=0, closure=None):
    types = sample_types(dist, len(positions), seed)
    return MicroState(positions=np.asarray(positions, dtype=float),
                      type_indices=types, dist=dist,
                      leader_closure=closure or FreeFlow())


# -- integrate ----------------------------------------------------------------

def test_jammed_follower_with_free_leader(single_a):
    # follower at gap exactly h0: zero speed; leader at v_max pulls away
    state = make_state(single_a, [0.0, 1.0])
    traj = integrate(state, horizon=10.0, dt=0.5, sample_every=1)
    assert traj.positions[1, 0] == 0.0  # first step displacement is zero
    gaps = traj.positions[:, 1] - traj.positions[:, 0]
    assert np.all(np.diff(gaps) >= 0) and gaps[-1] > gaps[0]
    assert np.all(np.diff(traj.positions, axis=1) > 0)


def test_corrector_profile_is_exact_traveling_wave(mix):
    theta = 0.5
    types = sample_types(mix, 50, seed=5)
    c = corrector_sequence(types, mix, theta)
    gap = ovf_inverse(mix.types[types[-1]], theta)
    state = MicroState(positions=c, type_indices=types, dist=mix,
                       leader_closure=GhostHeadway(gap))
    traj = integrate(state, horizon=1.0, dt=0.01, sample_every=1)
    steps = np.diff(traj.positions, axis=0)
    tol = 4.0 * np.spacing(np.max(traj.positions))
    assert np.max(np.abs(steps - theta * 0.01)) <= tol


def test_mean_speed_on_corrector_profile(mix):
    theta = 0.5
    types = sample_types(mix, 201, seed=9)
    c = corrector_sequence(types, mix, theta)
    gap = ovf_inverse(mix.types[types[-1]], theta)
    state = MicroState(positions=c, type_indices=types, dist=mix,
                       leader_closure=GhostHeadway(gap))
    traj = integrate(state, horizon=10.0, dt=0.01, sample_every=1000)
    mean_speed = (traj.positions[-1] - traj.positions[0]) / 10.0
    assert np.max(np.abs(mean_speed - theta)) <= 1e-8


def test_displacement_bounded_by_vmax(mix):
    rng = np.random.Generator(np.random.PCG64(3))
    pos = np.concatenate(([0.0], np.cumsum(rng.uniform(0.8, 4.0, 60))))
    state = make_state(mix, pos, seed=3)
    T = 15.0
    traj = integrate(state, horizon=T, dt=0.5)
    moved = traj.positions[-1] - traj.positions[0]
    assert np.all(moved >= 0.0)
    assert np.max(moved) <= mix.v_max_global * T + 1e-9


def test_per_step_speed_bounds_and_ordering(mix):
    rng = np.random.Generator(np.random.PCG64(8))
    pos = np.concatenate(([0.0], np.cumsum(rng.uniform(0.5, 5.0, 80))))
    state = make_state(mix, pos, seed=8)
    traj = integrate(state, horizon=8.0, dt=0.25, sample_every=1)
    assert np.all(np.diff(traj.positions, axis=1) > 0)  # ordering at all samples
    rates = np.diff(traj.positions, axis=0) / 0.25
    assert np.min(rates) >= 0.0
    assert np.max(rates) <= mix.v_max_global + 1e-12


def test_integrate_deterministic_bitwise(mix):
    state = make_state(mix, np.arange(30) * 2.5, seed=21)
    a = integrate(state, horizon=5.0, dt=0.5)
    b = integrate(state, horizon=5.0, dt=0.5)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.times, b.times)


def test_step_bound_enforced(mix):
    state = make_state(mix, [0.0, 2.0, 4.0])
    with pytest.raises(ConfigurationError, match="dt\\*alpha"):
        integrate(state, horizon=1.0, dt=1.5)  # alpha = 1 -> bound is 1


def test_initial_ordering_enforced(mix):
    types = sample_types(mix, 3, 0)
    with pytest.raises(DomainError):
        MicroState(positions=np.array([0.0, 2.0, 1.5]), type_indices=types, dist=mix)


def test_prescribed_leader(mix):
    types = sample_types(mix, 4, seed=2)
    closure = PrescribedTrajectory(position=lambda t: 9.0 + 0.3 * t)
    state = MicroState(positions=np.array([0.0, 3.0, 6.0, 9.0]),
                       type_indices=types, dist=mix, leader_closure=closure)
    traj = integrate(state, horizon=4.0, dt=0.5)
    assert traj.positions[-1, -1] == pytest.approx(9.0 + 0.3 * 4.0, abs=1e-12)


def test_prescribed_leader_violation_detected(mix):
    types = sample_types(mix, 3, seed=2)
    closure = PrescribedTrajectory(position=lambda t: 4.0 - 3.0 * t)
    state = MicroState(positions=np.array([0.0, 2.0, 4.0]),
                       type_indices=types, dist=mix, leader_closure=closure)
    with pytest.raises(DomainError):
        integrate(state, horizon=4.0, dt=0.5)


# -- corrector sequence ---------------------------------------------------------

def test_corrector_single_type_closed_form(single_a):
    c = corrector_sequence(np.zeros(4, dtype=int), single_a, 0.5)
    expected = P_HALF_A * np.arange(4)
    assert np.max(np.abs(c - expected)) <= 1e-12


def test_corrector_small_theta_gap_approaches_h0(mix):
    types = sample_types(mix, 20, seed=4)
    c = corrector_sequence(types, mix, 1e-12)
    gaps = np.diff(c)
    h0s = np.array([mix.types[k].h0 for k in types[:-1]])
    assert np.max(np.abs(gaps - h0s)) <= 1e-9


def test_corrector_law_of_large_numbers(mix):
    n = 10 ** 6
    types = sample_types(mix, n + 1, seed=123)
    c = corrector_sequence(types, mix, 0.5)
    assert abs(c[n] / n - EXPECTED_INV_HALF) <= 0.01


def test_corrector_domain(mix):
    types = sample_types(mix, 5, seed=1)
    for bad in (0.0, 1.0, 1.5, -0.2):
        with pytest.raises(DomainError):
            corrector_sequence(types, mix, bad)


# -- asymptotic speed -----------------------------------------------------------

def test_subjam_headway_never_moves(single_a):
    v = asymptotic_speed(0.5, single_a, seed=11, n_vehicles=100, horizon=20.0)
    assert v == 0.0


def test_homogeneous_matches_closed_form(single_a):
    v = asymptotic_speed(P_HALF_A, single_a, seed=7, n_vehicles=900, horizon=200.0)
    assert abs(v - 0.5) <= 0.02


def test_insulation_check(mix):
    with pytest.raises(ConfigurationError, match="minimal admissible"):
        asymptotic_speed(2.0, mix, seed=1, n_vehicles=10, horizon=100.0)
    with pytest.raises(ConfigurationError):
        asymptotic_speed(0.0, mix, seed=1, n_vehicles=10 ** 6, horizon=1.0)


# -- comparison principle --------------------------------------------------------

def ordered_pair(dist, rng, n=40, horizon=10.0, dt=0.5):
    # the pointwise max of two strictly increasing configurations is a
    # strictly increasing configuration dominating the first
    types = sample_types(dist, n, int(rng.integers(0, 2 ** 31)))
    base = np.concatenate(([0.0], np.cumsum(rng.uniform(0.5, 4.0, n - 1))))
    other = rng.uniform(0.0, 2.0) + np.concatenate(
        ([0.0], np.cumsum(rng.uniform(0.5, 4.0, n - 1))))
    upper = np.maximum(base, other)
    state_a = MicroState(positions=base, type_indices=types, dist=dist)
    state_b = MicroState(positions=upper, type_indices=types, dist=dist)
    return (integrate(state_a, horizon, dt, sample_every=1),
            integrate(state_b, horizon, dt, sample_every=1))


def test_comparison_reflexive(mix):
    state = make_state(mix, np.arange(10) * 2.0, seed=5)
    traj = integrate(state, horizon=5.0, dt=0.5)
    assert check_comparison(traj, traj)


def test_comparison_translation(mix):
    types = sample_types(mix, 25, seed=6)
    base = np.arange(25) * 2.2
    ta = integrate(MicroState(positions=base, type_indices=types, dist=mix),
                   5.0, 0.5, sample_every=1)
    tb = integrate(MicroState(positions=base + 1.0, type_indices=types, dist=mix),
                   5.0, 0.5, sample_every=1)
    assert check_comparison(ta, tb)
    assert np.all(tb.positions - ta.positions >= -1e-12)


def test_comparison_random_pairs(mix):
    rng = np.random.Generator(np.random.PCG64(77))
    for _ in range(25):
        ta, tb = ordered_pair(mix, rng)
        assert check_comparison(ta, tb)


def test_comparison_metadata_mismatch(mix):
    state = make_state(mix, np.arange(10) * 2.0, seed=5)
    ta = integrate(state, horizon=5.0, dt=0.5)
    tb = integrate(state, horizon=5.0, dt=0.25)
    with pytest.raises(DomainError):
        check_comparison(ta, tb)


def test_comparison_requires_ordered_start(mix):
    types = sample_types(mix, 10, seed=5)
    base = np.arange(10) * 2.0
    ta = integrate(MicroState(positions=base + 1.0, type_indices=types, dist=mix),
                   2.0, 0.5)
    tb = integrate(MicroState(positions=base, type_indices=types, dist=mix),
                   2.0, 0.5)
    with pytest.raises(DomainError):
        check_comparison(ta, tb)


# -- localization bound -----------------------------------------------------------

def test_localization_identical_data_no_excess(mix):
    rep = localization_bound_check(mix, seed=3, K=5, horizon=10.0)
    assert rep.passed


def test_localization_small_K(mix):
    rep = localization_bound_check(mix, seed=17, K=1, horizon=20.0)
    assert rep.passed
    assert rep.max_excess <= 1e-6


def test_localization_large_K_small_time(mix):
    # (1 - exp(-alpha t))^50 is numerically ~0 early on: ordering must hold
    rep = localization_bound_check(mix, seed=23, K=50, horizon=5.0, dt=0.1)
    assert rep.passed


def test_localization_rejects_bad_K(mix):
    with pytest.raises(DomainError):
        localization_bound_check(mix, seed=1, K=0, horizon=1.0)
