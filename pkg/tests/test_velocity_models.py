import math

import numpy as np
import pytest

from ftlmacro import (DomainError, FAMILY_NEWELL, FAMILY_TABLE,
                      FAMILY_TRUNCATED_LINEAR, TypeDistribution,
                      VehicleTypeSpec, ovf_eval, ovf_inverse, sample_types,
                      validate_assumptions)
from conftest import P_HALF_A, P_HALF_B


def bisect_inverse(spec, theta, tol=1e-13):
    """Independent oracle: bisection on the forward map."""
    lo, hi = spec.h0, spec.h0 + 1.0
    while ovf_eval(spec, hi) < theta:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ovf_eval(spec, mid) < theta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- evaluation --------------------------------------------------------------

def test_eval_zero_region_boundary(type_a):
    assert ovf_eval(type_a, 1.0) == 0.0
    assert ovf_eval(type_a, 0.0) == 0.0
    assert ovf_eval(type_a, 0.5) == 0.0


def test_eval_newell_closed_form(type_a):
    assert ovf_eval(type_a, 1.0 + math.log(2.0)) == pytest.approx(0.5, abs=1e-12)


def test_eval_truncated_linear_saturation(trunc_lin):
    assert ovf_eval(trunc_lin, 10.0) == 2.0
    assert trunc_lin.saturation_headway == 6.0


def test_eval_negative_headway_raises(type_a):
    with pytest.raises(DomainError):
        ovf_eval(type_a, -0.1)


def test_eval_vectorized(type_a):
    p = np.array([0.0, 1.0, 2.0])
    v = ovf_eval(type_a, p)
    assert v.shape == (3,)
    assert v[0] == v[1] == 0.0


# -- inversion ---------------------------------------------------------------

def test_inverse_at_zero_is_jam_headway(type_a):
    assert ovf_inverse(type_a, 0.0) == 1.0


def test_inverse_newell_against_bisection_oracle(type_a, type_b):
    assert ovf_inverse(type_a, 0.5) == pytest.approx(P_HALF_A, abs=1e-12)
    assert ovf_inverse(type_a, 0.5) == pytest.approx(bisect_inverse(type_a, 0.5), abs=1e-10)
    assert ovf_inverse(type_b, 0.5) == pytest.approx(P_HALF_B, abs=1e-12)
    assert ovf_inverse(type_b, 0.5) == pytest.approx(bisect_inverse(type_b, 0.5), abs=1e-10)


def test_inverse_domain_errors(type_a, trunc_lin):
    with pytest.raises(DomainError):
        ovf_inverse(type_a, 1.0)  # theta == v_max is undefined
    with pytest.raises(DomainError):
        ovf_inverse(type_a, -0.01)
    with pytest.raises(DomainError):
        ovf_inverse(trunc_lin, 2.0)


def test_truncated_linear_inverse_bounded(trunc_lin):
    # inverse stays below the saturation headway as theta -> v_max
    assert ovf_inverse(trunc_lin, 2.0 - 1e-9) <= trunc_lin.saturation_headway


# -- table family ------------------------------------------------------------

def table_spec():
    bps = ((1.0, 0.0), (2.0, 0.4), (3.0, 0.7), (5.0, 0.9), (8.0, 1.0))
    return VehicleTypeSpec("tab", FAMILY_TABLE, h0=1.0, v_max=1.0,
                           params={"breakpoints": bps})


def test_table_eval_and_inverse():
    spec = table_spec()
    assert ovf_eval(spec, 0.5) == 0.0
    assert ovf_eval(spec, 2.0) == 0.4
    assert ovf_eval(spec, 2.5) == pytest.approx(0.55, abs=1e-12)
    assert ovf_eval(spec, 10.0) == 1.0
    assert ovf_inverse(spec, 0.4) == 2.0
    assert ovf_inverse(spec, 0.55) == pytest.approx(2.5, abs=1e-12)
    assert not spec.inverse_diverges


def test_table_flat_segment_ties_resolve_left():
    bps = ((1.0, 0.0), (2.0, 0.5), (3.0, 0.5), (4.0, 1.0))
    spec = VehicleTypeSpec("flat", FAMILY_TABLE, h0=1.0, v_max=1.0,
                           params={"breakpoints": bps})
    assert ovf_inverse(spec, 0.5) == 2.0  # leftmost headway of the flat segment


def test_table_validation():
    with pytest.raises(DomainError):
        VehicleTypeSpec("bad", FAMILY_TABLE, h0=1.0, v_max=1.0,
                        params={"breakpoints": ((1.5, 0.0), (2.0, 1.0))})
    with pytest.raises(DomainError):
        VehicleTypeSpec("bad", FAMILY_TABLE, h0=1.0, v_max=1.0,
                        params={"breakpoints": ((1.0, 0.0), (2.0, 0.8))})


# -- invariants over random specs/speeds -------------------------------------

def random_specs(rng, n):
    specs = []
    for k in range(n):
        fam = rng.integers(0, 3)
        h0 = float(rng.uniform(0.5, 3.0))
        v_max = float(rng.uniform(0.5, 3.0))
        if fam == 0:
            specs.append(VehicleTypeSpec(f"n{k}", FAMILY_NEWELL, h0, v_max,
                                         {"lam": float(rng.uniform(0.2, 2.0))}))
        elif fam == 1:
            specs.append(VehicleTypeSpec(f"t{k}", FAMILY_TRUNCATED_LINEAR, h0, v_max,
                                         {"sigma": float(rng.uniform(0.2, 2.0))}))
        else:
            n_bp = int(rng.integers(3, 7))
            ps = h0 + np.concatenate(([0.0], np.cumsum(rng.uniform(0.3, 2.0, n_bp - 1))))
            vs = v_max * np.concatenate(([0.0], np.sort(rng.uniform(0.05, 0.95, n_bp - 2)), [1.0]))
            bps = tuple(zip(ps.tolist(), vs.tolist()))
            specs.append(VehicleTypeSpec(f"p{k}", FAMILY_TABLE, h0, v_max,
                                         {"breakpoints": bps}))
    return specs


def test_round_trip_property():
    rng = np.random.Generator(np.random.PCG64(2024))
    for spec in random_specs(rng, 100):
        thetas = rng.uniform(0.0, 0.999 * spec.v_max, 10)
        tol = 1e-8 if spec.family == FAMILY_TABLE else 1e-10
        for theta in thetas:
            p = ovf_inverse(spec, theta)
            assert abs(ovf_eval(spec, p) - theta) <= tol


def test_monotonicity_property():
    rng = np.random.Generator(np.random.PCG64(7))
    for spec in random_specs(rng, 60):
        pairs = np.sort(rng.uniform(spec.h0, spec.h0 + 10.0, (20, 2)), axis=1)
        v1 = ovf_eval(spec, pairs[:, 0])
        v2 = ovf_eval(spec, pairs[:, 1])
        assert np.all(v1 <= v2 + 1e-15)
        sat = spec.saturation_headway or np.inf
        below = (pairs[:, 1] < sat) & (pairs[:, 1] - pairs[:, 0] > 1e-9)
        if spec.family != FAMILY_TABLE:  # tables may contain flat segments
            assert np.all(v1[below] < v2[below])


def test_lipschitz_property():
    rng = np.random.Generator(np.random.PCG64(11))
    for spec in random_specs(rng, 60):
        alpha = spec.lipschitz_constant
        p = rng.uniform(0.0, spec.h0 + 10.0, (30, 2))
        dv = np.abs(ovf_eval(spec, p[:, 0]) - ovf_eval(spec, p[:, 1]))
        assert np.all(dv <= alpha * np.abs(p[:, 0] - p[:, 1]) + 1e-12)


def test_zero_region_exact():
    rng = np.random.Generator(np.random.PCG64(13))
    for spec in random_specs(rng, 30):
        samples = rng.uniform(0.0, spec.h0, 20)
        assert np.all(ovf_eval(spec, samples) == 0.0)


# -- distribution ------------------------------------------------------------

def test_distribution_metadata(mix):
    assert mix.h0_bar == pytest.approx(1.5, abs=1e-15)
    assert mix.v_max_under == 1.0
    assert mix.v_max_global == 2.0
    assert mix.alpha == pytest.approx(1.0, abs=1e-15)


def test_distribution_validation(type_a, type_b):
    with pytest.raises(DomainError):
        TypeDistribution(())
    with pytest.raises(DomainError):
        TypeDistribution(((type_a, 0.0), (type_b, 1.0)))
    with pytest.raises(DomainError):
        TypeDistribution(((type_a, 0.6), (type_b, 0.5)))


# -- assumption validation ----------------------------------------------------

def test_single_newell_all_pass(single_a):
    report = validate_assumptions(single_a)
    assert report.all_pass


def test_two_newell_pass_with_divergent_probe(mix):
    report = validate_assumptions(mix)
    assert report.all_pass
    values = [v for _, v in report.divergence_probe]
    assert all(b > a for a, b in zip(values, values[1:]))  # monotone divergence


def test_truncated_linear_fails_h5(trunc_lin):
    dist = TypeDistribution(((trunc_lin, 1.0),))
    report = validate_assumptions(dist)
    assert not report.check("H5").passed
    assert report.check("H1").passed and report.check("H2").passed
    # inverse stays bounded by the saturation headway near v_max
    values = [v for _, v in report.divergence_probe]
    assert max(values) <= trunc_lin.saturation_headway


def test_mixed_minimal_type_decides_h5(type_b, trunc_lin):
    # v_max_under attained only by the truncated type -> bounded inverse -> H5 fails
    tl = VehicleTypeSpec("T1", FAMILY_TRUNCATED_LINEAR, h0=1.0, v_max=1.0,
                         params={"sigma": 1.0})
    dist = TypeDistribution(((tl, 0.5), (type_b, 0.5)))
    assert not validate_assumptions(dist).check("H5").passed


# -- sampling ----------------------------------------------------------------

def test_sample_types_deterministic(mix):
    a = sample_types(mix, 5, seed=42)
    b = sample_types(mix, 5, seed=42)
    assert np.array_equal(a, b)


def test_sample_types_degenerate(single_a):
    assert np.all(sample_types(single_a, 10, seed=999) == 0)


def test_sample_types_frequency(mix):
    idx = sample_types(mix, 10 ** 6, seed=1)
    freq = np.mean(idx == 0)
    assert 0.497 <= freq <= 0.503


def test_sample_types_rejects_zero(mix):
    with pytest.raises(DomainError):
        sample_types(mix, 0, seed=1)
