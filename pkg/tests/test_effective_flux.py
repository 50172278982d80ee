import math

import numpy as np
import pytest

from ftlmacro import (ConfigurationError, DomainError, FAMILY_TRUNCATED_LINEAR,
                      FluxConstructionError, TypeDistribution, VehicleTypeSpec,
                      build_flux, effective_speed_at, expected_inverse,
                      flux_eval, lwr_flow, lwr_flow_breakpoints, lwr_speed,
                      ovf_eval, read_flux_csv, write_flux_csv)
from conftest import EXPECTED_INV_99, EXPECTED_INV_HALF, P_HALF_A


# -- expected inverse ---------------------------------------------------------

def test_expected_inverse_at_zero_is_mean_jam_headway(mix):
    assert expected_inverse(mix, 0.0) == pytest.approx(1.5, abs=1e-15)


def test_expected_inverse_closed_form(mix):
    assert expected_inverse(mix, 0.5) == pytest.approx(EXPECTED_INV_HALF, abs=1e-12)
    assert expected_inverse(mix, 0.99) == pytest.approx(EXPECTED_INV_99, abs=1e-12)


def test_expected_inverse_domain(mix):
    with pytest.raises(DomainError):
        expected_inverse(mix, 1.0)  # v_max_under
    with pytest.raises(DomainError):
        expected_inverse(mix, -0.1)


def test_expected_inverse_monotone(mix):
    thetas = np.linspace(0.0, 0.999, 400)
    vals = expected_inverse(mix, thetas)
    assert np.all(np.diff(vals) > 0)


# -- construction -------------------------------------------------------------

def test_homogeneous_collapse(single_a, type_a):
    flux = build_flux(single_a, p_max=8.0, grid_points=200, tol=1e-8)
    above = flux.p_grid > 1.0
    exact = ovf_eval(type_a, flux.p_grid[above])
    assert np.max(np.abs(flux.F_values[above] - exact)) <= 1e-8
    assert flux_eval(flux, 1.0 + math.log(2.0)) == pytest.approx(0.5, abs=1e-4)


def test_root_residual_invariant(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    above = flux.p_grid > flux.h0_bar
    resid = np.abs(expected_inverse(mix, flux.F_values[above]) - flux.p_grid[above])
    assert np.max(resid) <= 1e-10


def test_point_root_matches_closed_form(mix):
    assert effective_speed_at(mix, EXPECTED_INV_HALF, tol=1e-12) == pytest.approx(0.5, abs=1e-8)


def test_flux_zero_at_and_below_mean_jam_headway(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert flux_eval(flux, flux.h0_bar) == 0.0
    assert flux_eval(flux, 0.7) == 0.0
    assert effective_speed_at(mix, mix.h0_bar) == 0.0


def test_grid_contains_mean_jam_headway_exactly(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert np.any(flux.p_grid == mix.h0_bar)


def test_h5_failure_blocks_construction():
    tl = VehicleTypeSpec("T", FAMILY_TRUNCATED_LINEAR, h0=1.0, v_max=1.0,
                         params={"sigma": 1.0})
    dist = TypeDistribution(((tl, 1.0),))
    with pytest.raises(FluxConstructionError):
        build_flux(dist, p_max=5.0, grid_points=50, tol=1e-8)


def test_p_max_below_mean_jam_headway_rejected(mix):
    with pytest.raises(ConfigurationError):
        build_flux(mix, p_max=1.0, grid_points=50, tol=1e-8)


def test_capped_precision_warns(mix):
    with pytest.warns(RuntimeWarning):
        build_flux(mix, p_max=12.0, grid_points=100, tol=1e-12)


# -- evaluation ---------------------------------------------------------------

def test_flux_eval_trivials(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert flux_eval(flux, 0.0) == 0.0
    k = 120
    assert flux_eval(flux, flux.p_grid[k]) == flux.F_values[k]
    with pytest.raises(DomainError):
        flux_eval(flux, -1.0)


def test_flux_eval_clamps_beyond_table(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert flux_eval(flux, 100.0) == flux.F_values[-1]


def test_interpolation_error_quadratic(single_a, type_a):
    # between grid points of a homogeneous table, |interp - closed form|
    # is bounded by the piecewise-linear remainder dp^2 * max|F''| / 8
    flux = build_flux(single_a, p_max=8.0, grid_points=200, tol=1e-10)
    dp = np.max(np.diff(flux.p_grid))
    mids = 0.5 * (flux.p_grid[:-1] + flux.p_grid[1:])
    sel = mids > 1.0 + dp  # skip the kink cell at h0
    err = np.abs(flux_eval(flux, mids[sel]) - ovf_eval(type_a, mids[sel]))
    assert np.max(err) <= dp ** 2 / 8.0 + 1e-10  # max |F''| = 1 for this type


def test_endpoint_limits(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=400, tol=1e-10)
    above = flux.p_grid > flux.h0_bar
    first_above = flux.F_values[above][0]
    assert 0.0 < first_above < 0.05  # vanishes toward the plateau edge
    assert np.max(flux.F_values) < flux.v_max_under  # approaches, never reaches
    assert flux.F_values[-1] > 0.99 * flux.v_max_under


def test_strictly_increasing_above_plateau(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=400, tol=1e-10)
    above = flux.p_grid > flux.h0_bar
    assert np.all(np.diff(flux.F_values[above]) > 0)


# -- LWR laws -----------------------------------------------------------------

def test_lwr_speed_examples(mix, single_a):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert lwr_speed(flux, 1.0 / flux.h0_bar) == 0.0
    f1 = build_flux(single_a, p_max=8.0, grid_points=400, tol=1e-10)
    assert lwr_speed(f1, 1.0 / P_HALF_A) == pytest.approx(0.5, abs=1e-4)
    # rho -> 0+ approaches the table's saturation value
    assert lwr_speed(flux, 1e-6) == flux.F_values[-1]
    with pytest.raises(DomainError):
        lwr_speed(flux, 0.0)


def test_lwr_speed_nonincreasing(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    rho = np.linspace(0.01, 1.0, 300)
    v = lwr_speed(flux, rho)
    assert np.all(np.diff(v) <= 1e-15)


def test_lwr_flow_examples(mix, single_a):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    assert lwr_flow(flux, 0.0) == 0.0
    assert lwr_flow(flux, 1.0 / flux.h0_bar) == 0.0
    f1 = build_flux(single_a, p_max=8.0, grid_points=400, tol=1e-10)
    rho = 1.0 / P_HALF_A
    assert lwr_flow(f1, rho) == pytest.approx(0.5 / P_HALF_A, abs=1e-4)
    with pytest.raises(DomainError):
        lwr_flow(flux, -0.5)


def test_lwr_flow_breakpoints_exact(mix):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    rho_bps, q_bps = lwr_flow_breakpoints(flux)
    assert np.all(np.diff(rho_bps) > 0)
    # the piecewise-linear representation reproduces q everywhere, including
    # between breakpoints (q is genuinely linear there)
    mids = 0.5 * (rho_bps[1:] + rho_bps[:-1])
    sel = mids > 0
    q_interp = np.interp(mids[sel], rho_bps, q_bps)
    q_direct = lwr_flow(flux, mids[sel])
    assert np.max(np.abs(q_interp - q_direct)) <= 1e-12


# -- I/O ----------------------------------------------------------------------

def test_flux_csv_round_trip(mix, tmp_path):
    flux = build_flux(mix, p_max=8.0, grid_points=200, tol=1e-10)
    path = tmp_path / "flux.csv"
    write_flux_csv(flux, path)
    back = read_flux_csv(path)
    assert np.array_equal(back.p_grid, flux.p_grid)
    assert np.array_equal(back.F_values, flux.F_values)
    assert back.h0_bar == flux.h0_bar
    assert back.v_max_under == flux.v_max_under
    assert back.tol == flux.tol
