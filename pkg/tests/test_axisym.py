from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from paneitz import axisym
from paneitz.bubbles import bubble_constants
from paneitz.curvature import affine_field, constant_field
from paneitz.errors import DomainError, PoleSingularityError
from paneitz.sphere_core import constants, sphere_measure


def _neg_family(grid, eps):
    """1 - (1+eps) s with s = ((1-cos theta)/2)^4: negative only in a cap around the south pole."""
    s = ((1.0 - np.cos(grid.theta)) / 2.0) ** 4
    return axisym.AxisymField(1.0 - (1.0 + eps) * s, grid)


# ----------------------------------------------------------------------------
# grid and operators
# ----------------------------------------------------------------------------
def test_grid_layout():
    grid = axisym.make_grid(5, 33)
    assert grid.theta[0] == 0.0
    assert grid.theta[-1] == pytest.approx(math.pi)
    assert np.all(np.diff(grid.theta) > 0)
    np.testing.assert_allclose(np.linalg.norm(grid.x, axis=1), 1.0)
    assert grid.integrate(np.ones(grid.size)) == pytest.approx(sphere_measure(5), rel=1e-12)


def test_grid_too_small():
    with pytest.raises(DomainError):
        axisym.make_grid(5, 4)


@pytest.mark.parametrize("n", [5, 6, 9])
def test_first_harmonic_is_an_eigenfunction(n):
    grid = axisym.make_grid(n, 33)
    u = axisym.AxisymField(np.cos(grid.theta), grid)
    np.testing.assert_allclose(axisym.laplacian_axisym(u).values, -n * u.values, atol=1e-10)
    lam = float(axisym.zonal_eigenvalue(n, 1))
    np.testing.assert_allclose(axisym.paneitz_apply(u, n).values, lam * u.values, atol=1e-8 * lam)


def test_constants_are_fixed_by_P():
    grid = axisym.make_grid(6, 33)
    one = axisym.AxisymField(np.ones(grid.size), grid)
    np.testing.assert_allclose(axisym.paneitz_apply(one).values, constants(6).d_n, rtol=1e-10)
    np.testing.assert_allclose(axisym.paneitz_solve(np.ones(grid.size), grid), 1.0 / constants(6).d_n,
                               rtol=1e-10)


def test_non_smooth_pole_is_rejected():
    grid = axisym.make_grid(5, 33)
    with pytest.raises(PoleSingularityError):
        axisym.laplacian_axisym(axisym.AxisymField(grid.theta.copy(), grid))


def test_field_shape_and_dimension_checks():
    grid = axisym.make_grid(5, 33)
    with pytest.raises(DomainError):
        axisym.AxisymField(np.ones(10), grid)
    with pytest.raises(DomainError):
        axisym.AxisymField(np.full(grid.size, np.nan), grid)
    with pytest.raises(DomainError):
        axisym.paneitz_apply(axisym.AxisymField(np.ones(grid.size), grid), n=6)


@pytest.mark.parametrize("n", [5, 6, 7, 8, 9, 10])
def test_factorization_identity_is_exact(n):
    assert all(axisym.factorization_identity(n, k) for k in range(21))


def test_low_zonal_eigenvalues_in_dimension_five():
    assert axisym.zonal_eigenvalue(5, 0) == Fraction(105, 16)
    assert float(axisym.zonal_eigenvalue(5, 1)) == 59.0625


@pytest.mark.parametrize("k", [0, 1, 2, 5, 10, 20])
def test_zonal_spectrum(k):
    grid = axisym.make_grid(5, 201)
    check = axisym.zonal_eigen_check(grid, k)
    assert check["inverse_rel_err"] < 1e-8
    assert check["rayleigh_rel_err"] < 1e-6


# ----------------------------------------------------------------------------
# bubbles on the grid
# ----------------------------------------------------------------------------
@pytest.mark.parametrize("lam", [1.0, 10.0])
def test_bubble_energy(lam):
    n = 5
    grid = axisym.make_grid(n, 201)
    u = axisym.bubble_field(grid, lam)
    assert axisym.energy_norm(u) ** 2 == pytest.approx(bubble_constants(n).S_n, rel=1e-6)
    assert axisym.axisym_J(u, constant_field(n, 1.0)) == pytest.approx(bubble_constants(n).S_n ** 0.8,
                                                                       rel=1e-6)


@pytest.mark.parametrize("n", [5, 6])
@pytest.mark.parametrize("lam", [1.0, 10.0, 100.0])
def test_bubble_solves_the_equation(n, lam):
    grid = axisym.make_grid(n, 401)
    u = axisym.bubble_field(grid, lam, axisym.SOUTH)
    res = axisym.residuals(u, constant_field(n, 1.0))
    assert res["preconditioned"] < 1e-6


def test_strong_residual_of_a_resolved_bubble():
    grid = axisym.make_grid(5, 65)
    u = axisym.bubble_field(grid, 10.0)
    assert axisym.residuals(u, constant_field(5, 1.0))["strong"] < 1e-6


def test_residual_drops_under_refinement():
    K = constant_field(5, 1.0)
    coarse = axisym.residuals(axisym.bubble_field(axisym.make_grid(5, 33), 10.0), K)["preconditioned"]
    fine = axisym.residuals(axisym.bubble_field(axisym.make_grid(5, 65), 10.0), K)["preconditioned"]
    assert fine <= coarse / 4


def test_bubble_fit_recovers_scale_and_weight():
    grid = axisym.make_grid(5, 201)
    u = axisym.bubble_field(grid, 7.0)
    fit = axisym.fit_single_bubble(u.with_values(1.3 * u.values))
    assert fit.pole == axisym.NORTH
    assert fit.lam == pytest.approx(7.0, rel=1e-5)
    assert fit.alpha == pytest.approx(1.3, rel=1e-8)
    assert fit.fit_residual < 1e-5


def test_bubble_fit_with_high_frequency_noise():
    grid = axisym.make_grid(5, 201)
    delta = axisym.bubble_field(grid, 7.0, axisym.SOUTH).values
    noise = 1e-4 * delta.max() * np.cos(40 * grid.theta)
    u = axisym.AxisymField(delta + noise, grid)
    rel_noise = math.sqrt(axisym.energy_inner(noise, noise, grid)) / axisym.energy_norm(u)
    fit = axisym.fit_single_bubble(u)
    assert fit.pole == axisym.SOUTH
    assert fit.lam == pytest.approx(7.0, rel=0.01)
    assert 0.9 * rel_noise <= fit.fit_residual <= 1.01 * rel_noise


def test_bubble_fit_of_zero_function():
    grid = axisym.make_grid(5, 33)
    with pytest.raises(DomainError):
        axisym.fit_single_bubble(axisym.AxisymField(np.zeros(grid.size), grid))


def test_warm_start_is_capped():
    grid = axisym.make_grid(5, 201)
    u = axisym.warm_start(grid, 100.0)
    np.testing.assert_allclose(u.values, axisym.bubble_field(grid, 20.1).values)


# ----------------------------------------------------------------------------
# Newton solver
# ----------------------------------------------------------------------------
def test_newton_from_a_perturbed_bubble():
    grid = axisym.make_grid(5, 201)
    init = axisym.bubble_field(grid, 2.0)
    init = init.with_values(init.values * (1.0 + 0.01 * np.cos(grid.theta)))
    sol, report = axisym.solve_curvature_equation(constant_field(5, 1.0), init)
    assert report.converged
    assert report.positivity
    assert report.residual_sup < 1e-8
    assert report.J == pytest.approx(bubble_constants(5).S_n ** 0.8, rel=1e-6)
    assert report.v_eta == 0.0
    assert report.bubble_fit.fit_residual < 1e-5
    assert report.bubble_fit.alpha == pytest.approx(1.0, abs=1e-4)


def test_constant_K_rescales_the_bubble():
    n = 5
    c = 2.0
    grid = axisym.make_grid(n, 201)
    init = axisym.bubble_field(grid, 2.0)
    sol, report = axisym.solve_equation3(constant_field(n, c), init, axisym.SolveOptions(fit=False))
    assert report.converged
    assert report.bubble_fit is None
    expected = c ** (-(n - 4) / 8) * init.values
    np.testing.assert_allclose(sol.values, expected, rtol=1e-6)


def test_solver_input_checks():
    grid = axisym.make_grid(5, 33)
    init = axisym.bubble_field(grid, 2.0)
    with pytest.raises(DomainError):
        axisym.solve_curvature_equation(affine_field(5, 0.5, [0, 0, 0, 0, 0, 1.0]), init)
    with pytest.raises(DomainError):
        axisym.solve_curvature_equation(constant_field(5, 1.0), init.with_values(-init.values))


def test_iteration_budget_is_reported():
    grid = axisym.make_grid(5, 65)
    init = axisym.bubble_field(grid, 2.0)
    init = init.with_values(init.values * (1.0 + 0.2 * np.cos(grid.theta)))
    _, report = axisym.solve_curvature_equation(constant_field(5, 1.0), init, axisym.SolveOptions(max_iter=1, fit=False))
    assert not report.converged
    assert report.newton_iters == 1
    assert report.message


def test_sweep_keeps_the_order_of_scales():
    grid = axisym.make_grid(5, 65)
    K = affine_field(5, 1.0, [0, 0, 0, 0, 0, 0.05])
    reports = axisym.solve_sweep(K, grid, [1.5, 2.0], axisym.SolveOptions(fit=False))
    assert len(reports) == 2
    assert all(r.newton_iters >= 0 for r in reports)


def test_solution_frame_columns():
    grid = axisym.make_grid(5, 33)
    u = axisym.bubble_field(grid, 2.0)
    frame = axisym.solution_frame(u, constant_field(5, 1.0))
    assert list(frame.columns) == ["theta", "u", "residual"]
    assert len(frame) == 33


# ----------------------------------------------------------------------------
# negative part
# ----------------------------------------------------------------------------
def test_positive_field_has_no_negative_part():
    grid = axisym.make_grid(5, 65)
    neg = axisym.negative_part_machinery(axisym.AxisymField(np.ones(grid.size), grid), constant_field(5, 1.0))
    assert neg.u_minus_norm == 0.0
    assert neg.w_norm == 0.0
    assert neg.w_nonpositive


def test_negative_part_chain_and_sign():
    grid = axisym.make_grid(5, 201)
    K = affine_field(5, 1.0, [0, 0, 0, 0, 0, 0.1])
    neg = axisym.negative_part_machinery(_neg_family(grid, 0.05), K)
    lhs, mid, rhs = neg.chain
    assert neg.u_minus_norm > 0
    assert 0 < lhs <= mid
    assert rhs > 0
    assert neg.w_nonpositive


def test_w_ratio_stays_bounded_as_the_negative_part_shrinks():
    grid = axisym.make_grid(5, 201)
    K = constant_field(5, 1.0)
    ratios = [axisym.negative_part_machinery(_neg_family(grid, eps), K).w1_ratio for eps in (1e-3, 1e-2, 1e-1)]
    assert all(r > 0 for r in ratios)
    assert max(ratios) / min(ratios) < 10


def test_w_scales_with_the_negative_part():
    n = 5
    p = (n + 4) / (n - 4)
    grid = axisym.make_grid(n, 201)
    K = constant_field(n, 1.0)
    u = _neg_family(grid, 0.1)
    t = 1.7
    scaled = u.with_values(np.maximum(u.values, 0.0) - t * np.maximum(-u.values, 0.0))
    base = axisym.negative_part_machinery(u, K)
    other = axisym.negative_part_machinery(scaled, K)
    assert other.w_norm / base.w_norm == pytest.approx(t ** p, rel=1e-8)
    assert other.w1_ratio == pytest.approx(base.w1_ratio, rel=1e-8)
