from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from paneitz.errors import ChartSingularityError, DomainError, QuadratureBudgetError
from paneitz.sphere_core import (
    build_quadrature,
    check_dim,
    constants,
    exact_coefficients,
    exp_map,
    geodesic_distance,
    minimum_budget,
    north_pole,
    sphere_measure,
    stereographic,
    stereographic_inverse,
    tangent_frame,
)


class _Concentration:
    def __init__(self, a, lam):
        self.a = a
        self.lam = lam


@pytest.mark.parametrize("n", [5, 6, 7, 8, 12])
def test_coefficients_factor_exactly(n):
    c, d = exact_coefficients(n)
    a = Fraction(n * (n - 2), 4)
    b = Fraction((n - 4) * (n + 2), 4)
    assert a + b == c
    assert a * b == d
    assert c * c - 4 * d == 4


def test_constants_n5():
    c = constants(5)
    assert c.c_n == 5.5
    assert c.d_n == 6.5625
    assert c.beta_n == pytest.approx(105 ** 0.125)
    assert c.exponent == 9.0
    assert c.critical == 10.0
    assert c.vol_Sn == pytest.approx(math.pi ** 3)


@pytest.mark.parametrize("n", [4, 3, 5.5])
def test_low_or_fractional_dimension_rejected(n):
    with pytest.raises(DomainError):
        check_dim(n)


def test_geodesic_distance_is_clamped():
    a = north_pole(5)
    assert geodesic_distance(a, a * (1 + 1e-15)) == 0.0
    assert geodesic_distance(a, -a) == pytest.approx(math.pi)


def test_tangent_frame_is_orthonormal(rng):
    a = rng.standard_normal(7)
    a /= np.linalg.norm(a)
    F = tangent_frame(a)
    assert F.shape == (7, 6)
    np.testing.assert_allclose(F.T @ F, np.eye(6), atol=1e-13)
    np.testing.assert_allclose(F.T @ a, 0.0, atol=1e-13)


def test_exp_map_moves_by_the_tangent_length(rng):
    a = north_pole(5)
    v = tangent_frame(a) @ rng.standard_normal(5)
    v *= 0.7 / np.linalg.norm(v)
    assert geodesic_distance(a, exp_map(a, v)) == pytest.approx(0.7, abs=1e-12)


def test_stereographic_chart_inverts(rng):
    pole = north_pole(5)
    x = rng.standard_normal((20, 6))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = stereographic(pole, x)
    np.testing.assert_allclose(stereographic_inverse(pole, y), x, atol=1e-12)


def test_stereographic_equator_maps_to_unit_sphere():
    pole = north_pole(5)
    x = np.array([1.0, 0, 0, 0, 0, 0])
    assert np.linalg.norm(stereographic(pole, x)) == pytest.approx(1.0)
    assert np.linalg.norm(stereographic(pole, -pole)) == pytest.approx(0.0)


def test_stereographic_rejects_its_pole():
    pole = north_pole(5)
    with pytest.raises(ChartSingularityError):
        stereographic(pole, pole)


@pytest.mark.parametrize("n", [5, 6, 8])
def test_uniform_rule_weights_sum_to_volume(n):
    rule = build_quadrature(n)
    assert rule.weights.sum() == pytest.approx(sphere_measure(n), rel=1e-12)
    assert np.all(rule.weights > 0)


@pytest.mark.parametrize("lam", [1.0, 100.0, 1e4])
def test_concentrated_rule_integrates_low_degree_polynomials(lam, rng):
    n = 5
    a = rng.standard_normal(n + 1)
    a /= np.linalg.norm(a)
    rule = build_quadrature(n, _Concentration(a, lam))
    vol = sphere_measure(n)
    assert rule.integrate(np.ones(rule.size)) == pytest.approx(vol, rel=1e-12)
    assert rule.integrate(rule.nodes[:, 0] ** 2) == pytest.approx(vol / (n + 1), rel=1e-10)
    assert abs(rule.integrate(rule.nodes[:, 2])) < 1e-10


def test_sobol_rule_weights_sum_to_volume():
    rule = build_quadrature(6, angular="sobol", angular_order=7, seed=3)
    assert rule.weights.sum() == pytest.approx(sphere_measure(6), rel=1e-12)


def test_budget_below_minimum_names_the_requirement():
    with pytest.raises(QuadratureBudgetError) as info:
        build_quadrature(6, budget=minimum_budget(6) - 1)
    assert info.value.required == 9


def test_unknown_angular_rule():
    with pytest.raises(DomainError):
        build_quadrature(5, angular="lebedev")
