from __future__ import annotations

import numpy as np
import pytest

from paneitz.curvature import (
    affine_field,
    bump_field,
    callable_field,
    check_derivatives,
    constant_field,
    fd_hessian,
    parse_curvature,
)
from paneitz.errors import ConfigError
from paneitz.sphere_core import north_pole, tangent_frame


def _points(rng, n, count=10):
    x = rng.standard_normal((count, n + 1))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_expression_matches_affine_family(rng):
    x = _points(rng, 5)
    expr = parse_curvature("1+0.1*x6", 5)
    aff = parse_curvature("affine:1;0,0,0,0,0,0.1", 5)
    np.testing.assert_allclose(expr.value(x), aff.value(x), rtol=1e-14)
    np.testing.assert_allclose(expr.gradient(x), aff.gradient(x), atol=1e-14)
    np.testing.assert_allclose(expr.laplacian(x), aff.laplacian(x), atol=1e-14)


def test_first_spherical_harmonic_eigenvalue(rng):
    x = _points(rng, 6)
    K = affine_field(6, 0.0, [0, 0, 1.0])
    np.testing.assert_allclose(K.laplacian(x), -6 * x[:, 2], atol=1e-13)


def test_gradient_is_tangent(rng, saddle_K):
    x = _points(rng, 5)
    g = saddle_K.gradient(x)
    np.testing.assert_allclose(np.einsum("ij,ij->i", g, x), 0.0, atol=1e-14)


@pytest.mark.parametrize("source", [
    "1-0.05*(x6+x5**2)",
    "quadratic:1;0.1,0,0.3,0,0,-0.2",
    "bumps:1;0.3,0.5,0,0,0,0,0,1;0.2,0.25,1,0,0,0,0,0",
])
def test_derivatives_agree_with_finite_differences(source, rng):
    K = parse_curvature(source, 5)
    report = check_derivatives(K, rng, points=8)
    assert report["grad_rel_err"] < 1e-6
    assert report["laplacian_rel_err"] < 1e-5
    assert report["tangency"] < 1e-13
    assert report["k_min"] > 0


def test_hessian_in_frame_matches_finite_differences(saddle_K):
    y = north_pole(5)
    H = saddle_K.hessian_in_frame(y, tangent_frame(y))
    np.testing.assert_allclose(H, fd_hessian(saddle_K, y), atol=1e-6)
    assert np.trace(H) == pytest.approx(float(saddle_K.laplacian(y)))


def test_callable_field_uses_differences(rng):
    K = callable_field(5, lambda x: 1.0 + 0.1 * x[..., 5] ** 3, name="cubic")
    ref = parse_curvature("1+0.1*x6**3", 5)
    x = _points(rng, 5, 4)
    assert K.analytic is False
    np.testing.assert_allclose(K.gradient(x), ref.gradient(x), atol=1e-7)
    np.testing.assert_allclose(K.laplacian(x), ref.laplacian(x), atol=1e-5)


def test_sum_of_fields(rng):
    x = _points(rng, 5)
    K = constant_field(5, 1.0) + affine_field(5, 0.0, [0.2])
    np.testing.assert_allclose(K.value(x), 1.0 + 0.2 * x[:, 0])
    assert K.analytic


def test_bump_field_peaks_at_its_center():
    p = north_pole(5)
    K = bump_field(5, 1.0, [(0.5, 0.2, p)])
    assert float(K.value(p)) == pytest.approx(1.5)
    np.testing.assert_allclose(K.gradient(p), 0.0, atol=1e-14)


@pytest.mark.parametrize("source", ["1+0.1*y3", "1+0.1*x9", "1+*x2", "affine:one;2"])
def test_bad_strings_are_config_errors(source):
    with pytest.raises(ConfigError):
        parse_curvature(source, 5)
