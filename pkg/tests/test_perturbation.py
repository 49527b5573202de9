from __future__ import annotations

import numpy as np
import pytest

from paneitz.curvature import check_derivatives
from paneitz.errors import PerturbationError, PreconditionError
from paneitz.morse import UPPER, find_critical_points
from paneitz.perturbation import (
    PlateauBump,
    bump_correction,
    index_bound_item,
    perturb_K,
    reduced_morse_index,
    transition,
)
from paneitz.sphere_core import basis_vector, north_pole


def test_transition_is_a_smooth_step():
    psi, d1, d2 = transition(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]))
    np.testing.assert_allclose(psi, [1.0, 1.0, 0.5, 0.0, 0.0], atol=1e-15)
    assert d1[2] < 0
    assert d1[0] == 0.0 and d1[-1] == 0.0
    assert d2[2] == pytest.approx(0.0, abs=1e-12)


def test_transition_derivative_matches_differences():
    t = np.linspace(0.05, 0.95, 7)
    h = 1e-6
    _, d1, _ = transition(t)
    fd = (transition(t + h)[0] - transition(t - h)[0]) / (2 * h)
    np.testing.assert_allclose(d1, fd, rtol=1e-6, atol=1e-9)


def test_plateau_bump_profile():
    bump = PlateauBump(rho=0.3, plateau=0.5)
    chi, _, _ = bump.of_cos(np.cos(np.array([0.0, 0.1, 0.3, 1.0])))
    np.testing.assert_allclose(chi, [1.0, 1.0, 0.0, 0.0], atol=1e-15)


def test_bump_correction_has_consistent_derivatives(rng):
    n = 6
    M = np.diag([-0.3, -0.2, 0.0, 0.0, 0.0, 0.0])
    G = bump_correction(n, north_pole(n), M, PlateauBump(rho=0.6, plateau=0.4))
    report = check_derivatives(G, rng, points=12)
    assert report["grad_rel_err"] < 1e-5
    assert report["laplacian_rel_err"] < 1e-3


def test_reduced_index_splits_location_and_scale(synthetic_K):
    z = basis_vector(6, 5)
    ri = reduced_morse_index(synthetic_K, z)
    assert ri.index == 4
    assert ri.z_contribution == 2
    assert ri.laplacian == pytest.approx(0.2)
    assert ri.lambda_contribution == 1
    assert ri.total == 3


def test_reduced_index_requires_a_critical_point(synthetic_K):
    z = basis_vector(6, 5) + 0.1 * basis_vector(6, 1)
    with pytest.raises(PreconditionError):
        reduced_morse_index(synthetic_K, z / np.linalg.norm(z))


def _targets(records):
    return [r for r in records if r.group == UPPER and r.minus_laplacian <= 0.0]


@pytest.mark.slow
def test_synthetic_perturbation_verifies(synthetic_K):
    records = find_critical_points(synthetic_K, l=5)
    targets = _targets(records)
    assert len(targets) == 2
    assert all(t.index == 4 for t in targets)

    K_new, report = perturb_K(synthetic_K, targets, rho=0.3, c1_tol=0.2, records=records, m=6)
    assert report.passed
    assert report.c1_distance <= 0.2
    assert all(v > 0 for v in report.target_minus_laplacian.values())
    assert report.items["iv"]["status"] == "PASS"
    for t in targets:
        assert float(-K_new.laplacian(t.y)) > 0
        ri = reduced_morse_index(K_new, t.y)
        assert ri.lambda_contribution == 0
        assert ri.total == 2
    # outside the balls nothing moved
    far = basis_vector(6, 7)
    assert float(K_new.value(far)) == pytest.approx(float(synthetic_K.value(far)))


@pytest.mark.slow
def test_tight_tolerance_reports_the_smallest_distance(synthetic_K):
    records = find_critical_points(synthetic_K, l=5)
    with pytest.raises(PerturbationError) as info:
        perturb_K(synthetic_K, _targets(records), rho=0.3, c1_tol=1e-6, records=records, m=6)
    assert info.value.minimal_tolerance > 1e-6


def test_invalid_targets(synthetic_K):
    records = find_critical_points(synthetic_K, seeds=16, l=5)
    with pytest.raises(PreconditionError):
        perturb_K(synthetic_K, [records[0]], rho=0.3, c1_tol=0.2, records=records, m=6)
    with pytest.raises(PreconditionError):
        perturb_K(synthetic_K, _targets(records), rho=2.0, c1_tol=0.2, records=records, m=6)


def test_no_targets_leaves_K_unchanged(synthetic_K):
    K_new, report = perturb_K(synthetic_K, [], rho=0.3, c1_tol=0.2, records=[])
    assert K_new is synthetic_K
    assert report.targets == []
    assert report.c1_distance == 0.0
    assert report.same_critical_set and report.same_indices


def test_reduced_indices_must_stay_strictly_below_m_minus_2():
    reduced = {"y4": {"z_contribution": 1, "lambda_contribution": 1, "total": 2}}
    assert index_bound_item(reduced, 4)["status"] == "FAIL"
    assert index_bound_item(reduced, 5)["status"] == "PASS"
    assert index_bound_item(reduced, None)["status"] == "UNKNOWN"
