from __future__ import annotations

import numpy as np
import pytest

from paneitz.assumptions import (
    FAIL,
    PASS,
    UNKNOWN,
    check_A0,
    check_A1,
    check_A1prime,
    check_A2,
    check_assumptions,
    check_pinching,
    energy_levels,
)
from paneitz.bubbles import bubble_constants
from paneitz.curvature import parse_curvature
from paneitz.morse import UPPER, CriticalPointRecord, MorseComplex, find_critical_points, homology_of_X


def test_pinching_ratio():
    ok = check_pinching(1.1, 1.05, 0.1)
    assert ok.status == PASS
    assert ok.numbers["ratio"] == pytest.approx(1.1 / 1.05)
    assert check_pinching(1.1, 0.9, 0.1).status == FAIL


def test_index_window_needs_n_at_least_6(height_K):
    records = find_critical_points(height_K, seeds=8)
    assert check_A1prime(records, 5, 5).status == FAIL


def test_index_window_on_the_synthetic_example(synthetic_K):
    records = find_critical_points(synthetic_K, seeds=16, l=5)
    assert check_A1(records).status == FAIL
    assert check_A1prime(records, 6, None).status == UNKNOWN
    assert check_A1prime(records, 6, 6).status == PASS
    window = check_A1prime(records, 6, 4)
    assert window.status == FAIL
    assert window.numbers["window"] == [5, 4]


def test_sign_changing_K_fails_positivity(rng):
    K = parse_curvature("x6+0.1*x1", 5)
    records = find_critical_points(K, seeds=8)
    status = check_A0(K, records, 0, rng)
    assert status.status == FAIL
    assert status.numbers["k_min_sampled"] < 0


def test_missing_complex_is_unknown():
    assert check_A2(None, None).status == UNKNOWN


def test_energy_levels(height_K):
    records = find_critical_points(height_K, seeds=8)
    S = bubble_constants(5).S_n
    levels = energy_levels(records, 0, 1.0, 5)
    assert levels["c_top"] == pytest.approx(S ** 0.8 * 1.1 ** -0.2)
    assert levels["c_bar_level"] == pytest.approx(S ** 0.8)
    assert levels["between"] == []


@pytest.mark.slow
def test_full_report_for_the_height_function(height_K):
    report = check_assumptions(height_K, c_bar=0.85, c_0=0.1, seed=0)
    assert report.A0.status == PASS
    assert report.A1.status == PASS
    assert report.A2.status == PASS
    assert report.m == 5
    assert report.A3_necessary.status == PASS
    assert report.A3_deformable.status == UNKNOWN
    assert report.pinching.status == FAIL
    assert report.single_bubble_criteria().status == FAIL
    assert report.perturbative_criteria(5).status == FAIL
    payload = report.as_dict(5)
    assert payload["l"] == 0
    assert payload["single_bubble_criteria"]["status"] == FAIL


@pytest.mark.slow
def test_supplied_contraction_is_level_checked(height_K):
    def contraction(t):
        y = np.zeros(6)
        y[0], y[5] = np.sin(t), np.cos(t)
        return y

    report = check_assumptions(height_K, c_bar=0.85, c_0=0.1, contraction=contraction)
    assert report.A3_deformable.status == PASS
    assert report.A3_deformable.numbers["path_min"] == pytest.approx(1.0 + 0.1 * np.cos(1.0))


def test_single_minimum_has_no_nontrivial_homology():
    record = CriticalPointRecord(y=np.array([0.0, 0.0, 1.0]), index=0, grad_norm=0.0, laplacian=2.0,
                                 value=1.0, eigenvalues=np.array([1.0, 1.0]), group=UPPER, label="y0")
    complex_ = MorseComplex(n=2, generators=[record],
                            boundary={1: np.zeros((1, 0), dtype=np.uint8), 2: np.zeros((0, 0), dtype=np.uint8)})
    hom = homology_of_X(complex_)
    assert hom.m is None
    assert check_A2(hom, complex_).status == FAIL
