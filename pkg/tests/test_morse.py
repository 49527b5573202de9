from __future__ import annotations

import numpy as np
import pytest

from paneitz.curvature import constant_field
from paneitz.errors import ConsistencyError, DomainError, PreconditionError
from paneitz.morse import (
    EXACT,
    LOWER,
    UNKNOWN,
    UPPER,
    CriticalPointRecord,
    MorseComplex,
    PairCount,
    ShootingConfig,
    critical_record,
    find_critical_points,
    flow_landings,
    gf2_rank,
    homology_of_X,
    morse_complex,
    natural_l,
    pair_samples,
)
from paneitz.sphere_core import north_pole

pytestmark = pytest.mark.slow


def test_height_function_has_two_critical_points(height_K):
    records = find_critical_points(height_K, seeds=16)
    assert [r.label for r in records] == ["y0", "y1"]
    top, bottom = records
    np.testing.assert_allclose(top.y, north_pole(5), atol=1e-10)
    assert (top.index, bottom.index) == (5, 0)
    assert top.group == UPPER and bottom.group == LOWER
    assert top.minus_laplacian == pytest.approx(0.5)


def test_height_function_complex_and_homology(height_K):
    records = find_critical_points(height_K, seeds=16)
    cx = morse_complex(height_K, records)
    assert cx.euler_characteristic() == 0
    assert cx.boundary_squared_zero()
    hom = homology_of_X(cx)
    assert hom.m == 5
    assert hom.members == [0, 1]


def test_saddle_example(saddle_K):
    records = find_critical_points(saddle_K, seeds=32)
    assert len(records) == 4
    assert [r.index for r in records] == [5, 1, 0, 0]
    assert natural_l(records) == 0
    assert records[0].value == pytest.approx(1.05)
    assert records[2].value == pytest.approx(0.9375)

    cx = morse_complex(saddle_K, records)
    assert cx.euler_characteristic() == 0
    pairs = {(cx.generators[s].label, cx.generators[t].label): c for (s, t), c in cx.pairs.items()}
    assert pairs[("y1", "y2")].count == 1 and pairs[("y1", "y2")].status == EXACT
    assert pairs[("y1", "y3")].count == 1 and pairs[("y1", "y3")].status == EXACT
    assert cx.boundary_squared_zero()

    hom = homology_of_X(cx)
    assert hom.m == 5
    assert sorted(hom.members) == [0, 1, 2, 3]
    assert hom.reduced_ranks[0] == 0
    assert hom.reduced_ranks[5] == 1


def test_landings_follow_the_ascending_flow(saddle_K, rng):
    records = find_critical_points(saddle_K, seeds=32)
    starts = rng.standard_normal((16, 6))
    starts /= np.linalg.norm(starts, axis=1, keepdims=True)
    starts[:, 5] = -np.abs(starts[:, 5])
    starts /= np.linalg.norm(starts, axis=1, keepdims=True)
    landed = flow_landings(saddle_K, records, starts, ascending=True)
    assert np.all(landed == 0)


def test_degenerate_points_are_rejected():
    K = constant_field(5, 1.0)
    rec = critical_record(K, north_pole(5), label="y0")
    assert rec.degenerate
    with pytest.raises(PreconditionError):
        morse_complex(K, [rec])


def test_group_override_out_of_range(height_K):
    with pytest.raises(DomainError):
        find_critical_points(height_K, seeds=4, l=5)


@pytest.mark.parametrize("matrix, rank", [
    (np.zeros((2, 3)), 0),
    (np.array([[1, 1], [1, 1]]), 1),
    (np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]]), 2),
    (np.eye(4), 4),
])
def test_rank_over_z2(matrix, rank):
    assert gf2_rank(matrix) == rank


def _chain(d1, d2, status=EXACT):
    records = [
        CriticalPointRecord(y=np.array([0.0, 0.0, s]), index=k, grad_norm=0.0, laplacian=1.0 - k,
                            value=1.0 + k, eigenvalues=np.where(np.arange(2) < k, -1.0, 1.0), label=f"y{i}")
        for i, (k, s) in enumerate([(2, 1.0), (1, 0.0), (0, -1.0)])
    ]
    pairs = {(0, 1): PairCount(1, status, "zero_sphere", 2), (1, 2): PairCount(1, EXACT, "zero_sphere", 2)}
    boundary = {1: np.array([[d1]], dtype=np.uint8), 2: np.array([[d2]], dtype=np.uint8)}
    return MorseComplex(n=2, generators=records, boundary=boundary, pairs=pairs)


def test_settled_boundary_must_square_to_zero():
    with pytest.raises(ConsistencyError):
        _chain(1, 1).check_consistency()
    _chain(0, 1).check_consistency()


def test_unsettled_counts_only_warn():
    complex_ = _chain(1, 1, status=UNKNOWN)
    assert not complex_.boundary_squared_zero()
    complex_.check_consistency()


def test_reported_sample_counts():
    cfg = ShootingConfig(circle_samples=32, sphere_samples=100)
    assert pair_samples("zero_sphere", cfg) == 2
    assert pair_samples("circle_bisection", cfg) == 32
    assert pair_samples("sphere_clustering", cfg) == 200
