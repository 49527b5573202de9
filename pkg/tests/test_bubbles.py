from __future__ import annotations

import math

import numpy as np
import pytest

from paneitz.bubbles import (
    Bubble,
    BubbleTerm,
    Configuration,
    bubble_constants,
    bubble_derivatives,
    bubble_eval,
    closed_form_constants,
    epsilon_ij,
    inner_product_P,
    radial_constants,
    radial_tail,
)
from paneitz.errors import DomainError, UnsupportedPairingError
from paneitz.sphere_core import basis_vector, constants, normalize, north_pole


@pytest.mark.parametrize("n", [5, 6, 7, 8, 9, 10])
def test_constants_two_ways(n):
    closed = closed_form_constants(n)
    radial = radial_constants(n)
    for key in ("S_n", "c_1", "c_2"):
        assert radial[key] == pytest.approx(closed[key], rel=1e-10)
    assert bubble_constants(n).S_n == closed["S_n"]


def test_radial_tail_decays():
    assert radial_tail(6, 100.0) < radial_tail(6, 10.0) < bubble_constants(6).c_2


def test_bubble_is_peaked_at_its_center():
    n = 6
    a = north_pole(n)
    b = Bubble(a, 1.0)
    c = constants(n)
    base = c.beta_n * 2.0 ** (-(n - 4) / 2)
    assert float(bubble_eval(b, a, n)) == pytest.approx(base)
    # lam = 1 is the constant function
    assert float(bubble_eval(b, -a, n)) == pytest.approx(base)
    sharp = Bubble(a, 10.0)
    assert float(bubble_eval(sharp, a, n)) == pytest.approx(base * 10.0)
    assert float(bubble_eval(sharp, -a, n)) == pytest.approx(base / 10.0)


def test_invalid_scale():
    with pytest.raises(DomainError):
        Bubble(north_pole(5), 0.0)


def test_derivatives_match_finite_differences():
    n = 5
    a = normalize(basis_vector(n, 1) + basis_vector(n, n + 1))
    b = Bubble(a, 7.0)
    x = normalize(np.array([0.3, 0.1, -0.2, 0.4, 0.0, 0.8]))
    der = bubble_derivatives(b, x, n)
    h = 1e-6
    up = float(bubble_eval(Bubble(a, 7.0 * math.exp(h)), x, n))
    down = float(bubble_eval(Bubble(a, 7.0 * math.exp(-h)), x, n))
    assert float(der.d_lambda) == pytest.approx((up - down) / (2 * h), rel=1e-6)


def test_epsilon_is_symmetric_and_scale_limited():
    n = 6
    a = north_pole(n)
    b1, b2 = Bubble(a, 2.0), Bubble(a, 2000.0)
    assert epsilon_ij(b1, b2, n) == epsilon_ij(b2, b1, n)
    assert epsilon_ij(b1, b1, n) == pytest.approx(2.0 ** (-(n - 4) / 2))
    assert epsilon_ij(b1, b2, n) == pytest.approx((2.0 / 2000.0) ** ((n - 4) / 2), rel=1e-5)


@pytest.mark.parametrize("lam", [1.0, 50.0, 1e3])
def test_bubble_energy_is_S_n(lam):
    n = 6
    b = Bubble(normalize(np.arange(1.0, n + 2)), lam)
    val = inner_product_P(BubbleTerm(b), BubbleTerm(b), n)
    assert val == pytest.approx(bubble_constants(n).S_n, rel=1e-8)


def test_scale_derivative_is_P_orthogonal_to_the_bubble():
    n = 5
    b = Bubble(north_pole(n), 40.0)
    val = inner_product_P(BubbleTerm(b), BubbleTerm(b, "d_lambda"), n)
    assert abs(val) < 1e-8 * bubble_constants(n).S_n


def test_interaction_of_separated_bubbles():
    n = 6
    b1 = Bubble(north_pole(n), 100.0)
    b2 = Bubble(basis_vector(n, 1), 100.0)
    val = inner_product_P(BubbleTerm(b1), BubbleTerm(b2), n)
    pred = bubble_constants(n).c_1 * epsilon_ij(b1, b2, n)
    assert val == pytest.approx(pred, rel=0.02)


def test_configuration_epsilon_matrix():
    n = 5
    cfg = Configuration.single(north_pole(n), 10.0)
    assert cfg.epsilon_matrix().shape == (1, 1)
    with pytest.raises(DomainError):
        Configuration([], n)


def test_unsupported_pairing_kind():
    b = Bubble(north_pole(5), 3.0)
    with pytest.raises(UnsupportedPairingError):
        inner_product_P(BubbleTerm(b, "d_lambda_lambda"), BubbleTerm(b), 5)
    with pytest.raises(UnsupportedPairingError):
        inner_product_P(BubbleTerm(b, "d_a"), BubbleTerm(b), 5)
