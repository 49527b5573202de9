"""
paneitz/bubbles.py

The standard bubbles on S^n and everything computed from them in closed form.
- bubble value  beta_n 2^(-m) lam^m / (1 + (lam^2 - 1)/2 (1 - cos d(x, a)))^m,  m = (n-4)/2
- lam d/dlam and (1/lam) d/da derivatives in tangent_frame(a)
- interaction eps_ij between two bubbles
- constants S_n, c_1, c_2 by Beta closed forms and by 1D radial quadrature
- P-pairings reduced to L^2 integrals through P(bubble) = bubble^((n+4)/(n-4))
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import integrate, special

from paneitz.errors import ConsistencyError, DomainError, UnsupportedPairingError
from paneitz.sphere_core import (
    DEFAULT_BUDGET,
    QuadratureRule,
    as_point,
    build_quadrature,
    check_dim,
    constants,
    one_minus_cos,
    tangent_frame,
)

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
CONSTANTS_RTOL = 1e-10
PAIRING_KINDS = ("delta", "d_lambda", "d_a")


# ============================================================================
# TYPES
# ============================================================================
@dataclass(frozen=True, eq=False)
class Bubble:
    """Concentration point a on S^n and scale lam > 0."""
    a: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "a", as_point(self.a))
        if not self.lam > 0:
            raise DomainError(f"bubble scale must be positive, got lam={self.lam}")
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def n(self) -> int:
        return self.a.shape[0] - 1


@dataclass(frozen=True, eq=False)
class WeightedBubble:
    alpha: float
    bubble: Bubble

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"bubble weight must be positive, got alpha={self.alpha}")


@dataclass(frozen=True, eq=False)
class Configuration:
    """u = sum_i alpha_i bubble_i on S^n."""
    parts: List[WeightedBubble]
    n: int

    def __post_init__(self):
        check_dim(self.n)
        if not self.parts:
            raise DomainError("configuration needs at least one bubble")
        for p in self.parts:
            if p.bubble.n != self.n:
                raise DomainError(f"bubble lives on S^{p.bubble.n}, configuration on S^{self.n}")

    @classmethod
    def single(cls, a, lam: float, alpha: float = 1.0) -> "Configuration":
        b = Bubble(np.asarray(a, dtype=float), lam)
        return cls([WeightedBubble(alpha, b)], b.n)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.parts])

    @property
    def bubbles(self) -> List[Bubble]:
        return [p.bubble for p in self.parts]

    def scaled(self, t: float) -> "Configuration":
        return Configuration([WeightedBubble(t * p.alpha, p.bubble) for p in self.parts], self.n)

    def epsilon_matrix(self) -> np.ndarray:
        p = len(self.parts)
        eps = np.zeros((p, p))
        for i in range(p):
            for j in range(i + 1, p):
                eps[i, j] = eps[j, i] = epsilon_ij(self.parts[i].bubble, self.parts[j].bubble, self.n)
        return eps


@dataclass(frozen=True)
class BubbleConstants:
    n: int
    S_n: float
    c_1: float
    c_2: float
    radial: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BubbleDerivatives:
    """lam * d/dlam and (1/lam) * d/da_j, the latter in the columns of `frame`."""
    d_lambda: np.ndarray
    d_a: np.ndarray
    frame: np.ndarray


@dataclass(frozen=True, eq=False)
class BubbleTerm:
    """One of: the bubble itself, lam d/dlam of it, or (1/lam) d/da_j of it."""
    bubble: Bubble
    kind: str = "delta"
    direction: Optional[int] = None


# ============================================================================
# EVALUATION
# ============================================================================
def _power(n: int) -> float:
    return (n - 4) / 2


def _base(b: Bubble, x: np.ndarray):
    omc = one_minus_cos(x, b.a)
    return 1.0 + 0.5 * (b.lam * b.lam - 1.0) * omc, omc


def bubble_eval(b: Bubble, x, n: int) -> np.ndarray:
    """Bubble value at x (points of shape (..., n+1))."""
    m = _power(n)
    base, _ = _base(b, np.asarray(x, dtype=float))
    return constants(n).beta_n * 2.0 ** (-m) * b.lam ** m * base ** (-m)


def bubble_log(b: Bubble, x, n: int) -> np.ndarray:
    m = _power(n)
    base, _ = _base(b, np.asarray(x, dtype=float))
    return np.log(constants(n).beta_n) + m * (np.log(b.lam) - np.log(2.0) - np.log(base))


def bubble_derivatives(b: Bubble, x, n: int) -> BubbleDerivatives:
    """
    Closed-form scale and location derivatives of the bubble.

    Returns:
        d_lambda = lam * d(bubble)/dlam, shape (...)
        d_a      = (1/lam) * d(bubble)/da_j for the columns of tangent_frame(a), shape (..., n)
    """
    x = np.asarray(x, dtype=float)
    m = _power(n)
    base, omc = _base(b, x)
    delta = constants(n).beta_n * 2.0 ** (-m) * b.lam ** m * base ** (-m)
    lam2 = b.lam * b.lam
    d_lambda = m * delta * (1.0 - lam2 * omc / base)
    frame = tangent_frame(b.a)
    coef = m * delta * (lam2 - 1.0) / (2.0 * b.lam * base)
    d_a = np.asarray(coef)[..., None] * (x @ frame)
    return BubbleDerivatives(d_lambda=d_lambda, d_a=d_a, frame=frame)


def epsilon_ij(b_i: Bubble, b_j: Bubble, n: int) -> float:
    """(lam_i/lam_j + lam_j/lam_i + lam_i lam_j (1 - cos d(a_i, a_j)) / 2)^(-(n-4)/2)"""
    ratio = b_i.lam / b_j.lam + b_j.lam / b_i.lam
    bracket = ratio + 0.5 * b_i.lam * b_j.lam * float(one_minus_cos(b_i.a, b_j.a))
    return float(bracket ** (-_power(n)))


# ============================================================================
# CONSTANTS
# ============================================================================
def _prefactor(n: int) -> float:
    c = constants(n)
    return c.beta_n ** (2 * n / (n - 4)) * c.omega_n1


def closed_form_constants(n: int) -> dict:
    """S_n, c_1, c_2 from Beta functions (1/2) B(x, y) = int_0^(pi/2) sin^(2x-1) cos^(2y-1)."""
    n = check_dim(n)
    pre = _prefactor(n)
    return {
        "S_n": pre * special.beta(n / 2, n / 2) / 2,
        "c_1": pre * special.beta(n / 2, 2.0) / 2,
        "c_2": pre * special.beta((n + 2) / 2, (n - 2) / 2) / (4 * n),
    }


def _angle_integral(p: int, q: int) -> float:
    """int_0^(pi/2) sin^p cos^q, the radial integral after r = tan(phi)."""
    val, _ = integrate.quad(lambda t: np.sin(t) ** p * np.cos(t) ** q, 0.0, np.pi / 2,
                            epsabs=0.0, epsrel=1e-14, limit=200)
    return val


def radial_constants(n: int) -> dict:
    """S_n, c_1, c_2 by adaptive quadrature of the radial integrals over R^n."""
    n = check_dim(n)
    pre = _prefactor(n)
    return {
        "S_n": pre * _angle_integral(n - 1, n - 1),
        "c_1": pre * _angle_integral(n - 1, 3),
        "c_2": pre * _angle_integral(n + 1, n - 3) / (2 * n),
    }


def radial_tail(n: int, radius: float) -> float:
    """Contribution of r in [R, 2R] to c_2; the integrand decays like r^(1-n)."""
    n = check_dim(n)
    val, _ = integrate.quad(lambda r: r ** (n + 1) * (1.0 + r * r) ** (-n), radius, 2 * radius,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return _prefactor(n) * val / (2 * n)


@lru_cache(maxsize=None)
def bubble_constants(n: int) -> BubbleConstants:
    """
    S_n, c_1 and c_2 computed two independent ways.

    Raises:
        ConsistencyError: closed form and radial quadrature differ beyond 1e-10 (relative)
    """
    n = check_dim(n)
    closed = closed_form_constants(n)
    radial = radial_constants(n)
    for key in closed:
        rel = abs(closed[key] - radial[key]) / abs(closed[key])
        if rel > CONSTANTS_RTOL:
            raise ConsistencyError(
                f"{key} disagrees for n={n}: closed={closed[key]!r} radial={radial[key]!r} rel={rel:.3e}"
            )
    logger.debug(f"Bubble constants | n={n} | S_n={closed['S_n']:.12g} | c_1={closed['c_1']:.12g} "
                 f"| c_2={closed['c_2']:.12g}")
    return BubbleConstants(n=n, S_n=closed["S_n"], c_1=closed["c_1"], c_2=closed["c_2"], radial=radial)


# ============================================================================
# INTEGRATION OVER SEVERAL CONCENTRATIONS
# ============================================================================
def integrate_partitioned(
    func: Callable[[np.ndarray], np.ndarray],
    bubbles: Sequence[Bubble],
    n: int,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """
    Integral of func over S^n for an integrand concentrated near several bubbles.

    Each bubble gets its own adapted rule; a node of rule i is weighted by
    psi_i = bubble_i^q / sum_j bubble_j^q (q = 2n/(n-4)), a partition of unity.
    """
    unique: List[Bubble] = []
    for b in bubbles:
        if not any(b is u or (b.lam == u.lam and np.array_equal(b.a, u.a)) for u in unique):
            unique.append(b)
    q = 2 * n / (n - 4)
    total = 0.0
    for i, b in enumerate(unique):
        rule = build_quadrature(n, b, budget)
        vals = func(rule.nodes)
        if len(unique) > 1:
            logs = np.stack([q * bubble_log(u, rule.nodes, n) for u in unique])
            vals = vals * special.softmax(logs, axis=0)[i]
        total += rule.integrate(vals)
    return total


# ============================================================================
# P-PAIRINGS
# ============================================================================
def _check_term(t: BubbleTerm) -> None:
    if t.kind not in PAIRING_KINDS:
        raise UnsupportedPairingError(f"pairing kind {t.kind!r} not supported; use {PAIRING_KINDS}")
    if t.kind == "d_a" and t.direction is None:
        raise UnsupportedPairingError("d_a pairing needs a tangent direction index")


def term_values(t: BubbleTerm, x: np.ndarray, n: int) -> np.ndarray:
    if t.kind == "delta":
        return bubble_eval(t.bubble, x, n)
    der = bubble_derivatives(t.bubble, x, n)
    return der.d_lambda if t.kind == "d_lambda" else der.d_a[..., t.direction]


def p_image(t: BubbleTerm, x: np.ndarray, n: int) -> np.ndarray:
    """P applied to the term, from P(bubble) = bubble^p and its parameter derivatives."""
    p = (n + 4) / (n - 4)
    delta = bubble_eval(t.bubble, x, n)
    if t.kind == "delta":
        return delta ** p
    return p * delta ** (p - 1) * term_values(t, x, n)


def inner_product_P(
    u: BubbleTerm,
    h: BubbleTerm,
    n: int,
    quad: Optional[QuadratureRule] = None,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """
    <u, h>_P for bubble terms, with no numerical fourth-order differentiation.

    Args:
        u, h: Bubble terms of kind delta, d_lambda or d_a
        n: Sphere dimension
        quad: Rule to use as-is; by default rules adapted to the bubbles involved
        budget: Radial budget of the default rules

    Raises:
        UnsupportedPairingError: unknown term kind
    """
    _check_term(u)
    _check_term(h)
    same = u.bubble is h.bubble or (u.bubble.lam == h.bubble.lam and np.array_equal(u.bubble.a, h.bubble.a))

    def forward(x):
        return p_image(u, x, n) * term_values(h, x, n)

    if same:
        if quad is not None:
            return quad.integrate(forward(quad.nodes))
        return integrate_partitioned(forward, [u.bubble], n, budget)

    def symmetric(x):
        return 0.5 * (forward(x) + term_values(u, x, n) * p_image(h, x, n))

    if quad is not None:
        return quad.integrate(symmetric(quad.nodes))
    return integrate_partitioned(symmetric, [u.bubble, h.bubble], n, budget)
