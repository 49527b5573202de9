"""
paneitz/sphere_core.py

Geometry of the round sphere S^n (n >= 5) embedded in R^(n+1).
- Dimension-dependent constants of the Paneitz operator (c_n, d_n, beta_n, ...)
- Geodesic distance, tangent frames, exponential map
- Stereographic chart with the equator of the pole axis mapped to |y| = 1
- Quadrature rules, uniform or adapted to a bubble concentrated at scale 1/lambda

Quadrature layout: geodesic polar coordinates x = cos(t) c + sin(t) F w around a
center c, which is the stereographic chart with pole -c and r = tan(t/2).
Radial nodes are composite Gauss-Legendre on panels that grow geometrically
from 1/lambda; angular nodes are a product Gauss-Jacobi rule (or a symmetrized
scrambled Sobol set) on the unit sphere of the tangent space.
"""
import math
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Tuple

import numpy as np
from scipy import special
from scipy.stats import qmc

from paneitz.errors import ChartSingularityError, DomainError, QuadratureBudgetError

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
MIN_DIM = 5
UNIT_TOL = 1e-12
DEFAULT_BUDGET = 16             # Gauss-Legendre nodes per radial panel
MAX_PANEL_WIDTH = math.pi / 4   # widest radial panel
ANGULAR_RULES = ("gauss", "sobol")


def check_dim(n: int) -> int:
    """Validate the sphere dimension."""
    if int(n) != n or n < MIN_DIM:
        raise DomainError(f"dimension n={n} not supported; need integer n >= {MIN_DIM}")
    return int(n)


# ============================================================================
# CONSTANTS
# ============================================================================
@dataclass(frozen=True)
class Constants:
    """Coefficients of P = Delta^2 - c_n Delta + d_n on S^n and related numbers."""
    n: int
    c_n: float
    d_n: float
    beta_n: float
    a_n: float
    b_n: float
    vol_Sn: float
    omega_n1: float
    shift_a: float   # P = (-Delta + shift_a)(-Delta + shift_b)
    shift_b: float

    @property
    def exponent(self) -> float:
        """(n+4)/(n-4), the power of the nonlinearity."""
        return (self.n + 4) / (self.n - 4)

    @property
    def critical(self) -> float:
        """2n/(n-4), the critical Sobolev exponent."""
        return 2 * self.n / (self.n - 4)

    @property
    def bubble_power(self) -> float:
        """(n-4)/2."""
        return (self.n - 4) / 2


def sphere_measure(k: int) -> float:
    """Measure of the unit k-sphere in R^(k+1): 2 pi^((k+1)/2) / Gamma((k+1)/2)."""
    return float(2.0 * math.pi ** ((k + 1) / 2) / special.gamma((k + 1) / 2))


def exact_coefficients(n: int) -> Tuple[Fraction, Fraction]:
    """(c_n, d_n) in exact rational arithmetic."""
    n = check_dim(n)
    c = Fraction(n * n - 2 * n - 4, 2)
    d = Fraction(n * (n * n - 4) * (n - 4), 16)
    return c, d


def constants(n: int) -> Constants:
    """
    Closed-form constants for dimension n.

    Args:
        n: Sphere dimension, n >= 5

    Returns:
        Constants with c_n = (n^2-2n-4)/2, d_n = n(n^2-4)(n-4)/16,
        beta_n = [(n-4)(n-2)n(n+2)]^((n-4)/8) and the factor shifts
        n(n-2)/4, (n-4)(n+2)/4 whose sum is c_n and product d_n

    Raises:
        DomainError: n < 5

    Example:
        >>> constants(5).d_n
        6.5625
    """
    n = check_dim(n)
    c, d = exact_coefficients(n)
    return Constants(
        n=n,
        c_n=float(c),
        d_n=float(d),
        beta_n=float(((n - 4) * (n - 2) * n * (n + 2)) ** ((n - 4) / 8)),
        a_n=((n - 2) ** 2 + 4) / (2 * (n - 1) * (n - 2)),
        b_n=-4 / (n - 2),
        vol_Sn=sphere_measure(n),
        omega_n1=sphere_measure(n - 1),
        shift_a=n * (n - 2) / 4,
        shift_b=(n - 4) * (n + 2) / 4,
    )


# ============================================================================
# POINTS AND GEODESICS
# ============================================================================
def as_point(x, n: Optional[int] = None) -> np.ndarray:
    """Return x as a float array after checking it lies on the unit sphere."""
    p = np.asarray(x, dtype=float)
    if p.ndim != 1:
        raise DomainError(f"point must be a vector, got shape {p.shape}")
    if n is not None and p.shape[0] != n + 1:
        raise DomainError(f"point has {p.shape[0]} coordinates, expected {n + 1}")
    norm = float(np.linalg.norm(p))
    if abs(norm - 1.0) > UNIT_TOL * 100:
        raise DomainError(f"point is not on the unit sphere: |x| = {norm!r}")
    return p


def normalize(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def basis_vector(n: int, k: int) -> np.ndarray:
    """Ambient basis vector e_k (1-based, k in 1..n+1)."""
    e = np.zeros(n + 1)
    e[k - 1] = 1.0
    return e


def north_pole(n: int) -> np.ndarray:
    return basis_vector(n, n + 1)


def geodesic_distance(a, b) -> float:
    """Great-circle distance in [0, pi]; the cosine is clamped before arccos."""
    a = as_point(a)
    b = as_point(b, a.shape[0] - 1)
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def one_minus_cos(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """1 - cos d(x, a) computed as |x - a|^2 / 2, accurate for nearby points."""
    diff = np.asarray(x, dtype=float) - a
    return 0.5 * np.einsum("...i,...i->...", diff, diff)


def tangent_projector(x: np.ndarray) -> np.ndarray:
    """Orthogonal projector(s) onto the tangent space at x, shape (..., n+1, n+1)."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(x.shape[-1])
    return eye - x[..., :, None] * x[..., None, :]


def tangent_frame(a) -> np.ndarray:
    """
    Deterministic orthonormal basis of T_a S^n as the columns of an (n+1) x n matrix.

    The ambient basis vectors other than the one along the largest |a_k| are
    projected to the tangent space and orthonormalized by QR; columns are signed
    so that the diagonal of R is positive.
    """
    a = np.asarray(a, dtype=float)
    dim = a.shape[0]
    skip = int(np.argmax(np.abs(a)))
    cols = [j for j in range(dim) if j != skip]
    basis = np.eye(dim)[:, cols] - np.outer(a, a[cols])
    q, r = np.linalg.qr(basis)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def exp_map(a, v) -> np.ndarray:
    """Geodesic step from a along the tangent vector v (ambient coordinates)."""
    a = np.asarray(a, dtype=float)
    v = np.asarray(v, dtype=float)
    t = float(np.linalg.norm(v))
    if t == 0.0:
        return a.copy()
    x = math.cos(t) * a + math.sin(t) * (v / t)
    return x / np.linalg.norm(x)


# ============================================================================
# STEREOGRAPHIC CHART
# ============================================================================
def stereographic(pole, x) -> np.ndarray:
    """
    Stereographic coordinates of x in the chart with the given pole.

    The chart center is -pole, coordinates are taken in tangent_frame(-pole), and a
    point at distance t from the center maps to |y| = tan(t/2), so the equator of
    the pole axis lands on the unit sphere.

    Raises:
        ChartSingularityError: x is the pole
    """
    c = -as_point(pole)
    x = np.asarray(x, dtype=float)
    denom = 1.0 + x @ c
    if np.any(np.abs(denom) < 1e-14):
        raise ChartSingularityError("stereographic projection evaluated at its pole")
    frame = tangent_frame(c)
    along = x - np.multiply.outer(x @ c, c)
    return (along @ frame) / np.expand_dims(denom, -1)


def stereographic_inverse(pole, y) -> np.ndarray:
    """Inverse chart: x = ((1 - |y|^2) c + 2 F y) / (1 + |y|^2) with c = -pole."""
    c = -as_point(pole)
    y = np.asarray(y, dtype=float)
    frame = tangent_frame(c)
    r2 = np.einsum("...i,...i->...", y, y)
    x = (np.multiply.outer(1.0 - r2, c) + 2.0 * (y @ frame.T)) / np.expand_dims(1.0 + r2, -1)
    return x


# ============================================================================
# QUADRATURE
# ============================================================================
@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (N, n+1), positive weights (N,), and the polar angle of each node."""
    nodes: np.ndarray
    weights: np.ndarray
    theta: np.ndarray
    center: np.ndarray
    scale: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def minimum_budget(n: int) -> int:
    """Fewest Gauss-Legendre nodes per radial panel accepted for dimension n."""
    return check_dim(n) + 3


def default_angular_order(n: int) -> int:
    if n == 5:
        return 4
    if n <= 7:
        return 3
    return 2


def radial_panels(scale: Optional[float]) -> np.ndarray:
    """Panel breakpoints on [0, pi]: geometric from 1/lambda up to pi/4, then uniform."""
    edges = [0.0]
    if scale is not None and scale > 0 and 1.0 / scale < MAX_PANEL_WIDTH:
        h = 1.0 / scale
        while h < MAX_PANEL_WIDTH:
            edges.append(h)
            h *= 2.0
        edges.append(MAX_PANEL_WIDTH)
    start = edges[-1]
    count = int(math.ceil((math.pi - start) / MAX_PANEL_WIDTH - 1e-12))
    edges.extend(np.linspace(start, math.pi, count + 1)[1:].tolist())
    return np.asarray(edges)


def _radial_rule(n: int, scale: Optional[float], q: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(q)
    edges = radial_panels(scale)
    lo, hi = edges[:-1, None], edges[1:, None]
    t = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    wt = (0.5 * (hi - lo) * w).ravel()
    return t, wt * np.sin(t) ** (n - 1)


def gauss_sphere_rule(dim: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Product rule on the unit sphere S^(dim-1) in R^dim.

    A polar angle with weight sin^j uses Gauss-Jacobi nodes in cos(angle)
    (alpha = beta = (j-1)/2); the last angle uses 2*order equispaced azimuths.
    The rule is invariant under x -> -x and its weights sum to |S^(dim-1)|.
    """
    az = (np.arange(2 * order) + 0.5) * math.pi / order
    pts = np.stack([np.cos(az), np.sin(az)], axis=1)
    wts = np.full(2 * order, math.pi / order)
    for j in range(2, dim):
        t, w = special.roots_jacobi(order, (j - 2) / 2, (j - 2) / 2)
        s = np.sqrt(1.0 - t * t)
        pts = np.concatenate(
            [t[:, None, None] * np.ones((1, pts.shape[0], 1)),
             s[:, None, None] * pts[None, :, :]],
            axis=2,
        ).reshape(-1, j + 1)
        wts = (w[:, None] * wts[None, :]).ravel()
    return pts, wts


def sobol_sphere_rule(dim: int, count: int, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Scrambled Sobol points pushed to S^(dim-1) by the Gaussian map, symmetrized."""
    m = max(1, int(math.ceil(math.log2(max(count // 2, 1)))))
    u = qmc.Sobol(d=dim, scramble=True, seed=seed).random_base2(m)
    g = special.ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    pts = g / np.linalg.norm(g, axis=1, keepdims=True)
    pts = np.concatenate([pts, -pts])
    wts = np.full(pts.shape[0], sphere_measure(dim - 1) / pts.shape[0])
    return pts, wts


def build_quadrature(
    n: int,
    concentration=None,
    budget: int = DEFAULT_BUDGET,
    angular: str = "gauss",
    angular_order: Optional[int] = None,
    seed: int = 0,
) -> QuadratureRule:
    """
    Quadrature rule on S^n.

    Args:
        n: Sphere dimension
        concentration: Optional object with attributes `a` (center) and `lam`
            (scale). Without it the rule is centered at the north pole with
            uniform radial panels.
        budget: Gauss-Legendre nodes per radial panel
        angular: "gauss" (product Gauss-Jacobi) or "sobol"
        angular_order: Points per angular coordinate (gauss) or log2 of half
            the point count (sobol); defaults depend on n
        seed: Scrambling seed for the sobol rule

    Returns:
        QuadratureRule whose weights sum to |S^n|

    Raises:
        QuadratureBudgetError: budget below minimum_budget(n)
    """
    n = check_dim(n)
    required = minimum_budget(n)
    if budget < required:
        raise QuadratureBudgetError(
            f"quadrature budget {budget} too small for n={n}; need at least {required}",
            required=required,
        )
    if angular not in ANGULAR_RULES:
        raise DomainError(f"unknown angular rule {angular!r}; choose from {ANGULAR_RULES}")

    if concentration is None:
        center, scale = north_pole(n), None
    else:
        center, scale = as_point(concentration.a, n), float(concentration.lam)

    t, wt = _radial_rule(n, scale, budget)
    if angular == "gauss":
        order = angular_order or default_angular_order(n)
        omega, wo = gauss_sphere_rule(n, order)
    else:
        order = angular_order or 9
        omega, wo = sobol_sphere_rule(n, 2 ** (order + 1), seed=seed)

    frame = tangent_frame(center)
    directions = omega @ frame.T
    nodes = (np.cos(t)[:, None, None] * center[None, None, :]
             + np.sin(t)[:, None, None] * directions[None, :, :]).reshape(-1, n + 1)
    weights = (wt[:, None] * wo[None, :]).ravel()
    theta = np.repeat(t, omega.shape[0])
    return QuadratureRule(
        nodes=nodes,
        weights=weights,
        theta=theta,
        center=center,
        scale=scale,
        meta={"budget": budget, "angular": angular, "angular_order": order,
              "radial_nodes": int(t.shape[0]), "angular_nodes": int(omega.shape[0])},
    )
