"""
paneitz/curvature.py

The prescribed function K on S^n with derivative oracles.
- K is given through an ambient extension F on R^(n+1) with ambient gradient and Hessian
- Spherical gradient, Hessian and Laplace-Beltrami follow from the extension:
    grad K   = P grad F
    Hess K   = P D^2F P - (x . grad F) P
    Delta K  = tr D^2F - x^T D^2F x - n (x . grad F)
  with P = I - x x^T the tangent projector
- Built-in families: constant, affine, quadratic, zonal Gaussian bumps, sympy expressions
- Arbitrary callables get central-difference derivatives and an `analytic=False` flag
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import sympy as sp

from paneitz.errors import ConfigError, DomainError
from paneitz.sphere_core import check_dim, exp_map, tangent_frame, tangent_projector

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
FD_STEP = 1e-4          # geodesic step for derivative cross-checks
AMBIENT_FD_STEP = 1e-4  # ambient step for callables without derivatives
FAMILIES = ("constant", "affine", "quadratic", "bumps")

ValueFn = Callable[[np.ndarray], np.ndarray]


# ============================================================================
# FIELD
# ============================================================================
@dataclass(frozen=True)
class CurvatureField:
    """
    Function K on S^n given by an ambient extension and its first two derivatives.

    All callables are vectorized: they take points of shape (..., n+1) and return
    values (...), gradients (..., n+1) and Hessians (..., n+1, n+1).
    """
    n: int
    name: str
    ambient_value: ValueFn
    ambient_grad: ValueFn
    ambient_hess: ValueFn
    analytic: bool = True
    meta: Dict = field(default_factory=dict)

    # ------------------------------------------------------------------
    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.ambient_value(x), dtype=float)

    def __call__(self, x) -> np.ndarray:
        return self.value(x)

    def gradient(self, x) -> np.ndarray:
        """Tangent gradient in ambient coordinates."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.ambient_grad(x), dtype=float)
        return g - np.einsum("...i,...i->...", g, x)[..., None] * x

    def hessian(self, x) -> np.ndarray:
        """Riemannian Hessian as an ambient operator on the tangent space."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.ambient_grad(x), dtype=float)
        h = np.asarray(self.ambient_hess(x), dtype=float)
        proj = tangent_projector(x)
        radial = np.einsum("...i,...i->...", g, x)
        return proj @ h @ proj - radial[..., None, None] * proj

    def hessian_in_frame(self, x, frame: Optional[np.ndarray] = None) -> np.ndarray:
        """n x n Hessian matrix in an orthonormal tangent frame (default tangent_frame(x))."""
        x = np.asarray(x, dtype=float)
        f = tangent_frame(x) if frame is None else frame
        return f.T @ self.hessian(x) @ f

    def laplacian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.asarray(self.ambient_grad(x), dtype=float)
        h = np.asarray(self.ambient_hess(x), dtype=float)
        trace = np.trace(h, axis1=-2, axis2=-1)
        xhx = np.einsum("...i,...ij,...j->...", x, h, x)
        radial = np.einsum("...i,...i->...", g, x)
        return trace - xhx - self.n * radial

    # ------------------------------------------------------------------
    def __add__(self, other: "CurvatureField") -> "CurvatureField":
        if not isinstance(other, CurvatureField) or other.n != self.n:
            return NotImplemented
        return CurvatureField(
            n=self.n,
            name=f"{self.name} + {other.name}",
            ambient_value=lambda x: self.ambient_value(x) + other.ambient_value(x),
            ambient_grad=lambda x: self.ambient_grad(x) + other.ambient_grad(x),
            ambient_hess=lambda x: self.ambient_hess(x) + other.ambient_hess(x),
            analytic=self.analytic and other.analytic,
            meta={"parts": [self.name, other.name]},
        )

    def check_positive(self, nodes: np.ndarray) -> None:
        """Raise DomainError if K <= 0 anywhere on the given nodes."""
        k_min = float(np.min(self.value(nodes)))
        if k_min <= 0.0:
            raise DomainError(f"K must be positive; min over {len(nodes)} nodes is {k_min:.6g}")


# ============================================================================
# FAMILIES
# ============================================================================
def _broadcast(value, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), shape)


def constant_field(n: int, c: float) -> CurvatureField:
    n = check_dim(n)
    return CurvatureField(
        n=n,
        name=f"constant({c:g})",
        ambient_value=lambda x: np.full(np.shape(x)[:-1], float(c)),
        ambient_grad=lambda x: np.zeros(np.shape(x)),
        ambient_hess=lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        meta={"family": "constant", "c": float(c)},
    )


def affine_field(n: int, c: float, v: Sequence[float]) -> CurvatureField:
    """K(x) = c + v . x"""
    n = check_dim(n)
    v = _pad(v, n + 1)
    return CurvatureField(
        n=n,
        name=f"affine({c:g})",
        ambient_value=lambda x: c + np.asarray(x) @ v,
        ambient_grad=lambda x: _broadcast(v, np.shape(x)).copy(),
        ambient_hess=lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        meta={"family": "affine", "c": float(c), "v": v.tolist()},
    )


def quadratic_field(n: int, c: float, matrix, v: Optional[Sequence[float]] = None) -> CurvatureField:
    """K(x) = c + v . x + x^T A x with A symmetric (a vector is read as diag(A))."""
    n = check_dim(n)
    a = np.asarray(matrix, dtype=float)
    if a.ndim == 1:
        a = np.diag(_pad(a, n + 1))
    if a.shape != (n + 1, n + 1):
        raise DomainError(f"quadratic form must be {(n + 1, n + 1)}, got {a.shape}")
    a = 0.5 * (a + a.T)
    lin = _pad(v if v is not None else [], n + 1)
    return CurvatureField(
        n=n,
        name=f"quadratic({c:g})",
        ambient_value=lambda x: c + np.asarray(x) @ lin + np.einsum("...i,ij,...j->...", x, a, x),
        ambient_grad=lambda x: lin + 2.0 * np.asarray(x) @ a,
        ambient_hess=lambda x: _broadcast(2.0 * a, np.shape(x) + (np.shape(x)[-1],)).copy(),
        meta={"family": "quadratic", "c": float(c), "A": a.tolist(), "v": lin.tolist()},
    )


def bump_field(n: int, c: float, bumps: Sequence[Sequence]) -> CurvatureField:
    """
    Zonal Gaussian bumps K(x) = c + sum_k h_k exp((x . p_k - 1) / s_k).

    Args:
        n: Sphere dimension
        c: Base level
        bumps: Triples (h, s, p) with p a unit vector of length n+1
    """
    n = check_dim(n)
    hs = np.array([float(b[0]) for b in bumps])
    ss = np.array([float(b[1]) for b in bumps])
    ps = np.array([np.asarray(b[2], dtype=float) / np.linalg.norm(b[2]) for b in bumps])
    if np.any(ss <= 0):
        raise DomainError("bump widths must be positive")

    def _weights(x):
        e = np.exp((np.asarray(x) @ ps.T - 1.0) / ss)
        return hs * e / ss, hs * e / ss ** 2, hs * e

    def value(x):
        return c + np.sum(_weights(x)[2], axis=-1)

    def grad(x):
        return _weights(x)[0] @ ps

    def hess(x):
        w2 = _weights(x)[1]
        return np.einsum("...k,ki,kj->...ij", w2, ps, ps)

    return CurvatureField(
        n=n, name=f"bumps({len(hs)})", ambient_value=value, ambient_grad=grad, ambient_hess=hess,
        meta={"family": "bumps", "c": float(c), "h": hs.tolist(), "s": ss.tolist(), "p": ps.tolist()},
    )


def expression_field(n: int, expression: str) -> CurvatureField:
    """
    K from a sympy expression in x1..x{n+1}; derivatives are generated symbolically.

    Example:
        >>> K = expression_field(5, "1+0.1*x6")
    """
    n = check_dim(n)
    symbols = sp.symbols(" ".join(f"x{i}" for i in range(1, n + 2)))
    local = {str(s): s for s in symbols}
    try:
        expr = sp.sympify(expression, locals=local)
    except (sp.SympifyError, TypeError, SyntaxError) as e:
        raise ConfigError(f"cannot parse K expression {expression!r}: {e}") from e
    unknown = expr.free_symbols - set(symbols)
    if unknown:
        raise ConfigError(f"K expression uses unknown symbols {sorted(map(str, unknown))}; "
                          f"allowed x1..x{n + 1}")

    grad_exprs = [sp.diff(expr, s) for s in symbols]
    hess_exprs = [[sp.diff(g, s) for s in symbols] for g in grad_exprs]
    f_val = sp.lambdify(symbols, expr, modules="numpy")
    f_grad = [sp.lambdify(symbols, g, modules="numpy") for g in grad_exprs]
    f_hess = [[sp.lambdify(symbols, h, modules="numpy") for h in row] for row in hess_exprs]

    def value(x):
        x = np.asarray(x, dtype=float)
        return _broadcast(f_val(*np.moveaxis(x, -1, 0)), x.shape[:-1]).copy()

    def grad(x):
        x = np.asarray(x, dtype=float)
        cols = np.moveaxis(x, -1, 0)
        return np.stack([_broadcast(f(*cols), x.shape[:-1]) for f in f_grad], axis=-1)

    def hess(x):
        x = np.asarray(x, dtype=float)
        cols = np.moveaxis(x, -1, 0)
        rows = [np.stack([_broadcast(f(*cols), x.shape[:-1]) for f in row], axis=-1) for row in f_hess]
        return np.stack(rows, axis=-2)

    return CurvatureField(
        n=n, name=str(expression), ambient_value=value, ambient_grad=grad, ambient_hess=hess,
        meta={"family": "expression", "expression": str(expr)},
    )


def callable_field(n: int, func: ValueFn, name: str = "callable") -> CurvatureField:
    """
    K from an arbitrary vectorized callable; derivatives by ambient central differences.

    The ambient extension is taken 0-homogeneous, F(x) = func(x / |x|), so the
    radial derivative vanishes and only tangential differences matter.
    """
    n = check_dim(n)
    h = AMBIENT_FD_STEP
    logger.warning(f"K '{name}' has no analytic derivatives; using finite differences (h={h:g})")

    def value(x):
        x = np.asarray(x, dtype=float)
        return np.asarray(func(x / np.linalg.norm(x, axis=-1, keepdims=True)), dtype=float)

    eye = np.eye(n + 1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return np.stack([(value(x + h * e) - value(x - h * e)) / (2 * h) for e in eye], axis=-1)

    def hess(x):
        x = np.asarray(x, dtype=float)
        rows = [(grad(x + h * e) - grad(x - h * e)) / (2 * h) for e in eye]
        out = np.stack(rows, axis=-2)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    return CurvatureField(n=n, name=name, ambient_value=value, ambient_grad=grad,
                          ambient_hess=hess, analytic=False, meta={"family": "callable"})


def _pad(v, size: int) -> np.ndarray:
    out = np.zeros(size)
    vals = np.asarray(list(v), dtype=float)
    if vals.shape[0] > size:
        raise DomainError(f"coefficient vector has {vals.shape[0]} entries, at most {size} allowed")
    out[: vals.shape[0]] = vals
    return out


# ============================================================================
# STRING PARSING
# ============================================================================
def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def parse_curvature(source: str, n: int) -> CurvatureField:
    """
    Build K from a configuration string.

    Accepted forms:
        "1+0.1*x6"                        sympy expression in x1..x{n+1}
        "constant:1.5"
        "affine:c;v1,v2,..."
        "quadratic:c;a11,a22,..."         diagonal quadratic form
        "bumps:c;h,s,p1,...,p{n+1};..."   one group per bump
    """
    text = source.strip()
    family, sep, params = text.partition(":")
    family = family.strip().lower()
    if not sep or family not in FAMILIES:
        return expression_field(n, text)
    try:
        groups = [g for g in params.split(";") if g.strip()]
        if family == "constant":
            return constant_field(n, float(groups[0]))
        c = float(groups[0])
        if family == "affine":
            return affine_field(n, c, _floats(groups[1]) if len(groups) > 1 else [])
        if family == "quadratic":
            return quadratic_field(n, c, _floats(groups[1]) if len(groups) > 1 else [])
        bumps = []
        for g in groups[1:]:
            vals = _floats(g)
            bumps.append((vals[0], vals[1], vals[2:]))
        return bump_field(n, c, bumps)
    except (IndexError, ValueError) as e:
        raise ConfigError(f"cannot parse K family string {source!r}: {e}") from e


# ============================================================================
# DERIVATIVE CROSS-CHECKS
# ============================================================================
def geodesic_fd(K: CurvatureField, x: np.ndarray, h: float = FD_STEP):
    """
    Central geodesic differences at x in tangent_frame(x).

    Returns:
        (gradient components, second derivatives along frame vectors, Laplacian)
    """
    frame = tangent_frame(x)
    k0 = float(K.value(x))
    grad = np.empty(K.n)
    second = np.empty(K.n)
    for i in range(K.n):
        plus = float(K.value(exp_map(x, h * frame[:, i])))
        minus = float(K.value(exp_map(x, -h * frame[:, i])))
        grad[i] = (plus - minus) / (2 * h)
        second[i] = (plus - 2 * k0 + minus) / (h * h)
    return grad, second, float(np.sum(second))


def fd_hessian(K: CurvatureField, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Riemannian Hessian in tangent_frame(x) by central differences of the gradient."""
    frame = tangent_frame(x)
    cols = []
    for i in range(K.n):
        xp = exp_map(x, h * frame[:, i])
        xm = exp_map(x, -h * frame[:, i])
        # projecting onto the frame at x drops the normal part of the difference
        gp = frame.T @ K.gradient(xp)
        gm = frame.T @ K.gradient(xm)
        cols.append((gp - gm) / (2 * h))
    out = np.stack(cols, axis=1)
    return 0.5 * (out + out.T)


def check_derivatives(K: CurvatureField, rng: np.random.Generator, points: int = 20,
                      h: float = FD_STEP) -> Dict[str, float]:
    """
    Compare the oracles of K with geodesic finite differences at random points.

    Returns:
        Max relative errors of gradient and Laplacian, the max tangency defect
        and the minimum sampled value of K
    """
    worst_grad = worst_lap = worst_tan = 0.0
    k_min = np.inf
    for _ in range(points):
        x = rng.standard_normal(K.n + 1)
        x /= np.linalg.norm(x)
        fd_grad, _, fd_lap = geodesic_fd(K, x, h)
        g = K.gradient(x)
        scale = max(1.0, float(abs(K.value(x))))
        worst_grad = max(worst_grad, float(np.max(np.abs(tangent_frame(x).T @ g - fd_grad))) / scale)
        worst_lap = max(worst_lap, abs(float(K.laplacian(x)) - fd_lap) / scale)
        worst_tan = max(worst_tan, abs(float(g @ x)))
        k_min = min(k_min, float(K.value(x)))
    return {"grad_rel_err": worst_grad, "laplacian_rel_err": worst_lap,
            "tangency": worst_tan, "k_min": k_min}
