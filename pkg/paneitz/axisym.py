"""
paneitz/axisym.py

Zonal functions u(theta) on S^n and the fourth-order equation P u = K u^((n+4)/(n-4)).
- Chebyshev-Gauss-Lobatto collocation in theta in [0, pi]; pole rows use Delta u = n u''
- P = (-Delta + A)(-Delta + B), A = n(n-2)/4, B = (n-4)(n+2)/4, inverted as two LU solves
- Energy form ||u||_P^2 = int (Delta u)^2 + c_n int |grad u|^2 + d_n int u^2 with
  Clenshaw-Curtis weights times omega_(n-1) sin^(n-1)(theta)
- Preconditioned damped Newton for the equation, the negative-part (w^-) machinery and
  single-bubble fitting
"""
import math
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg, optimize, special
from scipy.linalg import toeplitz

from paneitz.bubbles import Bubble, bubble_eval
from paneitz.curvature import CurvatureField
from paneitz.errors import DomainError, PoleSingularityError
from paneitz.sphere_core import check_dim, constants, exact_coefficients, north_pole

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
DEFAULT_NODES = 201
POLE_TOL = 1e-6
WARM_LAMBDA_FRACTION = 0.1
FIT_SCAN = 41
NORTH = "north"
SOUTH = "south"


# ============================================================================
# COLLOCATION
# ============================================================================
def chebdif(N: int, M: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chebyshev collocation points x_k = cos(k pi / (N-1)) (descending) and the
    differentiation matrices of orders 1..M, shape (M, N, N).

    Uses the trigonometric form of x_k - x_j and the flipping trick for accuracy.
    """
    if M >= N:
        raise DomainError(f"number of nodes {N} must exceed the derivative order {M}")
    if M <= 0:
        raise DomainError("derivative order must be at least 1")

    DM = np.zeros((M, N, N))
    n1, n2 = N // 2, int(np.ceil(N / 2.0))
    k = np.arange(N)
    th = k * np.pi / (N - 1)
    x = np.sin(np.pi * (N - 1 - 2 * k) / (2 * (N - 1)))

    T = np.tile(th / 2, (N, 1))
    DX = 2 * np.sin(T.T + T) * np.sin(T.T - T)
    DX[n1:, :] = -np.flipud(np.fliplr(DX[0:n2, :]))
    DX[range(N), range(N)] = 1.0
    DX = DX.T

    C = toeplitz((-1.0) ** k)
    C[0, :] *= 2
    C[-1, :] *= 2
    C[:, 0] *= 0.5
    C[:, -1] *= 0.5

    Z = 1.0 / DX
    Z[range(N), range(N)] = 0.0

    D = np.eye(N)
    for ell in range(M):
        D = (ell + 1) * Z * (C * np.tile(np.diag(D), (N, 1)).T - D)
        D[range(N), range(N)] = -np.sum(D, axis=1)
        DM[ell, :, :] = D
    return x, DM


def clencurt(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on the N+1 points cos(j pi / N), j = 0..N."""
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N ** 2 - 1)
        for k in range(1, N // 2):
            v -= 2 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
        v -= np.cos(N * theta[ii]) / (N ** 2 - 1)
    else:
        w[0] = w[N] = 1.0 / N ** 2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
    w[ii] = 2 * v / N
    return w


@dataclass(frozen=True, eq=False)
class AxisymGrid:
    n: int
    theta: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    L: np.ndarray
    weights: np.ndarray
    x: np.ndarray
    lu_a: Tuple
    lu_b: Tuple

    @property
    def size(self) -> int:
        return int(self.theta.shape[0])

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def paneitz_matrix(self) -> np.ndarray:
        c = constants(self.n)
        eye = np.eye(self.size)
        return (-self.L + c.shift_a * eye) @ (-self.L + c.shift_b * eye)


@lru_cache(maxsize=16)
def make_grid(n: int, size: int = DEFAULT_NODES) -> AxisymGrid:
    """Collocation grid with `size` CGL nodes from theta = 0 (north) to theta = pi."""
    n = check_dim(n)
    if size < 8:
        raise DomainError(f"axisymmetric grid needs at least 8 nodes, got {size}")
    xc, DM = chebdif(size, 2)
    theta = 0.5 * np.pi * (1.0 - xc)
    theta[0], theta[-1] = 0.0, np.pi
    D1 = -(2.0 / np.pi) * DM[0]
    D2 = (2.0 / np.pi) ** 2 * DM[1]
    L = D2.copy()
    inner = slice(1, size - 1)
    L[inner] += ((n - 1) / np.tan(theta[inner]))[:, None] * D1[inner]
    L[0] = n * D2[0]
    L[-1] = n * D2[-1]
    c = constants(n)
    cc = clencurt(size - 1) * (np.pi / 2.0)
    weights = c.omega_n1 * np.sin(theta) ** (n - 1) * cc
    x = np.zeros((size, n + 1))
    x[:, 0] = np.sin(theta)
    x[:, n] = np.cos(theta)
    eye = np.eye(size)
    lu_a = linalg.lu_factor(-L + c.shift_a * eye)
    lu_b = linalg.lu_factor(-L + c.shift_b * eye)
    logger.debug(f"Axisymmetric grid | n={n} | nodes={size}")
    return AxisymGrid(n=n, theta=theta, D1=D1, D2=D2, L=L, weights=weights, x=x, lu_a=lu_a, lu_b=lu_b)


@dataclass(frozen=True, eq=False)
class AxisymField:
    values: np.ndarray
    grid: AxisymGrid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.theta.shape:
            raise DomainError(f"field has shape {vals.shape}, grid has {self.grid.theta.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "AxisymField":
        return AxisymField(values, self.grid)


# ============================================================================
# OPERATORS
# ============================================================================
def check_pole_regular(u: AxisymField, tol: float = POLE_TOL) -> None:
    """Raise PoleSingularityError when u'(theta) does not vanish at both poles."""
    du = u.grid.D1 @ u.values
    scale = max(float(np.max(np.abs(du))), float(np.max(np.abs(u.values))), 1.0)
    for name, val in (("north", du[0]), ("south", du[-1])):
        if abs(val) > tol * scale:
            raise PoleSingularityError(f"u' at the {name} pole is {val:.3e} (scale {scale:.3e})")


def _check_dim(u: AxisymField, n: Optional[int]) -> None:
    if n is not None and n != u.grid.n:
        raise DomainError(f"field lives on S^{u.grid.n}, requested n={n}")


def laplacian_axisym(u: AxisymField, n: Optional[int] = None) -> AxisymField:
    """Delta u = u'' + (n-1) cot(theta) u', with n u'' at the poles."""
    _check_dim(u, n)
    check_pole_regular(u)
    return u.with_values(u.grid.L @ u.values)


def paneitz_apply(u: AxisymField, n: Optional[int] = None) -> AxisymField:
    """P u = Delta^2 u - c_n Delta u + d_n u, as the product of two shifted Laplacians."""
    _check_dim(u, n)
    check_pole_regular(u)
    c = constants(u.grid.n)
    L = u.grid.L
    w = -(L @ u.values) + c.shift_b * u.values
    return u.with_values(-(L @ w) + c.shift_a * w)


def paneitz_solve(f, grid: AxisymGrid) -> np.ndarray:
    """P^(-1) f by two second-order LU solves; f may be a vector or a matrix of columns."""
    f = np.asarray(f, dtype=float)
    w = linalg.lu_solve(grid.lu_a, f)
    return linalg.lu_solve(grid.lu_b, w)


def energy_inner(u: np.ndarray, v: np.ndarray, grid: AxisymGrid) -> float:
    """<u, v>_P = int Delta u Delta v + c_n int u' v' + d_n int u v on the grid."""
    c = constants(grid.n)
    Lu, Lv = grid.L @ u, grid.L @ v
    du, dv = grid.D1 @ u, grid.D1 @ v
    return grid.integrate(Lu * Lv) + c.c_n * grid.integrate(du * dv) + c.d_n * grid.integrate(u * v)


def energy_norm(u: AxisymField) -> float:
    return math.sqrt(max(energy_inner(u.values, u.values, u.grid), 0.0))


def lq_norm(values: np.ndarray, grid: AxisymGrid, q: float) -> float:
    return grid.integrate(np.abs(values) ** q) ** (1.0 / q)


def axisym_J(u: AxisymField, K: CurvatureField) -> float:
    """J(u) = ||u||_P^2 / (int K |u|^(2n/(n-4)))^((n-4)/n) on the grid."""
    n = u.grid.n
    q = 2 * n / (n - 4)
    k = K.value(u.grid.x)
    den = u.grid.integrate(k * np.abs(u.values) ** q)
    if den <= 0.0:
        raise DomainError("J undefined: int K |u|^q vanishes")
    return energy_inner(u.values, u.values, u.grid) / den ** ((n - 4) / n)


# ============================================================================
# SPECIAL FIELDS
# ============================================================================
def bubble_field(grid: AxisymGrid, lam: float, pole: str = NORTH) -> AxisymField:
    """Bubble with scale lam concentrated at the north (theta = 0) or south pole."""
    if pole not in (NORTH, SOUTH):
        raise DomainError(f"pole must be {NORTH!r} or {SOUTH!r}, got {pole!r}")
    a = north_pole(grid.n) * (1.0 if pole == NORTH else -1.0)
    return AxisymField(bubble_eval(Bubble(a, lam), grid.x, grid.n), grid)


def zonal_harmonic(grid: AxisymGrid, k: int) -> AxisymField:
    """Degree-k zonal harmonic C_k^((n-1)/2)(cos theta), normalized to 1 at the north pole."""
    alpha = (grid.n - 1) / 2.0
    vals = special.eval_gegenbauer(k, alpha, np.cos(grid.theta))
    return AxisymField(vals / special.eval_gegenbauer(k, alpha, 1.0), grid)


def zonal_eigenvalue(n: int, k: int) -> Fraction:
    """Exact eigenvalue of P on degree-k zonal harmonics, (mu_k + A)(mu_k + B), mu_k = k(k+n-1)."""
    mu = Fraction(k * (k + n - 1))
    return (mu + Fraction(n * (n - 2), 4)) * (mu + Fraction((n - 4) * (n + 2), 4))


def factorization_identity(n: int, k: int) -> bool:
    """mu^2 + c_n mu + d_n equals the factored eigenvalue, and c_n^2 - 4 d_n = 4, exactly."""
    c_n, d_n = exact_coefficients(n)
    mu = Fraction(k * (k + n - 1))
    return c_n ** 2 - 4 * d_n == 4 and mu * mu + c_n * mu + d_n == zonal_eigenvalue(n, k)


def zonal_eigen_check(grid: AxisymGrid, k: int) -> Dict[str, float]:
    """Relative errors of P^(-1) Y_k = Y_k / Lambda_k and of the energy Rayleigh quotient."""
    Y = zonal_harmonic(grid, k).values
    lam = float(zonal_eigenvalue(grid.n, k))
    inv = paneitz_solve(Y, grid)
    inv_err = float(np.max(np.abs(inv - Y / lam)) / np.max(np.abs(Y / lam)))
    rq = energy_inner(Y, Y, grid) / grid.integrate(Y * Y)
    return {"k": k, "eigenvalue": lam, "inverse_rel_err": inv_err, "rayleigh_rel_err": abs(rq - lam) / lam}


# ============================================================================
# RESIDUALS
# ============================================================================
def _nonlinearity(u: np.ndarray, k: np.ndarray, p: float) -> np.ndarray:
    return k * np.maximum(u, 0.0) ** p


def preconditioned_residual(u: AxisymField, K: CurvatureField) -> np.ndarray:
    """u - P^(-1)(K u_+^p)."""
    n = u.grid.n
    p = (n + 4) / (n - 4)
    return u.values - paneitz_solve(_nonlinearity(u.values, K.value(u.grid.x), p), u.grid)


def residuals(u: AxisymField, K: CurvatureField) -> Dict[str, float]:
    """Preconditioned sup|u - P^(-1) K u_+^p| / sup|u| and strong sup|Pu - K u_+^p| / sup|K u_+^p|."""
    n = u.grid.n
    p = (n + 4) / (n - 4)
    rhs = _nonlinearity(u.values, K.value(u.grid.x), p)
    strong = u.grid.paneitz_matrix() @ u.values - rhs
    pre = preconditioned_residual(u, K)
    return {
        "preconditioned": float(np.max(np.abs(pre)) / np.max(np.abs(u.values))),
        "strong": float(np.max(np.abs(strong)) / max(float(np.max(np.abs(rhs))), 1e-300)),
    }


# ============================================================================
# BUBBLE FIT
# ============================================================================
@dataclass
class BubbleFit:
    alpha: float
    pole: str
    lam: float
    fit_residual: float
    local_minima: List[Dict] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {"alpha": self.alpha, "pole": self.pole, "lambda": self.lam,
                "fit_residual": self.fit_residual, "local_minima": self.local_minima}


def _fit_at(u: np.ndarray, grid: AxisymGrid, pole: str, t: float, norm_u: float):
    delta = bubble_field(grid, math.exp(t), pole).values
    alpha = energy_inner(u, delta, grid) / energy_inner(delta, delta, grid)
    r = u - alpha * delta
    return math.sqrt(max(energy_inner(r, r, grid), 0.0)) / norm_u, alpha


def fit_single_bubble(u: AxisymField, n: Optional[int] = None, lam_max: Optional[float] = None) -> BubbleFit:
    """
    Closest alpha * bubble to u in the P-norm over alpha > 0, lam in [1, lam_max] and both poles.

    alpha is the P-projection for fixed (pole, lam); log lam is scanned on a coarse grid
    and every interior local minimum is refined by golden-section search. All local
    minima are reported and the smallest is returned. fit_residual is relative to ||u||_P.

    Raises:
        DomainError: u is identically zero
    """
    _check_dim(u, n)
    grid = u.grid
    norm_u = energy_norm(u)
    if norm_u == 0.0:
        raise DomainError("cannot fit a bubble to the zero function")
    lam_max = lam_max or max(2.0, WARM_LAMBDA_FRACTION * grid.size * 2)
    ts = np.linspace(0.0, math.log(lam_max), FIT_SCAN)
    minima = []
    for pole in (NORTH, SOUTH):
        scan = [_fit_at(u.values, grid, pole, t, norm_u)[0] for t in ts]
        for i in range(len(ts)):
            left = scan[i - 1] if i > 0 else np.inf
            right = scan[i + 1] if i < len(ts) - 1 else np.inf
            if not (scan[i] <= left and scan[i] <= right):
                continue
            if 0 < i < len(ts) - 1 and scan[i] < left and scan[i] < right:
                t_best = optimize.golden(lambda t: _fit_at(u.values, grid, pole, t, norm_u)[0],
                                         brack=(ts[i - 1], ts[i], ts[i + 1]), tol=1e-14, maxiter=5000)
                t_best = float(np.clip(t_best, ts[0], ts[-1]))
            else:
                t_best = float(ts[i])
            res, alpha = _fit_at(u.values, grid, pole, t_best, norm_u)
            if alpha > 0:
                minima.append({"pole": pole, "lambda": math.exp(t_best), "alpha": alpha, "fit_residual": res})
    if not minima:
        raise DomainError("no bubble with positive weight approximates u")
    minima.sort(key=lambda m: m["fit_residual"])
    best = minima[0]
    if len(minima) > 1:
        logger.debug(f"Bubble fit | {len(minima)} local minima | best={best}")
    return BubbleFit(alpha=best["alpha"], pole=best["pole"], lam=best["lambda"],
                     fit_residual=best["fit_residual"], local_minima=minima)


# ============================================================================
# NEWTON SOLVER
# ============================================================================
@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 60
    min_damping: float = 2.0 ** -30
    fit: bool = True


@dataclass
class SolveReport:
    converged: bool
    residual_sup: float
    newton_iters: int
    positivity: bool
    strong_residual: float = float("nan")
    J: float = float("nan")
    v_eta: float = float("nan")
    bubble_fit: Optional[BubbleFit] = None
    history: List[float] = field(default_factory=list)
    message: str = ""

    def as_dict(self) -> Dict:
        return {
            "converged": self.converged,
            "residual_sup": self.residual_sup,
            "newton_iters": self.newton_iters,
            "positivity": self.positivity,
            "strong_residual": self.strong_residual,
            "J": self.J,
            "v_eta_measure": self.v_eta,
            "bubble_fit": None if self.bubble_fit is None else self.bubble_fit.as_dict(),
            "history": self.history,
            "message": self.message,
        }


def solve_curvature_equation(K: CurvatureField, init: AxisymField, opts: SolveOptions = SolveOptions()
                             ) -> Tuple[AxisymField, SolveReport]:
    """
    Damped Newton on G(u) = u - P^(-1)(K u_+^p) = 0, p = (n+4)/(n-4).

    The Newton system (I - P^(-1) diag(p K u_+^(p-1))) du = -G is solved by least
    squares, since it is singular along the bubble family when K is constant. Steps are
    halved until sup|G| decreases. Negative converged solutions are reported, not projected.

    Raises:
        DomainError: K <= 0 on the grid or init not positive
    """
    from paneitz import functional

    grid = init.grid
    n = grid.n
    p = (n + 4) / (n - 4)
    k = K.value(grid.x)
    if np.min(k) <= 0.0:
        raise DomainError(f"K must be positive on the grid; min={float(np.min(k)):.6g}")
    if np.min(init.values) <= 0.0:
        raise DomainError("initial guess must be positive")

    u = init.values.copy()
    G = u - paneitz_solve(_nonlinearity(u, k, p), grid)
    res = float(np.max(np.abs(G)))
    history = [res / float(np.max(np.abs(u)))]
    converged = history[-1] < opts.tol
    it = 0
    message = ""
    while not converged and it < opts.max_iter:
        it += 1
        jac_diag = p * k * np.maximum(u, 0.0) ** (p - 1)
        J = np.eye(grid.size) - paneitz_solve(np.diag(jac_diag), grid)
        du = np.linalg.lstsq(J, -G, rcond=None)[0]
        t = 1.0
        while t >= opts.min_damping:
            trial = u + t * du
            G_trial = trial - paneitz_solve(_nonlinearity(trial, k, p), grid)
            res_trial = float(np.max(np.abs(G_trial)))
            if res_trial < res:
                break
            t *= 0.5
        else:
            message = f"line search stagnated at iteration {it}"
            break
        u, G, res = trial, G_trial, res_trial
        history.append(res / float(np.max(np.abs(u))))
        logger.debug(f"Newton | iter={it} | damping={t:.3g} | residual={history[-1]:.3e}")
        converged = history[-1] < opts.tol
    if not converged and not message:
        message = f"no convergence in {opts.max_iter} iterations"

    sol = AxisymField(u, grid)
    report = SolveReport(converged=converged, residual_sup=history[-1], newton_iters=it,
                         positivity=bool(np.min(u) > 0.0), history=history, message=message)
    report.strong_residual = residuals(sol, K)["strong"]
    if np.any(u != 0.0):
        report.J = axisym_J(sol, K)
        report.v_eta = functional.v_eta_measure(sol, K)
    if converged and opts.fit:
        try:
            report.bubble_fit = fit_single_bubble(sol)
        except DomainError as e:
            logger.warning(f"Bubble fit skipped: {e}")
    logger.info(f"Solve finished | converged={converged} | iters={it} | residual={history[-1]:.3e} "
                f"| positive={report.positivity}")
    return sol, report


# alias
solve_equation3 = solve_curvature_equation


def warm_start(grid: AxisymGrid, lam: float, pole: str = NORTH) -> AxisymField:
    """Bubble initial guess with lam capped at 0.1 * (number of nodes)."""
    cap = WARM_LAMBDA_FRACTION * grid.size
    if lam > cap:
        logger.warning(f"Warm-start lambda {lam} capped at {cap}")
        lam = cap
    return bubble_field(grid, lam, pole)


def solve_sweep(K: CurvatureField, grid: AxisymGrid, lambdas: Sequence[float],
                opts: SolveOptions = SolveOptions(), n_jobs: int = 1) -> List[SolveReport]:
    """Independent solves from bubble warm starts, gathered in the order of `lambdas`."""
    def one(lam):
        return solve_curvature_equation(K, warm_start(grid, lam), opts)[1]
    return Parallel(n_jobs=n_jobs)(delayed(one)(lam) for lam in lambdas)


def solution_frame(u: AxisymField, K: CurvatureField) -> pd.DataFrame:
    """Columns theta, u, residual (preconditioned pointwise residual)."""
    return pd.DataFrame({"theta": u.grid.theta, "u": u.values, "residual": preconditioned_residual(u, K)})


# ============================================================================
# NEGATIVE PART
# ============================================================================
@dataclass
class NegativePart:
    u_minus_norm: float
    w_minus: AxisymField
    w_norm: float
    w1_ratio: float
    chain: Tuple[float, float, float]
    w_nonpositive: bool

    def as_dict(self) -> Dict:
        return {"u_minus_norm": self.u_minus_norm, "w_norm": self.w_norm, "w1_ratio": self.w1_ratio,
                "chain": {"lhs": self.chain[0], "mid": self.chain[1], "rhs": self.chain[2]},
                "w_nonpositive": self.w_nonpositive}


def negative_part_machinery(u: AxisymField, K: CurvatureField, n: Optional[int] = None) -> NegativePart:
    """
    u^- = max(0, -u), its L^(2n/(n-4)) norm N, and w^- solving P w^- = -K (u^-)^p.

    w1_ratio = ||w^-||_P / N^p. The chain is
        lhs = min K * N^q  <=  mid = int K (u^-)^q  (= int u P w^-),   rhs = ||w^-||_P^2.
    """
    _check_dim(u, n)
    grid = u.grid
    nn = grid.n
    p = (nn + 4) / (nn - 4)
    q = 2 * nn / (nn - 4)
    k = K.value(grid.x)
    minus = np.maximum(-u.values, 0.0)
    if not np.any(minus > 0.0):
        zero = u.with_values(np.zeros_like(u.values))
        return NegativePart(0.0, zero, 0.0, 0.0, (0.0, 0.0, 0.0), True)
    N = lq_norm(minus, grid, q)
    w = paneitz_solve(-k * minus ** p, grid)
    w_norm = math.sqrt(max(energy_inner(w, w, grid), 0.0))
    lhs = float(np.min(k)) * N ** q
    mid = grid.integrate(k * minus ** q)
    chain = (lhs, mid, w_norm ** 2)
    scale = float(np.max(np.abs(w)))
    return NegativePart(u_minus_norm=N, w_minus=u.with_values(w), w_norm=w_norm, w1_ratio=w_norm / N ** p,
                        chain=chain, w_nonpositive=bool(np.max(w) <= 1e-12 * scale))
