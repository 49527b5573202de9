"""
paneitz/flow.py

The pseudogradient of the single-bubble functional as an ODE on (a, lam) and its
asymptotic behaviour.
- W: convex combination of three motions
    Z1  far from the critical set: a moves uphill in K at speed 1/lam, lam frozen
    Z2  near y with -Delta K(y) < 0: lam shrinks (dlam/ds = -lam)
    Z3  near y with -Delta K(y) > 0: lam grows  (dlam/ds = +lam)
  Z2 and Z3 carry the mixing term m1 phi(lam |grad K(a)|) Z1
- Adaptive RKF45 integration in (a, log lam) with a renormalized to the sphere
- Blow-up settling, ensembles, the decrease check of J along W, and the list of
  critical points at infinity with their levels
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from paneitz.bubbles import Bubble, bubble_constants
from paneitz.common import spawn_rng
from paneitz.curvature import CurvatureField
from paneitz.errors import (
    DegenerateCriticalPointError,
    DomainError,
    FlowConfigurationError,
    IntegrationError,
    PaneitzError,
    PreconditionError,
)
from paneitz.functional import grad_J_pairings
from paneitz.integrators import integrate_adaptive
from paneitz.morse import CriticalPointRecord, find_critical_points
from paneitz.sphere_core import DEFAULT_BUDGET, as_point, normalize, tangent_frame

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
BLOWUP = "BlowUp"
COLLAPSE = "LambdaCollapse"
WANDERING = "Wandering"
OUTCOMES = (BLOWUP, COLLAPSE, WANDERING)

MU_START = 0.5
MU_SHRINK = 0.7
MU_MIN = 1e-3
MU_SAMPLES = 64
LAPLACIAN_TOL = 1e-8
DECREASE_WINDOW = (10.0, 500.0)


def smoothstep(t):
    """3t^2 - 2t^3 on [0, 1], clamped outside."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def cutoff_phi(t: float) -> float:
    """phi = 0 for t <= 1, 1 for t >= 2, smoothstep in between."""
    return float(smoothstep(t - 1.0))


@dataclass(frozen=True)
class FlowConfig:
    mu: float = MU_START
    m1: float = 0.1
    lambda_min: float = 1.0
    lambda_max: float = 1e6
    t_max: float = 400.0
    tol: float = 1e-8
    h0: float = 1e-2
    h_min: float = 1e-12
    settle_steps: int = 2000
    settle_tol: float = 1e-10

    def __post_init__(self):
        if not (self.mu > 0 and self.m1 > 0):
            raise DomainError(f"mu and m1 must be positive; got mu={self.mu}, m1={self.m1}")
        if not 0 < self.lambda_min < self.lambda_max:
            raise DomainError(f"need 0 < lambda_min < lambda_max; got {self.lambda_min}, {self.lambda_max}")


@dataclass(frozen=True)
class FlowState:
    a: np.ndarray
    lam: float
    s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", as_point(self.a))
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"flow state needs 0 < lam < inf; got {self.lam}")


@dataclass
class WVector:
    da: np.ndarray
    dlam: float
    weights: np.ndarray
    near: Optional[int] = None


@dataclass
class FlowOutcome:
    kind: str
    y: Optional[np.ndarray]
    trajectory: pd.DataFrame
    diagnostics: Dict = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def final_lambda(self) -> float:
        return float(self.trajectory["lambda"].iloc[-1])

    def summary(self) -> Dict:
        return {
            "kind": self.kind,
            "y": None if self.y is None else self.y.tolist(),
            "final_lambda": self.final_lambda,
            "flags": list(self.flags),
            **self.diagnostics,
        }


# ============================================================================
# NEIGHBOURHOOD RADIUS
# ============================================================================
def _ball_samples(y: np.ndarray, radius: float, rng: np.random.Generator, count: int) -> np.ndarray:
    frame = tangent_frame(y)
    dirs = normalize(rng.standard_normal((count, frame.shape[1])))
    r = radius * rng.random(count)
    return np.cos(r)[:, None] * y + np.sin(r)[:, None] * (dirs @ frame.T)


def choose_mu(K: CurvatureField, crits: Sequence[CriticalPointRecord], mu0: float = MU_START,
              seed: int = 0) -> float:
    """
    Largest mu in mu0 * 0.7^k such that the 2mu-balls around the critical points are
    disjoint and |Delta K| >= |Delta K(y)| / 2 on sampled points of each ball.

    Raises:
        DegenerateCriticalPointError: Delta K(y) = 0 at some critical point
        FlowConfigurationError: no admissible mu above MU_MIN
    """
    for r in crits:
        if abs(r.laplacian) < LAPLACIAN_TOL:
            raise DegenerateCriticalPointError(f"Delta K vanishes at {r.label}", point=r.y)
    rng = np.random.default_rng(seed)
    mu = mu0
    while mu >= MU_MIN:
        ok = True
        for i, a in enumerate(crits):
            for b in crits[i + 1:]:
                if np.arccos(np.clip(a.y @ b.y, -1.0, 1.0)) <= 4.0 * mu:
                    ok = False
            if ok:
                pts = _ball_samples(a.y, 2.0 * mu, rng, MU_SAMPLES)
                if np.min(np.abs(K.laplacian(pts))) < 0.5 * abs(a.laplacian):
                    ok = False
            if not ok:
                break
        if ok:
            logger.info(f"Neighbourhood radius | mu={mu:.4g} | critical_points={len(crits)}")
            return mu
        mu *= MU_SHRINK
    raise FlowConfigurationError(f"no admissible mu >= {MU_MIN} for {len(crits)} critical points")


# ============================================================================
# PSEUDOGRADIENT
# ============================================================================
def _ascent(K: CurvatureField, a: np.ndarray, lam: float) -> np.ndarray:
    g = K.gradient(a)
    norm = float(np.linalg.norm(g))
    return g / (lam * norm) if norm > 0.0 else np.zeros_like(a)


def pseudogradient_W(state: FlowState, K: CurvatureField, cfg: FlowConfig,
                     crits: Sequence[CriticalPointRecord]) -> WVector:
    """
    W at (a, lam). Weights (w1, w2, w3) sum to 1; the critical-neighbourhood weight is
    1 within mu of y and decays smoothly to 0 at 2mu.

    Raises:
        FlowConfigurationError: a lies within 2mu of two critical points
    """
    a, lam = state.a, state.lam
    dists = np.array([np.arccos(np.clip(a @ r.y, -1.0, 1.0)) for r in crits])
    omega = 1.0 - smoothstep((dists - cfg.mu) / cfg.mu)
    active = np.flatnonzero(omega > 0.0)
    if len(active) > 1:
        raise FlowConfigurationError(
            f"state within 2mu of {len(active)} critical points; mu={cfg.mu} is too large")
    z1 = _ascent(K, a, lam)
    weights = np.array([1.0, 0.0, 0.0])
    near = None
    dlam = 0.0
    da = z1
    if len(active) == 1:
        near = int(active[0])
        w = float(omega[near])
        sign = 1.0 if crits[near].minus_laplacian > 0.0 else -1.0
        mix = cfg.m1 * cutoff_phi(lam * float(np.linalg.norm(K.gradient(a))))
        da = (1.0 - w) * z1 + w * mix * z1
        dlam = w * sign * lam
        weights = np.array([1.0 - w, w if sign < 0 else 0.0, w if sign > 0 else 0.0])
    return WVector(da=da, dlam=dlam, weights=weights, near=near)


# ============================================================================
# INTEGRATION
# ============================================================================
def _settle(K: CurvatureField, a: np.ndarray, crits: Sequence[CriticalPointRecord], cfg: FlowConfig):
    """K-ascent at frozen lam until |grad K| < settle_tol or the step budget ends."""
    scale = max(float(np.max(np.abs(r.eigenvalues))) for r in crits)
    tau = 0.5 / scale
    x = a.copy()
    steps = 0
    for steps in range(1, cfg.settle_steps + 1):
        g = K.gradient(x)
        if float(np.linalg.norm(g)) < cfg.settle_tol:
            break
        x = normalize(x + tau * g)
    dists = np.array([np.arccos(np.clip(x @ r.y, -1.0, 1.0)) for r in crits])
    j = int(np.argmin(dists))
    return x, j, float(dists[j]), steps


def _frame(ts, ys, weights, n) -> pd.DataFrame:
    arr = np.asarray(ys)
    data = {"s": np.asarray(ts)}
    for k in range(n + 1):
        data[f"a_{k + 1}"] = arr[:, k]
    data["lambda"] = np.exp(arr[:, -1])
    w = np.asarray(weights)
    for k in range(3):
        data[f"case_weights_{k + 1}"] = w[:, k]
    data["ratio"] = np.full(len(arr), np.nan)
    return pd.DataFrame(data)


def integrate_flow(init: FlowState, K: CurvatureField, cfg: FlowConfig,
                   crits: Optional[Sequence[CriticalPointRecord]] = None) -> FlowOutcome:
    """
    Integrate the W-flow from `init` until lam leaves (lambda_min, lambda_max) or t_max.

    Raises:
        DomainError: init.lam outside (lambda_min, lambda_max)
        PreconditionError: K has no isolated critical points
        IntegrationError: step-size underflow (carries the states reached)
    """
    if not cfg.lambda_min < init.lam < cfg.lambda_max:
        raise DomainError(f"initial lam={init.lam} outside ({cfg.lambda_min}, {cfg.lambda_max})")
    if crits is None:
        crits = find_critical_points(K)
    if not crits or any(r.degenerate for r in crits):
        raise PreconditionError("flow needs isolated nondegenerate critical points of K")
    n = K.n
    log_min, log_max = math.log(cfg.lambda_min), math.log(cfg.lambda_max)

    def rhs(s, y):
        a = normalize(y[:-1])
        lam = math.exp(y[-1])
        w = pseudogradient_W(FlowState(a, lam, s), K, cfg, crits)
        return np.concatenate([w.da, [w.dlam / lam]])

    def project(y):
        return np.concatenate([normalize(y[:-1]), y[-1:]])

    def stop(s, y):
        if y[-1] >= log_max:
            return "lambda_max"
        if y[-1] <= log_min:
            return "lambda_min"
        return None

    y0 = np.concatenate([init.a, [math.log(init.lam)]])
    try:
        res = integrate_adaptive(rhs, init.s, y0, cfg.t_max, h0=cfg.h0, tol=cfg.tol, h_min=cfg.h_min,
                                 project=project, stop=stop)
    except IntegrationError as e:
        partial = e.trajectory
        dump = _frame(partial.ts, partial.ys, [[np.nan] * 3] * len(partial.ts), n)
        raise IntegrationError(str(e), trajectory=dump) from e
    weights = [pseudogradient_W(FlowState(normalize(y[:-1]), math.exp(y[-1]), t), K, cfg, crits).weights
               for t, y in zip(res.ts, res.ys)]
    traj = _frame(res.ts, res.ys, weights, n)
    diag = {"steps": len(res.ts) - 1, "rejected": res.rejected, "stop_reason": res.stop_reason,
            "s_final": float(res.ts[-1])}
    a_end = normalize(res.final[:-1])

    if res.stop_reason == "lambda_min":
        return FlowOutcome(COLLAPSE, None, traj, diag)
    if res.stop_reason != "lambda_max":
        return FlowOutcome(WANDERING, None, traj, diag)

    x, j, dist, steps = _settle(K, a_end, crits, cfg)
    diag.update({"settle_steps": steps, "settle_distance": dist,
                 "frozen_distance": float(np.arccos(np.clip(a_end @ crits[j].y, -1.0, 1.0)))})
    if dist < cfg.mu / 2:
        return FlowOutcome(BLOWUP, crits[j].y.copy(), traj, diag)
    return FlowOutcome(WANDERING, None, traj, diag, flags=["unsettled_blowup"])


# ============================================================================
# ENSEMBLES
# ============================================================================
@dataclass
class EnsembleResult:
    outcomes: List[FlowOutcome]
    histogram: Dict[str, int]
    violations: List[Dict]
    errors: List[Dict] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {
            "count": len(self.outcomes),
            "histogram": self.histogram,
            "violations": self.violations,
            "errors": self.errors,
            "outcomes": [o.summary() for o in self.outcomes],
        }


def _one(K, cfg, crits, seed, i, lambda0):
    rng = spawn_rng(seed, i)
    a = normalize(rng.standard_normal(K.n + 1))
    try:
        return integrate_flow(FlowState(a, lambda0), K, cfg, crits), None
    except PaneitzError as e:
        return None, {"task": i, "error": str(e), "error_type": type(e).__name__}


def run_ensemble(K: CurvatureField, cfg: FlowConfig, crits: Sequence[CriticalPointRecord],
                 count: int = 100, seed: int = 0, lambda0: float = 10.0, n_jobs: int = 1
                 ) -> EnsembleResult:
    """
    Flow lines from `count` uniform random starts at lam = lambda0.

    Start i uses the generator spawned for task i, so results do not depend on n_jobs.
    A violation is a BlowUp whose limit point has -Delta K < 0.
    """
    results = Parallel(n_jobs=n_jobs)(delayed(_one)(K, cfg, crits, seed, i, lambda0) for i in range(count))
    outcomes = [o for o, _ in results if o is not None]
    errors = [e for _, e in results if e is not None]
    for e in errors:
        logger.error(f"Flow line failed | task={e['task']} | {e['error_type']}: {e['error']}")
    hist = {k: 0 for k in OUTCOMES}
    violations = []
    for i, o in enumerate(outcomes):
        hist[o.kind] += 1
        if o.kind == BLOWUP:
            j = int(np.argmin([np.arccos(np.clip(o.y @ r.y, -1.0, 1.0)) for r in crits]))
            if crits[j].minus_laplacian < 0.0:
                violations.append({"trajectory": i, "y": o.y.tolist(), "label": crits[j].label})
    logger.info(f"Ensemble | count={count} | " + " | ".join(f"{k}={v}" for k, v in hist.items())
                + f" | violations={len(violations)}")
    return EnsembleResult(outcomes=outcomes, histogram=hist, violations=violations, errors=errors)


# ============================================================================
# DECREASE OF J ALONG W
# ============================================================================
@dataclass
class DecreaseReport:
    status: str
    min_ratio: Optional[float]
    checked: int
    skipped: int
    threshold: float
    ratios: List[float] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {"status": self.status, "min_ratio": self.min_ratio, "checked": self.checked,
                "skipped": self.skipped, "threshold": self.threshold, "flags": self.flags}


def decrease_check(outcome: FlowOutcome, K: CurvatureField, cfg: FlowConfig,
                   crits: Sequence[CriticalPointRecord], budget: int = DEFAULT_BUDGET,
                   window=DECREASE_WINDOW, stride: int = 10, threshold: float = 0.0) -> DecreaseReport:
    """
    <-grad J(u), W> / (|grad K(a)|/lam + 1/lam^2) at sampled states, u = S_n^(-1/2) bubble.

    The bubble moves along W with d/ds bubble = (lam'/lam) lam d_lam bubble
    + sum_j (lam a'_j) (1/lam) d_{a_j} bubble, so the pairing is assembled from
    grad_J_pairings. Fills the `ratio` column of the trajectory at checked rows.
    """
    if not crits or any(r.degenerate for r in crits):
        return DecreaseReport("NOT_APPLICABLE", None, 0, 0, threshold,
                              flags=["no isolated critical points"])
    alpha = bubble_constants(K.n).S_n ** -0.5
    traj = outcome.trajectory
    a_cols = [f"a_{k + 1}" for k in range(K.n + 1)]
    ratios, skipped, flags = [], 0, []
    rows = list(range(0, len(traj), stride))
    if rows[-1] != len(traj) - 1:
        rows.append(len(traj) - 1)
    for idx in rows:
        lam = float(traj["lambda"].iloc[idx])
        if not window[0] <= lam <= window[1]:
            continue
        a = normalize(traj[a_cols].iloc[idx].to_numpy())
        state = FlowState(a, lam)
        try:
            w = pseudogradient_W(state, K, cfg, crits)
            g = grad_J_pairings(Bubble(a, lam), alpha, K, budget)
        except PaneitzError as e:
            skipped += 1
            flags.append(f"row {idx}: {type(e).__name__}")
            continue
        pairing = g.g_lambda * (w.dlam / lam) + float(g.g_a @ (lam * (g.frame.T @ w.da)))
        denom = float(np.linalg.norm(K.gradient(a))) / lam + 1.0 / lam ** 2
        ratio = -alpha * pairing / denom
        traj.loc[traj.index[idx], "ratio"] = ratio
        ratios.append(ratio)
    if not ratios:
        return DecreaseReport("NOT_APPLICABLE", None, 0, skipped, threshold, flags=flags + ["no state in window"])
    mn = float(min(ratios))
    return DecreaseReport("PASS" if mn > threshold else "FAIL", mn, len(ratios), skipped, threshold,
                          ratios=ratios, flags=flags)


# ============================================================================
# CRITICAL POINTS AT INFINITY
# ============================================================================
def critical_points_at_infinity(K: CurvatureField, crits: Sequence[CriticalPointRecord]) -> List[Dict]:
    """
    Critical points with -Delta K(y) > 0 and their level S_n^(4/n) K(y)^(-(n-4)/n), by level.

    Raises:
        DegenerateCriticalPointError: Delta K(y) = 0 at a critical point, or a degenerate Hessian
    """
    n = K.n
    S = bubble_constants(n).S_n
    out = []
    for r in crits:
        if r.degenerate or abs(r.laplacian) < LAPLACIAN_TOL:
            raise DegenerateCriticalPointError(f"critical point {r.label} has Delta K = {r.laplacian:.3e}",
                                               point=r.y)
        if r.minus_laplacian > 0.0:
            out.append({"label": r.label, "y": r.y.tolist(), "K": r.value,
                        "minus_laplacian": r.minus_laplacian,
                        "level": S ** (4 / n) * r.value ** (-(n - 4) / n)})
    out.sort(key=lambda d: (d["level"], d["label"]))
    return out
