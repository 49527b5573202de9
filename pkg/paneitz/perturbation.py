"""
paneitz/perturbation.py

C^1-small modification of K near chosen upper-group saddles so that -Delta K becomes
positive there while the critical set and all Morse indices stay the same.

Near a target z the correction is G = chi(d(x, z)) q(x) with
    q(x) = 1/2 x^T B x,   B = F M F^T,  F = tangent_frame(z)
where M deepens the negative Hessian eigenvalues of K at z by a common factor t, and chi
is a smooth plateau equal to 1 on B(z, s rho) and 0 outside B(z, rho). Since q(z) = 0 and
B z = 0, z stays critical and Hess(K + G)(z) = Hess K(z) + M.

The result is verified, never assumed: critical points are searched again on the new
field and compared with the old ones.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from paneitz.curvature import CurvatureField
from paneitz.errors import DegenerateCriticalPointError, PerturbationError, PreconditionError
from paneitz.morse import (
    UPPER,
    CriticalPointRecord,
    ShootingConfig,
    find_critical_points,
    homology_of_X,
    morse_complex,
)
from paneitz.sphere_core import normalize, tangent_frame

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
LAPLACIAN_MARGIN = 0.1
PLATEAU_FRACTIONS = (0.5, 0.7, 0.85)
MATCH_TOL = 1e-6
C1_SAMPLES = 4000
LAPLACIAN_TOL = 1e-8


# ============================================================================
# SMOOTH PLATEAU
# ============================================================================
def _f(t: np.ndarray):
    """e^(-1/t) for t > 0 with its first two derivatives; zero otherwise."""
    t = np.asarray(t, dtype=float)
    pos = t > 0.0
    safe = np.where(pos, t, 1.0)
    val = np.where(pos, np.exp(-1.0 / safe), 0.0)
    d1 = val / safe ** 2
    d2 = val * (1.0 / safe ** 4 - 2.0 / safe ** 3)
    return val, np.where(pos, d1, 0.0), np.where(pos, d2, 0.0)


def transition(tau: np.ndarray):
    """
    psi(tau) = f(1 - tau) / (f(1 - tau) + f(tau)): 1 for tau <= 0, 0 for tau >= 1, C-infinity.

    Returns (psi, psi', psi'').
    """
    g, g1, g2 = _f(1.0 - tau)
    g1, g2 = -g1, g2
    h, h1, h2 = _f(tau)
    s = g + h
    s1 = g1 + h1
    num = g1 * h - g * h1
    dnum = g2 * h - g * h2
    psi = g / s
    d1 = num / s ** 2
    d2 = (dnum * s - 2.0 * num * s1) / s ** 3
    return psi, d1, d2


@dataclass(frozen=True)
class PlateauBump:
    """chi(d) = 1 on [0, s rho], 0 on [rho, pi], smooth in between; derivatives in c = cos d."""
    rho: float
    plateau: float

    def of_cos(self, c: np.ndarray):
        c = np.clip(np.asarray(c, dtype=float), -1.0, 1.0)
        d = np.arccos(c)
        width = (1.0 - self.plateau) * self.rho
        tau = (d - self.plateau * self.rho) / width
        psi, p1, p2 = transition(tau)
        active = (tau > 0.0) & (tau < 1.0)
        sin_d = np.where(active, np.sin(d), 1.0)
        chi_d = p1 / width
        chi_dd = p2 / width ** 2
        chi_c = np.where(active, -chi_d / sin_d, 0.0)
        chi_cc = np.where(active, chi_dd / sin_d ** 2 - chi_d * np.cos(d) / sin_d ** 3, 0.0)
        return psi, chi_c, chi_cc


def bump_correction(n: int, z: np.ndarray, M: np.ndarray, bump: PlateauBump, name: str = "bump"
                    ) -> CurvatureField:
    """G(x) = chi(x . z) * 1/2 x^T B x with B = F M F^T, as a CurvatureField with exact derivatives."""
    frame = tangent_frame(z)
    B = frame @ M @ frame.T

    def parts(x):
        x = np.asarray(x, dtype=float)
        Bx = x @ B
        q = 0.5 * np.einsum("...i,...i->...", x, Bx)
        chi, chi_c, chi_cc = bump.of_cos(x @ z)
        return Bx, q, chi, chi_c, chi_cc

    def value(x):
        _, q, chi, _, _ = parts(x)
        return chi * q

    def grad(x):
        Bx, q, chi, chi_c, _ = parts(x)
        return (chi_c * q)[..., None] * z + chi[..., None] * Bx

    def hess(x):
        Bx, q, chi, chi_c, chi_cc = parts(x)
        zz = np.outer(z, z)
        cross = z[:, None] * Bx[..., None, :] + Bx[..., :, None] * z[None, :]
        return ((chi_cc * q)[..., None, None] * zz + chi_c[..., None, None] * cross
                + chi[..., None, None] * B)

    return CurvatureField(n=n, name=name, ambient_value=value, ambient_grad=grad, ambient_hess=hess,
                          meta={"family": "plateau_bump", "center": z.tolist(), "rho": bump.rho,
                                "plateau": bump.plateau})


# ============================================================================
# REPORT
# ============================================================================
@dataclass
class PerturbationReport:
    targets: List[str]
    depth_factors: Dict[str, float]
    plateau: float
    rho: float
    c1_distance: float
    c1_tol: float
    same_critical_set: bool
    same_indices: bool
    target_minus_laplacian: Dict[str, float]
    items: Dict[str, Dict] = field(default_factory=dict)
    attempts: List[Dict] = field(default_factory=list)

    def as_dict(self) -> Dict:
        return {
            "targets": self.targets,
            "depth_factors": self.depth_factors,
            "plateau": self.plateau,
            "rho": self.rho,
            "c1_distance": self.c1_distance,
            "c1_tol": self.c1_tol,
            "same_critical_set": self.same_critical_set,
            "same_indices": self.same_indices,
            "target_minus_laplacian": self.target_minus_laplacian,
            "items": self.items,
            "attempts": self.attempts,
        }

    @property
    def passed(self) -> bool:
        return (self.same_critical_set and self.same_indices and self.c1_distance <= self.c1_tol
                and all(v > 0.0 for v in self.target_minus_laplacian.values())
                and all(item.get("status") != "FAIL" for item in self.items.values()))


# ============================================================================
# CONSTRUCTION
# ============================================================================
def _validate_targets(K: CurvatureField, records: Sequence[CriticalPointRecord],
                      targets: Sequence[CriticalPointRecord], rho: float, m: Optional[int]) -> None:
    n = K.n
    for t in targets:
        if t.group != UPPER:
            raise PreconditionError(f"target {t.label} is not in the upper group")
        if t.minus_laplacian > 0.0:
            raise PreconditionError(f"target {t.label} already has -Delta K = {t.minus_laplacian:.6g} > 0")
        lo = n - m + 3 if m is not None else 1
        if not lo <= t.index <= n - 2:
            raise PreconditionError(f"target {t.label} has index {t.index} outside [{lo}, {n - 2}]")
    for i, a in enumerate(targets):
        for b in targets[i + 1:]:
            if np.arccos(np.clip(a.y @ b.y, -1.0, 1.0)) <= 2.0 * rho:
                raise PreconditionError(f"balls around {a.label} and {b.label} overlap at rho={rho}")
    for t in targets:
        for r in records:
            if r is t:
                continue
            if np.arccos(np.clip(r.y @ t.y, -1.0, 1.0)) <= rho:
                raise PreconditionError(f"critical point {r.label} lies inside B({t.label}, rho={rho})")


def _depth(K: CurvatureField, t: CriticalPointRecord, margin: float) -> Tuple[np.ndarray, float]:
    """Correction M in tangent_frame(z) coordinates and its factor t on the negative eigenvalues."""
    frame = tangent_frame(t.y)
    w, v = np.linalg.eigh(K.hessian_in_frame(t.y, frame))
    neg = w < 0.0
    trace_neg = float(np.sum(w[neg]))
    factor = (t.laplacian + margin) / abs(trace_neg)
    M = v @ np.diag(np.where(neg, factor * w, 0.0)) @ v.T
    return M, factor


def c1_distance(K: CurvatureField, K_new: CurvatureField, centers: Sequence[np.ndarray], rho: float,
                rng: np.random.Generator, samples: int = C1_SAMPLES) -> float:
    """Sampled sup of |K_new - K| + |grad K_new - grad K| over the perturbation balls."""
    worst = 0.0
    for z in centers:
        frame = tangent_frame(z)
        dirs = normalize(rng.standard_normal((samples, K.n)))
        radii = rho * rng.random(samples) ** (1.0 / K.n)
        pts = np.cos(radii)[:, None] * z + np.sin(radii)[:, None] * (dirs @ frame.T)
        dv = np.abs(K_new.value(pts) - K.value(pts))
        dg = np.linalg.norm(K_new.gradient(pts) - K.gradient(pts), axis=-1)
        worst = max(worst, float(np.max(dv + dg)))
    return worst


def _match(old: Sequence[CriticalPointRecord], new: Sequence[CriticalPointRecord]):
    pairs = {}
    for r in old:
        dist = [np.arccos(np.clip(r.y @ s.y, -1.0, 1.0)) for s in new]
        j = int(np.argmin(dist)) if dist else -1
        if j >= 0 and dist[j] < MATCH_TOL:
            pairs[r.label] = new[j]
    return pairs


def perturb_K(
    K: CurvatureField,
    targets: Sequence[CriticalPointRecord],
    rho: float,
    c1_tol: float,
    records: Optional[List[CriticalPointRecord]] = None,
    m: Optional[int] = None,
    margin: float = LAPLACIAN_MARGIN,
    seed: int = 0,
    homology: bool = False,
    shooting: ShootingConfig = ShootingConfig(),
) -> Tuple[CurvatureField, PerturbationReport]:
    """
    Make -Delta K positive at the targets with a C^1-small correction.

    Tries plateau fractions in PLATEAU_FRACTIONS until the critical set, the indices and
    the C^1 tolerance all check out.

    Raises:
        PreconditionError: invalid targets or rho
        PerturbationError: no attempt verified; `minimal_tolerance` is the smallest C^1
            distance reached
    """
    rng = np.random.default_rng(seed)
    if records is None:
        records = find_critical_points(K, seed=seed)
    l = max((i for i, r in enumerate(records) if r.group == UPPER), default=-1)
    if not targets:
        report = PerturbationReport(targets=[], depth_factors={}, plateau=0.0, rho=rho, c1_distance=0.0,
                                    c1_tol=c1_tol, same_critical_set=True, same_indices=True,
                                    target_minus_laplacian={})
        return K, report
    _validate_targets(K, records, targets, rho, m)

    corrections = [(t, *_depth(K, t, margin)) for t in targets]
    attempts: List[Dict] = []
    best = np.inf
    for plateau in PLATEAU_FRACTIONS:
        bump = PlateauBump(rho=rho, plateau=plateau)
        K_new = K
        for t, M, _ in corrections:
            K_new = K_new + bump_correction(K.n, t.y, M, bump, name=f"bump({t.label})")
        K_new = CurvatureField(n=K.n, name=f"{K.name} perturbed", ambient_value=K_new.ambient_value,
                               ambient_grad=K_new.ambient_grad, ambient_hess=K_new.ambient_hess,
                               analytic=K_new.analytic, meta={"base": K.name, "targets": [t.label for t in targets]})
        dist = c1_distance(K, K_new, [t.y for t in targets], rho, rng)
        best = min(best, dist)
        new_records = find_critical_points(K_new, seed=seed, l=l)
        matched = _match(records, new_records)
        same_set = len(new_records) == len(records) and len(matched) == len(records)
        same_idx = same_set and all(matched[r.label].index == r.index for r in records)
        attempt = {"plateau": plateau, "c1_distance": dist, "critical_points": len(new_records),
                   "same_critical_set": same_set, "same_indices": same_idx}
        attempts.append(attempt)
        logger.info(f"Perturbation attempt | plateau={plateau} | c1={dist:.4g} | "
                    f"found={len(new_records)} | same_set={same_set} | same_indices={same_idx}")
        if not (same_set and same_idx and dist <= c1_tol):
            continue

        target_ml = {t.label: float(-K_new.laplacian(t.y)) for t in targets}
        report = PerturbationReport(
            targets=[t.label for t in targets],
            depth_factors={t.label: f for t, _, f in corrections},
            plateau=plateau,
            rho=rho,
            c1_distance=dist,
            c1_tol=c1_tol,
            same_critical_set=same_set,
            same_indices=same_idx,
            target_minus_laplacian=target_ml,
            attempts=attempts,
        )
        report.items = _items(K_new, records, matched, targets, m, homology, shooting, l)
        return K_new, report

    raise PerturbationError(
        f"no verified perturbation within c1_tol={c1_tol}; smallest C^1 distance {best:.4g}",
        minimal_tolerance=float(best),
    )


def index_bound_item(reduced: Dict[str, Dict], m: Optional[int]) -> Dict:
    """Reduced Morse indices at the targets must stay strictly below m - 2."""
    if m is None:
        return {"status": "UNKNOWN", "reduced_indices": reduced, "evidence": "m not supplied"}
    ok = all(r["total"] < m - 2 for r in reduced.values())
    return {"status": "PASS" if ok else "FAIL", "reduced_indices": reduced, "below": m - 2}


def _items(K_new, records, matched, targets, m, homology, shooting, l) -> Dict[str, Dict]:
    target_labels = {t.label for t in targets}
    new = {r.label: matched[r.label] for r in records}
    i_vals = {lab: new[lab].minus_laplacian for lab in target_labels}
    ii_vals = {r.label: new[r.label].minus_laplacian for r in records
               if r.group == UPPER and r.label not in target_labels}
    iii_vals = {r.label: new[r.label].minus_laplacian for r in records if r.group != UPPER}
    items = {
        "i": {"status": "PASS" if all(v > 0 for v in i_vals.values()) else "FAIL", "minus_laplacian": i_vals},
        "ii": {"status": "PASS" if all(v > 0 for v in ii_vals.values()) else "FAIL", "minus_laplacian": ii_vals},
        "iii": {"status": "PASS" if all(v < 0 for v in iii_vals.values()) else "FAIL",
                "minus_laplacian": iii_vals},
    }
    reduced = {t.label: reduced_morse_index(K_new, t.y, new[t.label]).as_dict() for t in targets}
    items["iv"] = index_bound_item(reduced, m)
    if homology and m is not None:
        new_list = [new[r.label] for r in records]
        hom = homology_of_X(morse_complex(K_new, new_list, shooting), l)
        ok = hom.reduced_ranks.get(m, 0) != 0
        items["v"] = {"status": "PASS" if ok else "FAIL", "m": m,
                      "reduced_ranks": {str(k): v for k, v in hom.reduced_ranks.items()}}
    else:
        items["v"] = {"status": "UNKNOWN", "evidence": "homology of the new X not recomputed"}
    return items


# ============================================================================
# REDUCED MORSE INDEX
# ============================================================================
@dataclass(frozen=True)
class ReducedIndex:
    z_contribution: int
    lambda_contribution: int
    total: int
    index: int
    laplacian: float
    eigenvalues: np.ndarray

    def as_dict(self) -> Dict:
        return {
            "z_contribution": self.z_contribution,
            "lambda_contribution": self.lambda_contribution,
            "total": self.total,
            "index": self.index,
            "laplacian": self.laplacian,
            "eigenvalues": self.eigenvalues.tolist(),
        }


def reduced_morse_index(K_new: CurvatureField, z0, crit: Optional[CriticalPointRecord] = None,
                        grad_tol: float = 1e-8) -> ReducedIndex:
    """
    Morse index of J along single bubbles concentrated near z0, split into its parts.

    z-part: negative eigenvalues of -Hess K(z0), i.e. n - index(K, z0).
    lambda-part: in t = log lam the energy behaves like const - c Delta K(z0) e^(-2t), so
    the scale direction is unstable exactly when Delta K(z0) > 0.

    Raises:
        PreconditionError: z0 is not a critical point
        DegenerateCriticalPointError: Delta K(z0) vanishes
    """
    z0 = normalize(z0)
    frame = tangent_frame(z0)
    gnorm = float(np.linalg.norm(frame.T @ K_new.gradient(z0)))
    if gnorm > grad_tol:
        raise PreconditionError(f"z0 is not a critical point: |grad K| = {gnorm:.3e}")
    eig = np.linalg.eigvalsh(K_new.hessian_in_frame(z0, frame))
    lap = float(K_new.laplacian(z0))
    if abs(lap) < LAPLACIAN_TOL:
        raise DegenerateCriticalPointError(f"Delta K(z0) = {lap:.3e} is indeterminate", point=z0)
    index = int(np.sum(eig < 0.0))
    if crit is not None and crit.index != index:
        logger.warning(f"Index mismatch at {crit.label}: record={crit.index} | recomputed={index}")
    z_part = int(np.sum(-eig < 0.0))
    lam_part = 1 if lap > 0.0 else 0
    return ReducedIndex(z_contribution=z_part, lambda_contribution=lam_part, total=z_part + lam_part,
                        index=index, laplacian=lap, eigenvalues=eig)
