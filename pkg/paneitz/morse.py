"""
paneitz/morse.py

Critical points of K and the Morse complex of its gradient flow over Z/2.
- Multistart Riemannian Newton on grad K = 0, deduplicated by geodesic distance
- Index, Laplacian and upper/lower group of every critical point
- Boundary counts between index-adjacent points by orbit shooting:
    * zero-dimensional spheres: exact (two shots)
    * circles: landing-switch bisection
    * higher spheres: near-miss clustering, UNKNOWN when two resolutions disagree
- Homology of the subcomplex X spanned by the upper group and everything its
  descending flow reaches
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.special import ndtri
from scipy.stats import qmc

from paneitz.curvature import CurvatureField
from paneitz.errors import ConsistencyError, DomainError, PreconditionError
from paneitz.integrators import rk4_batch
from paneitz.sphere_core import exp_map, normalize, tangent_frame

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 200
NEWTON_MAX_STEP = 0.5
GRAD_TOL = 1e-8
DEDUP_TOL = 1e-3
DEGENERACY_MARGIN = 1e-6
DEFAULT_SEEDS = 64

UPPER = "upper"
LOWER = "lower"

EXACT = "EXACT"
BISECTED = "BISECTED"
CLUSTERED = "CLUSTERED"
UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class ShootingConfig:
    """Negative-gradient orbit shooting, in time rescaled so the stiffest Hessian eigenvalue is 1."""
    radius: float = 1e-3
    step: float = 0.05
    decay_time: float = 30.0
    max_steps: int = 20000
    chunk: int = 20
    land_tol: float = 0.05
    circle_samples: int = 64
    bisect_iters: int = 40
    sphere_samples: int = 256
    near_tol: float = 0.05
    seed: int = 0


# ============================================================================
# CRITICAL POINTS
# ============================================================================
@dataclass(frozen=True, eq=False)
class CriticalPointRecord:
    y: np.ndarray
    index: int
    grad_norm: float
    laplacian: float
    value: float
    eigenvalues: np.ndarray
    degenerate: bool = False
    group: Optional[str] = None
    label: str = ""

    @property
    def minus_laplacian(self) -> float:
        return -self.laplacian

    def as_dict(self) -> Dict:
        return {
            "label": self.label,
            "y": self.y.tolist(),
            "index": self.index,
            "value": self.value,
            "grad_norm": self.grad_norm,
            "laplacian": self.laplacian,
            "min_abs_eigenvalue": float(np.min(np.abs(self.eigenvalues))),
            "degenerate": self.degenerate,
            "group": self.group,
        }


def critical_record(K: CurvatureField, y, label: str = "") -> CriticalPointRecord:
    """Index, Laplacian and nondegeneracy data of K at a (near-)critical point y."""
    y = normalize(y)
    frame = tangent_frame(y)
    g = frame.T @ K.gradient(y)
    eig = np.linalg.eigvalsh(K.hessian_in_frame(y, frame))
    return CriticalPointRecord(
        y=y,
        index=int(np.sum(eig < 0.0)),
        grad_norm=float(np.linalg.norm(g)),
        laplacian=float(K.laplacian(y)),
        value=float(K.value(y)),
        eigenvalues=eig,
        degenerate=bool(np.min(np.abs(eig)) < DEGENERACY_MARGIN),
        label=label,
    )


def _newton(K: CurvatureField, x0: np.ndarray, max_iter: int) -> Tuple[np.ndarray, float]:
    x = normalize(x0)
    gnorm = np.inf
    for _ in range(max_iter):
        frame = tangent_frame(x)
        g = frame.T @ K.gradient(x)
        gnorm = float(np.linalg.norm(g))
        if gnorm < NEWTON_TOL:
            break
        H = K.hessian_in_frame(x, frame)
        step = -np.linalg.lstsq(H, g, rcond=None)[0]
        size = float(np.linalg.norm(step))
        if size > NEWTON_MAX_STEP:
            step *= NEWTON_MAX_STEP / size
        x = exp_map(x, frame @ step)
    return x, gnorm


def find_critical_points(
    K: CurvatureField,
    seeds: int = DEFAULT_SEEDS,
    seed: int = 0,
    dedup_tol: float = DEDUP_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    l: Optional[int] = None,
) -> List[CriticalPointRecord]:
    """
    Locate the critical points of K by Newton from the coordinate poles and random seeds.

    Returns records sorted by K value (descending), labelled y0, y1, ... and
    assigned to the upper/lower group (natural l unless overridden).
    """
    dim = K.n + 1
    rng = np.random.default_rng(seed)
    starts = [s * e for e in np.eye(dim) for s in (1.0, -1.0)]
    starts += list(normalize(rng.standard_normal((seeds, dim))))

    found: List[Tuple[np.ndarray, float]] = []
    for x0 in starts:
        x, gnorm = _newton(K, x0, max_iter)
        if gnorm < GRAD_TOL:
            found.append((x, gnorm))
    found.sort(key=lambda item: item[1])

    kept: List[np.ndarray] = []
    for x, _ in found:
        if all(np.arccos(np.clip(x @ k, -1.0, 1.0)) > dedup_tol for k in kept):
            kept.append(x)

    records = [critical_record(K, y) for y in kept]
    records.sort(key=lambda r: (-round(r.value, 12), tuple(np.round(-r.y, 9))))
    records = [replace(r, label=f"y{i}") for i, r in enumerate(records)]
    degenerate = sum(r.degenerate for r in records)
    logger.info(f"Critical points | K={K.name} | found={len(records)} | degenerate={degenerate} "
                f"| starts={len(starts)}")
    return assign_groups(records, l)


def natural_l(records: Sequence[CriticalPointRecord]) -> int:
    """Largest i with -Delta K(y_i) > 0 in K-descending order; -1 if there is none."""
    l = -1
    for i, r in enumerate(records):
        if r.minus_laplacian > 0.0:
            l = i
    return l


def assign_groups(records: Sequence[CriticalPointRecord], l: Optional[int] = None
                  ) -> List[CriticalPointRecord]:
    """Group y_0..y_l as upper and the rest as lower."""
    if l is None:
        l = natural_l(records)
    if l >= len(records):
        raise DomainError(f"upper group size l={l} exceeds the {len(records)} critical points")
    return [replace(r, group=UPPER if i <= l else LOWER) for i, r in enumerate(records)]


def upper_group(records: Sequence[CriticalPointRecord]) -> List[CriticalPointRecord]:
    return [r for r in records if r.group == UPPER]


# ============================================================================
# ORBIT SHOOTING
# ============================================================================
class _Shooter:
    """Batched gradient-flow integration of K with distance tracking to the critical set."""

    def __init__(self, K: CurvatureField, records: Sequence[CriticalPointRecord], cfg: ShootingConfig):
        self.K = K
        self.cfg = cfg
        self.points = np.stack([r.y for r in records])
        eig = np.concatenate([np.abs(r.eigenvalues) for r in records])
        self.scale = float(eig.max())
        slowest = float(eig.min()) / self.scale
        self.steps = min(cfg.max_steps, int(np.ceil(cfg.decay_time / (slowest * cfg.step))))

    def run(self, starts: np.ndarray, sign: float) -> Tuple[np.ndarray, np.ndarray]:
        """
        Flow `starts` along sign * grad K.

        Returns:
            (landing index per start or -1, minimum distance to every critical point)
        """
        K, cfg = self.K, self.cfg

        def rhs(x):
            return sign * K.gradient(x) / self.scale

        x = normalize(np.atleast_2d(starts))
        closest = np.full((x.shape[0], self.points.shape[0]), np.inf)
        done = 0
        while done < self.steps:
            block = min(cfg.chunk, self.steps - done)
            x = rk4_batch(rhs, x, cfg.step, block, project=normalize)
            done += block
            closest = np.minimum(closest, self._distances(x))
        final = self._distances(x)
        nearest = np.argmin(final, axis=1)
        landed = np.where(final[np.arange(len(x)), nearest] < cfg.land_tol, nearest, -1)
        return landed, closest

    def _distances(self, x: np.ndarray) -> np.ndarray:
        return np.arccos(np.clip(x @ self.points.T, -1.0, 1.0))


@dataclass
class PairCount:
    count: int
    status: str
    method: str
    samples: int = 0

    def as_dict(self) -> Dict:
        return {"count": self.count, "status": self.status, "method": self.method, "samples": self.samples}


# ============================================================================
# MORSE COMPLEX
# ============================================================================
@dataclass
class MorseComplex:
    n: int
    generators: List[CriticalPointRecord]
    boundary: Dict[int, np.ndarray]
    pairs: Dict[Tuple[int, int], PairCount] = field(default_factory=dict)
    reach: Set[Tuple[int, int]] = field(default_factory=set)
    meta: Dict = field(default_factory=dict)

    def graded(self, k: int) -> List[int]:
        return [i for i, r in enumerate(self.generators) if r.index == k]

    def euler_characteristic(self) -> int:
        return int(sum((-1) ** r.index for r in self.generators))

    def unknown_pairs(self) -> List[Tuple[int, int]]:
        return [p for p, c in self.pairs.items() if c.status == UNKNOWN]

    def boundary_squared_zero(self) -> bool:
        for k in range(2, self.n + 1):
            d_k, d_km1 = self.boundary.get(k), self.boundary.get(k - 1)
            if d_k is None or d_km1 is None or d_k.size == 0 or d_km1.size == 0:
                continue
            if np.any((d_km1.astype(int) @ d_k.astype(int)) % 2):
                return False
        return True

    def check_consistency(self) -> None:
        """
        Raises:
            ConsistencyError: the boundary does not square to zero and every pair count is settled
        """
        if self.boundary_squared_zero():
            return
        if self.unknown_pairs():
            logger.warning(f"Boundary does not square to zero | unknown_pairs={len(self.unknown_pairs())}")
            return
        raise ConsistencyError("Morse boundary does not square to zero over Z/2")

    def restricted_boundary(self, members: Sequence[int], k: int) -> np.ndarray:
        """Boundary matrix from degree k to k-1 restricted to `members` (rows: k-1, columns: k)."""
        rows = [i for i in self.graded(k - 1) if i in members]
        cols = [i for i in self.graded(k) if i in members]
        full_rows, full_cols = self.graded(k - 1), self.graded(k)
        d = self.boundary.get(k)
        if d is None or not rows or not cols:
            return np.zeros((len(rows), len(cols)), dtype=np.uint8)
        r_idx = [full_rows.index(i) for i in rows]
        c_idx = [full_cols.index(i) for i in cols]
        return d[np.ix_(r_idx, c_idx)]

    def as_dict(self) -> Dict:
        return {
            "n": self.n,
            "generators": [r.as_dict() for r in self.generators],
            "boundary": {str(k): v.tolist() for k, v in sorted(self.boundary.items())},
            "pairs": [{"source": self.generators[i].label, "target": self.generators[j].label, **c.as_dict()}
                      for (i, j), c in sorted(self.pairs.items())],
            "euler_characteristic": self.euler_characteristic(),
            "boundary_squared_zero": self.boundary_squared_zero(),
            "unknown_pairs": len(self.unknown_pairs()),
        }


def _eigen_split(K: CurvatureField, r: CriticalPointRecord) -> Tuple[np.ndarray, np.ndarray]:
    """Ambient eigenvectors of the Hessian with negative and with positive eigenvalues."""
    frame = tangent_frame(r.y)
    w, v = np.linalg.eigh(K.hessian_in_frame(r.y, frame))
    vecs = frame @ v
    return vecs[:, w < 0.0], vecs[:, w > 0.0]


def _sphere_points(center: np.ndarray, basis: np.ndarray, radius: float, dirs: np.ndarray) -> np.ndarray:
    return np.stack([exp_map(center, radius * (basis @ d)) for d in dirs])


def _count_zero_sphere(shooter: _Shooter, source: CriticalPointRecord, basis: np.ndarray,
                       sign: float, targets: Sequence[int]) -> Tuple[Dict[int, int], bool]:
    dirs = np.array([[1.0], [-1.0]])
    landed, _ = shooter.run(_sphere_points(source.y, basis, shooter.cfg.radius, dirs), sign)
    counts = {t: int(np.sum(landed == t)) for t in targets}
    return counts, bool(np.all(landed >= 0))


def _count_circle(shooter: _Shooter, source: CriticalPointRecord, basis: np.ndarray,
                  sign: float, targets: Sequence[int]) -> Tuple[Dict[int, int], bool]:
    cfg = shooter.cfg

    def shoot(phis):
        dirs = np.stack([np.cos(phis), np.sin(phis)], axis=1)
        return shooter.run(_sphere_points(source.y, basis, cfg.radius, dirs), sign)

    phis = 2.0 * np.pi * np.arange(cfg.circle_samples) / cfg.circle_samples
    landed, _ = shoot(phis)
    counts = {t: 0 for t in targets}
    clean = bool(np.all(landed >= 0))
    for i in range(len(phis)):
        j = (i + 1) % len(phis)
        if landed[i] == landed[j]:
            continue
        lo, hi = phis[i], phis[i] + 2.0 * np.pi / cfg.circle_samples
        lab_lo = landed[i]
        for _ in range(cfg.bisect_iters):
            mid = 0.5 * (lo + hi)
            lab, _ = shoot(np.array([mid]))
            if lab[0] == lab_lo:
                lo = mid
            else:
                hi = mid
        _, closest = shoot(np.array([0.5 * (lo + hi)]))
        cand = [t for t in targets if closest[0, t] < cfg.near_tol]
        if len(cand) == 1:
            counts[cand[0]] += 1
        elif len(cand) > 1:
            clean = False
    return counts, clean


def _cluster_count(points: np.ndarray, threshold: float) -> int:
    if len(points) == 0:
        return 0
    if len(points) == 1:
        return 1
    return int(fcluster(linkage(points, method="single"), t=threshold, criterion="distance").max())


def _count_sphere(shooter: _Shooter, source: CriticalPointRecord, basis: np.ndarray,
                  sign: float, targets: Sequence[int]) -> Tuple[Dict[int, int], bool]:
    cfg = shooter.cfg
    dim = basis.shape[1]
    estimates = []
    for samples in (cfg.sphere_samples, 2 * cfg.sphere_samples):
        sobol = qmc.Sobol(d=dim, scramble=True, seed=cfg.seed)
        dirs = normalize(ndtri(np.clip(sobol.random(samples), 1e-12, 1 - 1e-12)))
        _, closest = shooter.run(_sphere_points(source.y, basis, cfg.radius, dirs), sign)
        threshold = 4.0 * samples ** (-1.0 / (dim - 1))
        estimates.append({t: _cluster_count(dirs[closest[:, t] < cfg.near_tol], threshold) for t in targets})
    return estimates[1], estimates[0] == estimates[1]


def pair_samples(method: str, cfg: ShootingConfig) -> int:
    """Directions behind the reported count of one descending sphere."""
    if method == "zero_sphere":
        return 2
    if method == "circle_bisection":
        return cfg.circle_samples
    return 2 * cfg.sphere_samples


def morse_complex(K: CurvatureField, records: Sequence[CriticalPointRecord],
                  cfg: ShootingConfig = ShootingConfig()) -> MorseComplex:
    """
    Z/2 Morse complex of the negative gradient flow of K on its critical set.

    For each index-adjacent pair the shooting runs from whichever side carries the
    lower-dimensional sphere: forward from the upper point on its unstable sphere,
    or backward from the lower point on its stable sphere.

    Raises:
        PreconditionError: a critical point is degenerate
        ConsistencyError: the boundary does not square to zero with no UNKNOWN pair
    """
    gens = list(records)
    if not gens or any(r.degenerate for r in gens):
        raise PreconditionError("Morse complex needs nondegenerate critical points (A0)")
    n = K.n
    shooter = _Shooter(K, gens, cfg)
    splits = [_eigen_split(K, r) for r in gens]
    boundary: Dict[int, np.ndarray] = {}
    pairs: Dict[Tuple[int, int], PairCount] = {}

    for k in range(1, n + 1):
        upper_pts = [i for i, r in enumerate(gens) if r.index == k]
        lower_pts = [i for i, r in enumerate(gens) if r.index == k - 1]
        d = np.zeros((len(lower_pts), len(upper_pts)), dtype=np.uint8)
        if upper_pts and lower_pts:
            forward = (k - 1) <= (n - k)
            sources, others = (upper_pts, lower_pts) if forward else (lower_pts, upper_pts)
            for s in sources:
                basis = splits[s][0] if forward else splits[s][1]
                sign = -1.0 if forward else 1.0
                dim = basis.shape[1]
                if dim == 1:
                    counts, clean = _count_zero_sphere(shooter, gens[s], basis, sign, others)
                    method = "zero_sphere"
                elif dim == 2:
                    counts, clean = _count_circle(shooter, gens[s], basis, sign, others)
                    method = "circle_bisection"
                else:
                    counts, clean = _count_sphere(shooter, gens[s], basis, sign, others)
                    method = "sphere_clustering"
                for t, c in counts.items():
                    src, tgt = (s, t) if forward else (t, s)
                    if not clean:
                        status = UNKNOWN
                    else:
                        status = {"zero_sphere": EXACT, "circle_bisection": BISECTED}.get(method, CLUSTERED)
                    pairs[(src, tgt)] = PairCount(count=c, status=status, method=method,
                                                  samples=pair_samples(method, cfg))
                    d[lower_pts.index(tgt), upper_pts.index(src)] = c % 2
        boundary[k] = d

    reach = _reachability(K, gens, splits, shooter, pairs)
    complex_ = MorseComplex(n=n, generators=gens, boundary=boundary, pairs=pairs, reach=reach,
                            meta={"shooting": cfg.__dict__.copy(), "time_scale": shooter.scale,
                                  "steps": shooter.steps})
    complex_.check_consistency()
    logger.info(f"Morse complex | generators={len(gens)} | chi={complex_.euler_characteristic()} "
                f"| unknown_pairs={len(complex_.unknown_pairs())}")
    return complex_


def _reachability(K, gens, splits, shooter: _Shooter, pairs) -> Set[Tuple[int, int]]:
    """(i, j) when the descending flow from y_i reaches y_j; transitively closed."""
    edges: Set[Tuple[int, int]] = {(s, t) for (s, t), c in pairs.items() if c.count > 0}
    radius = shooter.cfg.radius
    for i, r in enumerate(gens):
        neg, pos = splits[i]
        for basis, sign in ((neg, -1.0), (pos, 1.0)):
            if basis.shape[1] == 0:
                continue
            starts = np.concatenate([
                np.stack([exp_map(r.y, radius * v) for v in basis.T]),
                np.stack([exp_map(r.y, -radius * v) for v in basis.T]),
            ])
            landed, _ = shooter.run(starts, sign)
            for t in landed[landed >= 0]:
                if t != i:
                    edges.add((i, int(t)) if sign < 0 else (int(t), i))
    closure = set(edges)
    changed = True
    while changed:
        changed = False
        for (a, b) in list(closure):
            for (c, d) in list(closure):
                if b == c and (a, d) not in closure:
                    closure.add((a, d))
                    changed = True
    return closure


# ============================================================================
# HOMOLOGY
# ============================================================================
def gf2_rank(matrix: np.ndarray) -> int:
    """Rank over Z/2 by Gaussian elimination."""
    m = (np.asarray(matrix, dtype=np.uint8) % 2).copy()
    rows, cols = m.shape
    rank = 0
    for c in range(cols):
        pivot = next((r for r in range(rank, rows) if m[r, c]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(rows):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        rank += 1
        if rank == rows:
            break
    return rank


@dataclass
class XHomology:
    members: List[int]
    reduced_ranks: Dict[int, int]
    m: Optional[int]
    closure_added: List[int]
    closure_flagged: bool

    def as_dict(self, gens: Sequence[CriticalPointRecord]) -> Dict:
        return {
            "members": [gens[i].label for i in self.members],
            "reduced_ranks": {str(k): v for k, v in sorted(self.reduced_ranks.items())},
            "m": self.m,
            "closure_added": [gens[i].label for i in self.closure_added],
            "closure_flagged": self.closure_flagged,
        }


def subcomplex_homology(complex_: MorseComplex, members: Sequence[int]) -> Dict[int, int]:
    """Reduced Z/2 Betti numbers of the subcomplex spanned by `members`."""
    n = complex_.n
    ranks = {k: gf2_rank(complex_.restricted_boundary(members, k)) for k in range(1, n + 1)}
    out = {}
    for k in range(n + 1):
        dim_k = sum(1 for i in complex_.graded(k) if i in members)
        out[k] = dim_k - ranks.get(k, 0) - ranks.get(k + 1, 0)
    if members:
        out[0] -= 1
    return out


def homology_of_X(complex_: MorseComplex, l: Optional[int] = None) -> XHomology:
    """
    Reduced homology over Z/2 of X, modelled by the upper group y_0..y_l and every
    generator their descending flow reaches.

    `m` is the first degree with nonzero reduced rank, None when all vanish.
    """
    gens = complex_.generators
    if l is None:
        upper = [i for i, r in enumerate(gens) if r.group == UPPER]
    else:
        upper = list(range(l + 1))
    members = set(upper)
    for (a, b) in complex_.reach:
        if a in upper:
            members.add(b)
    # boundary closure; flagged when reachability missed a boundary face
    flagged = False
    changed = True
    while changed:
        changed = False
        for k in range(1, complex_.n + 1):
            d = complex_.boundary[k]
            rows, cols = complex_.graded(k - 1), complex_.graded(k)
            for ci, c in enumerate(cols):
                if c not in members:
                    continue
                for ri, r in enumerate(rows):
                    if d[ri, ci] and r not in members:
                        members.add(r)
                        changed = flagged = True
    members_list = sorted(members)
    ranks = subcomplex_homology(complex_, members_list)
    m = next((k for k in range(complex_.n + 1) if ranks[k] != 0), None)
    added = [i for i in members_list if i not in upper]
    logger.info(f"Homology of X | members={len(members_list)} | m={m} | ranks={ranks}")
    return XHomology(members=members_list, reduced_ranks=ranks, m=m,
                     closure_added=added, closure_flagged=flagged)


def flow_landings(K: CurvatureField, records: Sequence[CriticalPointRecord], starts: np.ndarray,
                  ascending: bool = True, cfg: ShootingConfig = ShootingConfig()) -> np.ndarray:
    """Index into `records` of the critical point each start flows to (-1 when unsettled)."""
    landed, _ = _Shooter(K, records, cfg).run(starts, 1.0 if ascending else -1.0)
    return landed
