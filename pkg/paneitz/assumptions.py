"""
paneitz/assumptions.py

Checks of the topological and sign assumptions on K, each landing as PASS / FAIL / UNKNOWN
with its evidence.
- A0: K positive, all critical points nondegenerate, strict gap K(y_l) > K(y_{l+1})
- A1: -Delta K > 0 on the upper group, < 0 on the lower group
- A1': -Delta K < 0 on the lower group; upper points with -Delta K <= 0 have index in [n-m+3, n-2]
- A2: X has a nontrivial reduced homology group; m is its first degree
- A3: necessary level conditions on X, and a level check of a user-supplied contraction
- Pinching K(y_0) / c_bar <= 1 + c_0
- Energy levels of the single-bubble argument and the two applicability summaries
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from paneitz.bubbles import bubble_constants
from paneitz.curvature import CurvatureField
from paneitz.errors import PaneitzError
from paneitz.morse import (
    UPPER,
    CriticalPointRecord,
    MorseComplex,
    ShootingConfig,
    XHomology,
    find_critical_points,
    flow_landings,
    homology_of_X,
    morse_complex,
)
from paneitz.sphere_core import normalize

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
PASS = "PASS"
FAIL = "FAIL"
UNKNOWN = "UNKNOWN"

POSITIVITY_SAMPLES = 4096
X_SAMPLES = 512


@dataclass
class AssumptionStatus:
    status: str
    evidence: str
    numbers: Dict = field(default_factory=dict)

    def as_dict(self) -> Dict:
        return {"status": self.status, "evidence": self.evidence, "numbers": self.numbers}


@dataclass
class AssumptionReport:
    A0: AssumptionStatus
    A1: AssumptionStatus
    A1prime: AssumptionStatus
    A2: AssumptionStatus
    A3_necessary: AssumptionStatus
    A3_deformable: AssumptionStatus
    pinching: AssumptionStatus
    levels: Dict = field(default_factory=dict)
    m: Optional[int] = None
    l: int = -1

    def single_bubble_criteria(self) -> AssumptionStatus:
        """A0, A1, A2, A3 and pinching together."""
        return _combine("single-bubble existence criteria",
                        [self.A0, self.A1, self.A2, self.A3_necessary, self.A3_deformable, self.pinching])

    def perturbative_criteria(self, n: int) -> AssumptionStatus:
        """n >= 6 with A0, A1', A2, A3 and pinching."""
        dim = AssumptionStatus(PASS if n >= 6 else FAIL, f"n={n}")
        return _combine("perturbative criteria",
                        [dim, self.A0, self.A1prime, self.A2, self.A3_necessary, self.A3_deformable,
                         self.pinching])

    def as_dict(self, n: int) -> Dict:
        return {
            "A0": self.A0.as_dict(),
            "A1": self.A1.as_dict(),
            "A1prime": self.A1prime.as_dict(),
            "A2": self.A2.as_dict(),
            "A3_necessary": self.A3_necessary.as_dict(),
            "A3_deformable": self.A3_deformable.as_dict(),
            "pinching": self.pinching.as_dict(),
            "levels": self.levels,
            "m": self.m,
            "l": self.l,
            "single_bubble_criteria": self.single_bubble_criteria().as_dict(),
            "perturbative_criteria": self.perturbative_criteria(n).as_dict(),
        }


def _combine(name: str, parts: Sequence[AssumptionStatus]) -> AssumptionStatus:
    statuses = [p.status for p in parts]
    if FAIL in statuses:
        status = FAIL
    elif UNKNOWN in statuses:
        status = UNKNOWN
    else:
        status = PASS
    return AssumptionStatus(status, f"{name}: {', '.join(statuses)}")


# ============================================================================
# INDIVIDUAL CHECKS
# ============================================================================
def check_pinching(k_max: float, c_bar: float, c_0: float) -> AssumptionStatus:
    ratio = k_max / c_bar
    ok = ratio <= 1.0 + c_0
    return AssumptionStatus(PASS if ok else FAIL,
                            f"K(y_0)/c_bar = {ratio:.6g} {'<=' if ok else '>'} 1 + c_0 = {1.0 + c_0:.6g}",
                            {"ratio": ratio, "bound": 1.0 + c_0})


def check_A0(K: CurvatureField, records: Sequence[CriticalPointRecord], l: int,
             rng: np.random.Generator) -> AssumptionStatus:
    samples = normalize(rng.standard_normal((POSITIVITY_SAMPLES, K.n + 1)))
    k_min = float(np.min(K.value(samples)))
    degenerate = [r.label for r in records if r.degenerate]
    numbers = {"k_min_sampled": k_min, "critical_points": len(records), "degenerate": degenerate}
    if not records:
        return AssumptionStatus(FAIL, "no critical point located", numbers)
    if k_min <= 0.0:
        return AssumptionStatus(FAIL, f"K not positive: sampled minimum {k_min:.6g}", numbers)
    if degenerate:
        return AssumptionStatus(FAIL, f"{len(degenerate)} degenerate critical points", numbers)
    if 0 <= l < len(records) - 1 and not records[l].value > records[l + 1].value:
        numbers["gap"] = records[l].value - records[l + 1].value
        return AssumptionStatus(FAIL, f"no strict gap K(y_l) > K(y_l+1) at l={l}", numbers)
    return AssumptionStatus(PASS, f"{len(records)} nondegenerate critical points, K > 0", numbers)


def check_A1(records: Sequence[CriticalPointRecord]) -> AssumptionStatus:
    bad_upper = [r.label for r in records if r.group == UPPER and not r.minus_laplacian > 0.0]
    bad_lower = [r.label for r in records if r.group != UPPER and not r.minus_laplacian < 0.0]
    numbers = {"minus_laplacian": {r.label: r.minus_laplacian for r in records},
               "upper_violations": bad_upper, "lower_violations": bad_lower}
    if not any(r.group == UPPER for r in records):
        return AssumptionStatus(FAIL, "upper group is empty", numbers)
    if bad_upper or bad_lower:
        return AssumptionStatus(FAIL, f"sign violations upper={bad_upper} lower={bad_lower}", numbers)
    return AssumptionStatus(PASS, "-Delta K > 0 on upper group, < 0 on lower group", numbers)


def check_A1prime(records: Sequence[CriticalPointRecord], n: int, m: Optional[int]) -> AssumptionStatus:
    if n < 6:
        return AssumptionStatus(FAIL, "index window empty below n = 6", {"n": n})
    bad_lower = [r.label for r in records if r.group != UPPER and not r.minus_laplacian < 0.0]
    targets = [r for r in records if r.group == UPPER and r.minus_laplacian <= 0.0]
    numbers = {"lower_violations": bad_lower, "targets": {r.label: r.index for r in targets}, "m": m}
    if bad_lower:
        return AssumptionStatus(FAIL, f"lower group points with -Delta K >= 0: {bad_lower}", numbers)
    if targets and m is None:
        return AssumptionStatus(UNKNOWN, "index window needs m from A2", numbers)
    if targets:
        lo, hi = n - m + 3, n - 2
        numbers["window"] = [lo, hi]
        outside = [r.label for r in targets if not lo <= r.index <= hi]
        if outside:
            return AssumptionStatus(FAIL, f"indices outside [{lo}, {hi}]: {outside}", numbers)
    return AssumptionStatus(PASS, f"{len(targets)} upper points with -Delta K <= 0, all in the window",
                            numbers)


def check_A2(hom: Optional[XHomology], complex_: Optional[MorseComplex]) -> AssumptionStatus:
    if hom is None or complex_ is None:
        return AssumptionStatus(UNKNOWN, "Morse complex unavailable")
    numbers = hom.as_dict(complex_.generators)
    numbers["unknown_pairs"] = len(complex_.unknown_pairs())
    if hom.m is None:
        return AssumptionStatus(FAIL, "all reduced homology of X vanishes", numbers)
    status = PASS if not complex_.unknown_pairs() else UNKNOWN
    return AssumptionStatus(status, f"first nontrivial reduced homology in degree m={hom.m}", numbers)


def energy_levels(records: Sequence[CriticalPointRecord], l: int, c_bar: float, n: int) -> Dict:
    """
    c_top = S_n^(4/n) K(y_l)^((4-n)/n), c_bar_level = S_n^(4/n) c_bar^((4-n)/n), and the
    critical points at infinity whose level falls in (c_top, c_bar_level].
    """
    S = bubble_constants(n).S_n
    if l < 0:
        return {"c_top": None, "c_bar_level": S ** (4 / n) * c_bar ** ((4 - n) / n), "between": []}
    c_top = S ** (4 / n) * records[l].value ** ((4 - n) / n)
    c_bar_level = S ** (4 / n) * c_bar ** ((4 - n) / n)
    between = []
    for r in records:
        if r.minus_laplacian > 0.0:
            level = S ** (4 / n) * r.value ** ((4 - n) / n)
            if c_top < level <= c_bar_level:
                between.append({"label": r.label, "level": level})
    return {"c_top": c_top, "c_bar_level": c_bar_level, "between": between}


def check_A3(K: CurvatureField, records: Sequence[CriticalPointRecord], l: int, c_bar: float,
             members: Optional[Sequence[int]], rng: np.random.Generator,
             contraction: Optional[Callable[[float], np.ndarray]] = None,
             shooting: ShootingConfig = ShootingConfig()):
    """
    Necessary part: c_bar < K(y_l) and K >= c_bar on sampled points of X, taken as
    uniform points whose ascending flow lands in the upper group. Deformability is
    only level-checked on a user-supplied contraction t -> points, t in [0, 1].
    """
    if l < 0:
        empty = AssumptionStatus(FAIL, "upper group is empty")
        return empty, AssumptionStatus(UNKNOWN, "no X to contract")
    k_l = records[l].value
    starts = normalize(rng.standard_normal((X_SAMPLES, K.n + 1)))
    landed = flow_landings(K, records, starts, ascending=True, cfg=shooting)
    upper_idx = {i for i, r in enumerate(records) if r.group == UPPER}
    in_x = np.array([t in upper_idx for t in landed])
    values = list(K.value(starts[in_x])) if in_x.any() else []
    if members is not None:
        values += [records[i].value for i in members]
    k_min_x = float(min(values)) if values else float("nan")
    numbers = {"K_y_l": k_l, "c_bar": c_bar, "k_min_sampled_X": k_min_x, "x_samples": int(in_x.sum())}
    ok = bool(c_bar < k_l and values and k_min_x >= c_bar)
    necessary = AssumptionStatus(PASS if ok else FAIL,
                                 f"c_bar < K(y_l): {c_bar < k_l}; min K on sampled X = {k_min_x:.6g}",
                                 numbers)
    if contraction is None:
        return necessary, AssumptionStatus(UNKNOWN, "no contraction supplied")
    ts = np.linspace(0.0, 1.0, 33)
    path_min = float(min(np.min(K.value(np.atleast_2d(contraction(t)))) for t in ts))
    deform = AssumptionStatus(PASS if path_min >= c_bar else FAIL,
                              f"min K along supplied contraction = {path_min:.6g}",
                              {"path_min": path_min, "samples": len(ts)})
    return necessary, deform


# ============================================================================
# FULL REPORT
# ============================================================================
def check_assumptions(
    K: CurvatureField,
    c_bar: float,
    c_0: float,
    records: Optional[List[CriticalPointRecord]] = None,
    complex_: Optional[MorseComplex] = None,
    l: Optional[int] = None,
    contraction: Optional[Callable[[float], np.ndarray]] = None,
    seed: int = 0,
    shooting: ShootingConfig = ShootingConfig(),
) -> AssumptionReport:
    """
    Run every assumption check. Nothing raises: failures and missing data land in the
    report as FAIL or UNKNOWN with their evidence.
    """
    rng = np.random.default_rng(seed)
    if records is None:
        records = find_critical_points(K, seed=seed, l=l)
    l_eff = max((i for i, r in enumerate(records) if r.group == UPPER), default=-1)
    a0 = check_A0(K, records, l_eff, rng)

    hom = None
    if a0.status == PASS:
        try:
            complex_ = complex_ or morse_complex(K, records, shooting)
            hom = homology_of_X(complex_, l_eff)
        except PaneitzError as e:
            logger.warning(f"Morse complex failed: {e}")
            complex_ = None
    a2 = check_A2(hom, complex_)
    m = hom.m if hom is not None else None

    a3, a3_deform = (check_A3(K, records, l_eff, c_bar, hom.members if hom else None, rng, contraction,
                              shooting)
                     if a0.status == PASS else
                     (AssumptionStatus(UNKNOWN, "A0 failed"), AssumptionStatus(UNKNOWN, "A0 failed")))
    k_max = records[0].value if records else float(np.max(K.value(np.eye(K.n + 1))))
    report = AssumptionReport(
        A0=a0,
        A1=check_A1(records),
        A1prime=check_A1prime(records, K.n, m),
        A2=a2,
        A3_necessary=a3,
        A3_deformable=a3_deform,
        pinching=check_pinching(k_max, c_bar, c_0),
        levels=energy_levels(records, l_eff, c_bar, K.n) if records else {},
        m=m,
        l=l_eff,
    )
    logger.info(f"Assumptions | A0={a0.status} | A1={report.A1.status} | A1'={report.A1prime.status} "
                f"| A2={a2.status} | A3={a3.status} | pinching={report.pinching.status}")
    return report
