"""
paneitz/cli.py

Batch experiment harness.

Subcommands:
    verify   constants, expansion of J, gradient expansion and normal-form suites
    flow     pseudogradient ensemble, outcome histogram and decrease check
    morse    critical points, Morse complex, homology of X and the assumption report
    perturb  make -Delta K positive at chosen critical points and verify the result
    solve    Newton solve of the axisymmetric equation from a bubble warm start

Exit codes: 0 success, 1 configuration or input error, 2 a criterion failed,
3 integration failure or solver non-convergence.

Reports are deterministic JSON/CSV files under --out; timestamps only appear in
manifests/manifest_<run_id>.json.
"""
import math
import logging
import argparse
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from paneitz import axisym
from paneitz.assumptions import FAIL, check_assumptions
from paneitz.bubbles import Bubble, Configuration, bubble_constants, closed_form_constants, radial_constants
from paneitz.common import (
    finalize_manifest,
    log_summary,
    new_manifest,
    record_artifact,
    record_error,
    setup_logging,
    write_csv,
    write_json_report,
)
from paneitz.config import ExperimentConfig, load_config
from paneitz.curvature import CurvatureField, parse_curvature
from paneitz.errors import (
    ConfigError,
    DomainError,
    IntegrationError,
    PaneitzError,
    PerturbationError,
    PreconditionError,
)
from paneitz.flow import FlowConfig, choose_mu, critical_points_at_infinity, decrease_check, run_ensemble
from paneitz.functional import (
    ROUNDING_FLOOR,
    J_value,
    calibrate_c3,
    expansion_J,
    expansion_grad,
    grad_J_pairings,
    normal_form_psi,
    slope_fit,
)
from paneitz.morse import UPPER, ShootingConfig, find_critical_points, homology_of_X, morse_complex
from paneitz.perturbation import perturb_K, reduced_morse_index
from paneitz.sphere_core import constants, north_pole

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CRITERION = 2
EXIT_SOLVER = 3

SLOPE_LAMBDAS = (10.0, 20.0, 40.0, 80.0, 160.0)
SLOPE_MIN = 2.2
LEADING_LAMBDA = 1000.0
LEADING_RTOL = 1e-4
GRAD_LAMBDA = 500.0
GRAD_RTOL = 0.05
NORMAL_FORM_ETA = 0.25
NORMAL_FORM_RTOL = 1e-10
FACTORIZATION_DEGREES = 21
DECREASE_TRAJECTORIES = 10

FLAG_DESTS = {
    "n": "n", "K": "K", "eta": "eta", "cbar": "cbar", "c0": "c0", "mu": "mu", "m1": "m1",
    "seed": "seed", "out": "out", "budget": "budget", "warm_lambda": "warm_lambda",
}


# ============================================================================
# SHARED PIECES
# ============================================================================
def _header(cfg: ExperimentConfig) -> Dict[str, Any]:
    """config_hash, dimension, K and the constants every report carries."""
    n = cfg.n
    bc = bubble_constants(n)
    cal = calibrate_c3(n, cfg.budget, cfg.n_jobs)
    return {
        "config_hash": cfg.config_hash(),
        "n": n,
        "K": cfg.K,
        "seed": cfg.seed,
        "constants": {
            "S_n": bc.S_n,
            "c_1": bc.c_1,
            "c_2": bc.c_2,
            "c3_estimate": cal.estimate,
            "c3_reference": cal.reference,
        },
    }


def _emit_json(manifest: Dict, path: Path, payload: Dict) -> None:
    write_json_report(path, payload)
    record_artifact(manifest, path)


def _emit_csv(manifest: Dict, path: Path, frame) -> None:
    write_csv(path, frame)
    record_artifact(manifest, path)


def _curvature(cfg: ExperimentConfig) -> CurvatureField:
    return parse_curvature(cfg.K, cfg.n)


def _shooting(cfg: ExperimentConfig) -> ShootingConfig:
    return ShootingConfig(sphere_samples=cfg.sphere_samples, seed=cfg.seed)


# ============================================================================
# VERIFY
# ============================================================================
def _constants_suite(n: int) -> Dict[str, Any]:
    c = constants(n)
    bc = bubble_constants(n)
    identity = all(axisym.factorization_identity(n, k) for k in range(FACTORIZATION_DEGREES))
    return {
        "c_n": c.c_n,
        "d_n": c.d_n,
        "beta_n": c.beta_n,
        "S_n": bc.S_n,
        "c_1": bc.c_1,
        "c_2": bc.c_2,
        "closed_form": closed_form_constants(n),
        "radial": radial_constants(n),
        "factorization_identity": identity,
    }


def _expansion_suite(K: CurvatureField, a: np.ndarray, budget: int):
    n = K.n
    rows = []
    for lam in SLOPE_LAMBDAS + (LEADING_LAMBDA,):
        conf = Configuration.single(a, lam)
        j_quad = J_value(conf, K, budget)
        j_exp = expansion_J(conf, K).total
        rows.append({"lambda": lam, "J_quad": j_quad, "J_expansion": j_exp, "abs_err": abs(j_quad - j_exp)})

    fit_rows = rows[: len(SLOPE_LAMBDAS)]
    floor = ROUNDING_FLOOR * max(abs(r["J_quad"]) for r in fit_rows)
    try:
        fit = slope_fit([r["lambda"] for r in fit_rows], [r["abs_err"] for r in fit_rows], floor)
        expansion = {"status": "FIT", "slope": fit.slope, "intercept": fit.intercept,
                     "lambdas": fit.lambdas, "deviations": fit.deviations, "dropped": fit.dropped,
                     "ok": fit.slope >= SLOPE_MIN}
    except DomainError as e:
        # every deviation sits on the rounding floor: the expansion is exact for this K
        expansion = {"status": "EXACT", "evidence": str(e), "floor": floor, "ok": True}

    top = rows[-1]
    leading = bubble_constants(n).S_n ** (4 / n) * float(K.value(a)) ** (-(n - 4) / n)
    rel = abs(top["J_quad"] - leading) / leading
    leading_check = {"lambda": LEADING_LAMBDA, "J_quad": top["J_quad"], "leading": leading,
                     "rel_err": rel, "ok": rel <= LEADING_RTOL}
    return rows, expansion, leading_check


def _gradient_suite(K: CurvatureField, a: np.ndarray, budget: int, n_jobs: int) -> Dict[str, Any]:
    n = K.n
    alpha = bubble_constants(n).S_n ** -0.5
    b = Bubble(a, GRAD_LAMBDA)
    cal = calibrate_c3(n, budget, n_jobs)
    g = grad_J_pairings(b, alpha, K, budget)
    pred = expansion_grad(b, alpha, K, calibration=cal)
    out = {
        "lambda": GRAD_LAMBDA,
        "g_lambda": g.g_lambda,
        "g_lambda_pred": pred.g_lambda_pred,
        "g_a_norm": float(np.linalg.norm(g.g_a)),
        "g_a_pred_norm": float(np.linalg.norm(pred.g_a_pred)),
        "c3": {"estimate": cal.estimate, "reference": cal.reference, "drift": cal.drift,
               "stderr": cal.stderr, "lambdas": cal.lambdas, "ratios": cal.ratios, "ok": cal.stable},
    }
    if pred.g_lambda_pred == 0.0:
        out.update({"status": "DEGENERATE", "evidence": "Delta K(a) = 0", "ok": True})
    else:
        ratio = g.g_lambda / pred.g_lambda_pred
        out.update({"status": "CHECKED", "ratio": ratio, "ok": abs(ratio - 1.0) <= GRAD_RTOL})
    return out


def _normal_form_suite(K: CurvatureField, a: np.ndarray) -> Dict[str, Any]:
    if not -float(K.laplacian(a)) > 0.0:
        return {"status": "NOT_APPLICABLE", "evidence": "-Delta K(a) <= 0", "ok": True}
    rows = []
    ok = True
    for lam in SLOPE_LAMBDAS:
        exp = expansion_J(Configuration.single(a, lam), K)
        psi = normal_form_psi(a, lam, K, a, NORMAL_FORM_ETA)
        # Psi differs from the expansion by eta times its Laplacian term
        expected = exp.leading * NORMAL_FORM_ETA * exp.laplacian_term
        rel = abs((psi - exp.total) - expected) / exp.total
        ok &= rel <= NORMAL_FORM_RTOL
        rows.append({"lambda": lam, "psi": psi, "J_expansion": exp.total, "rel_err": rel})
    return {"status": "CHECKED", "eta_nf": NORMAL_FORM_ETA, "rows": rows, "ok": bool(ok)}


def cmd_verify(cfg: ExperimentConfig, manifest: Dict) -> int:
    """Constants, expansion of J, gradient expansion and normal-form suites."""
    K = _curvature(cfg)
    out = cfg.out_dir
    a = north_pole(cfg.n)
    header = _header(cfg)

    consts = _constants_suite(cfg.n)
    _emit_json(manifest, out / "constants.json", {**header, "constants_suite": consts})

    rows, expansion, leading = _expansion_suite(K, a, cfg.budget)
    _emit_csv(manifest, out / "expansion.csv", pd.DataFrame(rows, columns=["lambda", "J_quad", "J_expansion",
                                                                            "abs_err"]))
    gradient = _gradient_suite(K, a, cfg.budget, cfg.n_jobs)
    normal = _normal_form_suite(K, a)

    criteria = {
        "factorization_identity": consts["factorization_identity"],
        "expansion_slope": expansion["ok"],
        "leading_term": leading["ok"],
        "gradient_lambda": gradient["ok"],
        "c3_drift": gradient["c3"]["ok"],
        "normal_form": normal["ok"],
    }
    failed = sorted(k for k, v in criteria.items() if not v)
    _emit_json(manifest, out / "slopes.json", {
        **header,
        "expansion": expansion,
        "leading_term": leading,
        "gradient": gradient,
        "normal_form": normal,
        "criteria": criteria,
        "failed": failed,
    })
    manifest["stats"].update({"criteria": len(criteria), "failed": len(failed)})
    log_summary("verify", {
        "n": cfg.n,
        "K": cfg.K,
        "slope": expansion.get("slope", expansion["status"]),
        "leading rel err": f"{leading['rel_err']:.3e}",
        "g_lambda ratio": gradient.get("ratio", gradient["status"]),
        "c3 drift": f"{gradient['c3']['drift']:.3e}",
        "failed": ", ".join(failed) or "none",
    })
    return EXIT_CRITERION if failed else EXIT_OK


# ============================================================================
# FLOW
# ============================================================================
def cmd_flow(cfg: ExperimentConfig, manifest: Dict) -> int:
    """Pseudogradient ensemble with outcome histogram and decrease check."""
    K = _curvature(cfg)
    out = cfg.out_dir
    crits = find_critical_points(K, seeds=cfg.seeds, seed=cfg.seed, l=cfg.l)
    mu = cfg.mu if cfg.mu is not None else choose_mu(K, crits)
    fc = FlowConfig(mu=mu, m1=cfg.m1, lambda_min=cfg.lambda_min, lambda_max=cfg.lambda_max, t_max=cfg.t_max)
    ens = run_ensemble(K, fc, crits, count=cfg.trajectories, seed=cfg.seed, lambda0=cfg.lambda0,
                       n_jobs=cfg.n_jobs)
    for e in ens.errors:
        manifest["errors"].append({"where": f"trajectory {e['task']}", **e})

    decrease = []
    for i, o in enumerate(ens.outcomes[:DECREASE_TRAJECTORIES]):
        try:
            decrease.append({"trajectory": i, **decrease_check(o, K, fc, crits, cfg.budget).as_dict()})
        except PaneitzError as e:
            logger.exception(f"Decrease check failed | trajectory={i}")
            record_error(manifest, f"decrease_check {i}", e)
    mins = [d["min_ratio"] for d in decrease if d["min_ratio"] is not None]
    decrease_failed = any(d["status"] == "FAIL" for d in decrease)

    for i, o in enumerate(ens.outcomes):
        _emit_csv(manifest, out / "trajectories" / f"trajectory_{i:04d}.csv", o.trajectory)

    try:
        at_infinity = critical_points_at_infinity(K, crits)
    except PaneitzError as e:
        at_infinity = {"error": str(e)}
    _emit_json(manifest, out / "flow_summary.json", {
        **_header(cfg),
        "mu": mu,
        "m1": cfg.m1,
        "critical_points": [r.as_dict() for r in crits],
        "critical_points_at_infinity": at_infinity,
        **ens.as_dict(),
        "decrease_check": {"min_ratio": min(mins) if mins else None, "failed": decrease_failed,
                           "trajectories": decrease},
    })
    manifest["stats"].update({"trajectories": len(ens.outcomes), **ens.histogram})
    log_summary("flow", {
        "n": cfg.n,
        "K": cfg.K,
        "mu": f"{mu:.4g}",
        **{k: v for k, v in ens.histogram.items()},
        "violations": len(ens.violations),
        "errors": len(ens.errors),
        "decrease min": min(mins) if mins else "n/a",
    })
    if any(e["error_type"] == IntegrationError.__name__ for e in ens.errors):
        return EXIT_SOLVER
    return EXIT_CRITERION if (ens.violations or decrease_failed) else EXIT_OK


# ============================================================================
# MORSE
# ============================================================================
def cmd_morse(cfg: ExperimentConfig, manifest: Dict) -> int:
    """Critical points, Morse complex, homology of X and assumption report."""
    K = _curvature(cfg)
    records = find_critical_points(K, seeds=cfg.seeds, seed=cfg.seed, l=cfg.l)
    report = check_assumptions(K, cfg.cbar, cfg.c0, records, l=cfg.l, seed=cfg.seed, shooting=_shooting(cfg))
    single = report.single_bubble_criteria()
    perturbative = report.perturbative_criteria(cfg.n)
    _emit_json(manifest, cfg.out_dir / "assumptions.json", {
        **_header(cfg),
        "cbar": cfg.cbar,
        "c0": cfg.c0,
        "critical_points": [r.as_dict() for r in records],
        "assumptions": report.as_dict(cfg.n),
    })
    manifest["stats"].update({"critical_points": len(records)})
    log_summary("morse", {
        "n": cfg.n,
        "K": cfg.K,
        "critical points": len(records),
        "l": report.l,
        "m": report.m,
        "pinching": report.pinching.status,
        "single-bubble": single.status,
        "perturbative": perturbative.status,
    })
    return EXIT_CRITERION if (single.status == FAIL and perturbative.status == FAIL) else EXIT_OK


# ============================================================================
# PERTURB
# ============================================================================
def _select_targets(cfg: ExperimentConfig, records, m: Optional[int]) -> List:
    if cfg.targets.strip().lower() != "auto":
        labels = [t.strip() for t in cfg.targets.split(",") if t.strip()]
        by_label = {r.label: r for r in records}
        missing = [t for t in labels if t not in by_label]
        if missing:
            raise ConfigError(f"unknown perturbation targets {missing}; known {sorted(by_label)}")
        return [by_label[t] for t in labels]
    lo = cfg.n - m + 3 if m is not None else 1
    return [r for r in records
            if r.group == UPPER and r.minus_laplacian <= 0.0 and lo <= r.index <= cfg.n - 2]


def cmd_perturb(cfg: ExperimentConfig, manifest: Dict) -> int:
    """Perturb K at selected critical points and verify the result."""
    K = _curvature(cfg)
    shooting = _shooting(cfg)
    records = find_critical_points(K, seeds=cfg.seeds, seed=cfg.seed, l=cfg.l)
    l = max((i for i, r in enumerate(records) if r.group == UPPER), default=-1)
    try:
        hom = homology_of_X(morse_complex(K, records, shooting), l)
        m = hom.m
    except PaneitzError as e:
        logger.warning(f"Homology of X unavailable: {e}")
        record_error(manifest, "homology_of_X", e)
        m = None
    targets = _select_targets(cfg, records, m)
    payload = {**_header(cfg), "m": m, "l": l, "targets": [t.label for t in targets],
               "critical_points": [r.as_dict() for r in records]}
    try:
        K_new, report = perturb_K(K, targets, cfg.rho, cfg.c1_tol, records, m=m, seed=cfg.seed,
                                  homology=m is not None, shooting=shooting)
    except PerturbationError as e:
        logger.error(f"Perturbation failed: {e}")
        record_error(manifest, "perturb_K", e)
        payload.update({"passed": False, "error": str(e), "minimal_tolerance": e.minimal_tolerance})
        _emit_json(manifest, cfg.out_dir / "perturbation.json", payload)
        return EXIT_CRITERION
    except PreconditionError as e:
        raise ConfigError(f"perturbation targets rejected: {e}") from e

    reduced = {t.label: reduced_morse_index(K_new, t.y, t).as_dict() for t in targets}
    payload.update({"passed": report.passed, "report": report.as_dict(), "reduced_indices": reduced})
    _emit_json(manifest, cfg.out_dir / "perturbation.json", payload)
    log_summary("perturb", {
        "n": cfg.n,
        "targets": ", ".join(t.label for t in targets) or "none",
        "m": m,
        "c1 distance": f"{report.c1_distance:.4g} (tol {cfg.c1_tol})",
        "same indices": report.same_indices,
        "passed": report.passed,
    })
    return EXIT_OK if report.passed else EXIT_CRITERION


# ============================================================================
# SOLVE
# ============================================================================
def cmd_solve(cfg: ExperimentConfig, manifest: Dict) -> int:
    """Newton solve of the axisymmetric equation from a bubble warm start."""
    K = _curvature(cfg)
    grid = axisym.make_grid(cfg.n, cfg.nodes)
    init = axisym.warm_start(grid, cfg.warm_lambda, cfg.pole)
    opts = axisym.SolveOptions(tol=cfg.solve_tol, max_iter=cfg.max_iter)
    sol, report = axisym.solve_curvature_equation(K, init, opts)
    negative = axisym.negative_part_machinery(sol, K)
    _emit_csv(manifest, cfg.out_dir / "solution.csv", axisym.solution_frame(sol, K))
    _emit_json(manifest, cfg.out_dir / "solve_report.json", {
        **_header(cfg),
        "nodes": cfg.nodes,
        "warm_lambda": min(cfg.warm_lambda, axisym.WARM_LAMBDA_FRACTION * grid.size),
        "pole": cfg.pole,
        "eta": cfg.eta,
        "in_V_eta": bool(report.v_eta < cfg.eta) if not math.isnan(report.v_eta) else None,
        "solve": report.as_dict(),
        "negative_part": negative.as_dict(),
    })
    fit = report.bubble_fit
    log_summary("solve", {
        "n": cfg.n,
        "K": cfg.K,
        "converged": report.converged,
        "iterations": report.newton_iters,
        "residual": f"{report.residual_sup:.3e}",
        "positive": report.positivity,
        "bubble fit": "n/a" if fit is None else f"lambda={fit.lam:.6g} residual={fit.fit_residual:.3e}",
    })
    if not report.converged:
        return EXIT_SOLVER
    return EXIT_OK if report.positivity else EXIT_CRITERION


# ============================================================================
# ENTRY POINT
# ============================================================================
COMMANDS: Dict[str, Callable[[ExperimentConfig, Dict], int]] = {
    "verify": cmd_verify,
    "flow": cmd_flow,
    "morse": cmd_morse,
    "perturb": cmd_perturb,
    "solve": cmd_solve,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="INI file with [experiment], [flow], ... sections")
    common.add_argument("--n", type=int, default=None, help="sphere dimension (>= 5)")
    common.add_argument("--K", type=str, default=None, help='curvature, e.g. "1+0.1*x6" or "affine:1;0,0,0,0,0,0.1"')
    common.add_argument("--eta", type=float, default=None)
    common.add_argument("--cbar", type=float, default=None)
    common.add_argument("--c0", type=float, default=None)
    common.add_argument("--mu", type=float, default=None)
    common.add_argument("--m1", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=str, default=None)
    common.add_argument("--budget", type=int, default=None, help="Gauss-Legendre nodes per radial panel")
    common.add_argument("--warm-lambda", dest="warm_lambda", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="paneitz", description="Prescribed Paneitz curvature experiments on S^n")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().splitlines()[0])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    try:
        overrides = {dest: getattr(args, flag) for flag, dest in FLAG_DESTS.items()}
        cfg = load_config(args.config, overrides)
    except (ConfigError, DomainError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    manifest = new_manifest(args.command, cfg.config_hash())
    logger.info(f"Starting {args.command} | n={cfg.n} | K={cfg.K} | seed={cfg.seed} | out={cfg.out}")
    try:
        code = COMMANDS[args.command](cfg, manifest)
    except (ConfigError, DomainError) as e:
        logger.error(f"Input error: {e}")
        record_error(manifest, args.command, e)
        code = EXIT_CONFIG
    except IntegrationError as e:
        logger.error(f"Integration failed: {e}")
        record_error(manifest, args.command, e)
        code = EXIT_SOLVER
    except Exception as e:
        logger.exception(f"{args.command} failed")
        record_error(manifest, args.command, e)
        code = EXIT_CONFIG
    manifest["stats"]["exit_code"] = code
    finalize_manifest(manifest, cfg.out_dir)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
