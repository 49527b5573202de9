"""
paneitz/integrators.py

Explicit Runge-Kutta integration for the parameter-space flows.
- rkf45_step: one Runge-Kutta-Fehlberg step with embedded error estimate
- integrate_adaptive: step-size controlled driver with a per-step projection hook
- rk4_batch: fixed-step classical RK4 over a batch of states (orbit shooting)
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from paneitz.errors import IntegrationError

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
SAFETY = 0.9
MAX_GROWTH = 4.0
MIN_SHRINK = 0.1

RHS = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class AdaptiveResult:
    ts: List[float] = field(default_factory=list)
    ys: List[np.ndarray] = field(default_factory=list)
    stop_reason: str = "time_budget"
    rejected: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.ys[-1]


def rkf45_step(t0: float, h: float, f: RHS, y0: np.ndarray):
    """
    Single-step y' = f(t, y) by the Runge-Kutta-Fehlberg method.

    Returns (t1, y1, err) with y1 the fifth-order value and err the
    componentwise difference to the embedded fourth-order value.
    """
    k1 = f(t0, y0.copy())
    k2 = f(t0 + h / 4.0, y0 + 0.25 * h * k1)
    k3 = f(t0 + 3.0 * h / 8.0, y0 + 3.0 * h * k1 / 32.0 + 9.0 * h * k2 / 32.0)
    k4 = f(t0 + 12.0 * h / 13.0,
           y0 + 1932.0 * h * k1 / 2197.0 - 7200.0 * h * k2 / 2197.0 + 7296.0 * h * k3 / 2197.0)
    k5 = f(t0 + h, y0 + 439.0 * h * k1 / 216.0 - 8.0 * h * k2 + 3680.0 * h * k3 / 513.0
           - 845.0 * h * k4 / 4104.0)
    k6 = f(t0 + h / 2.0, y0 - 8.0 * h * k1 / 27.0 + 2.0 * h * k2 - 3544.0 * h * k3 / 2565.0
           + 1859.0 * h * k4 / 4104.0 - 11.0 * h * k5 / 40.0)
    t1 = t0 + h
    y1 = (y0 + 16.0 * h * k1 / 135.0 + 6656.0 * h * k3 / 12825.0 + 28561.0 * h * k4 / 56430.0
          - 9.0 * h * k5 / 50.0 + 2.0 * h * k6 / 55.0)
    err = np.abs(h * k1 / 360.0 - 128.0 * h * k3 / 4275.0 - 2197.0 * h * k4 / 75240.0
                 + h * k5 / 50.0 + 2.0 * h * k6 / 55.0)
    return t1, y1, err


def integrate_adaptive(
    f: RHS,
    t0: float,
    y0: np.ndarray,
    t_max: float,
    h0: float = 1e-2,
    tol: float = 1e-8,
    h_min: float = 1e-12,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    stop: Optional[Callable[[float, np.ndarray], Optional[str]]] = None,
    max_steps: int = 100000,
) -> AdaptiveResult:
    """
    Integrate y' = f(t, y) from t0 until `stop` returns a reason or t reaches t_max.

    Args:
        project: applied to every accepted state (e.g. renormalization to the sphere)
        stop: returns a non-empty reason string to end the integration

    Raises:
        IntegrationError: accepted step size fell below h_min
    """
    res = AdaptiveResult(ts=[t0], ys=[np.array(y0, dtype=float)])
    t, y, h = t0, res.ys[0], h0
    for _ in range(max_steps):
        if t >= t_max:
            res.stop_reason = "time_budget"
            return res
        h = min(h, t_max - t)
        t1, y1, err = rkf45_step(t, h, f, y)
        scale = tol * (1.0 + np.abs(y))
        ratio = float(np.max(err / scale))
        if not np.isfinite(ratio) or ratio > 1.0:
            res.rejected += 1
            shrink = MIN_SHRINK if not np.isfinite(ratio) else max(MIN_SHRINK, SAFETY * ratio ** -0.25)
            h *= shrink
            if h < h_min:
                raise IntegrationError(
                    f"step size underflow | t={t:.6g} | h={h:.3e} | h_min={h_min:.1e}",
                    trajectory=res,
                )
            continue
        t, y = t1, (project(y1) if project is not None else y1)
        res.ts.append(t)
        res.ys.append(y)
        h *= min(MAX_GROWTH, SAFETY * (ratio if ratio > 0 else 1e-16) ** -0.2)
        if stop is not None:
            reason = stop(t, y)
            if reason:
                res.stop_reason = reason
                return res
    res.stop_reason = "max_steps"
    return res


def rk4_batch(f: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, h: float, steps: int,
              project: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> np.ndarray:
    """Classical RK4 on an autonomous batch y' = f(y), y of shape (batch, dim)."""
    y = np.array(y0, dtype=float)
    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if project is not None:
            y = project(y)
    return y
