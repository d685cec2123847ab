"""Explicit pseudo-symplectic Runge-Kutta scheme, implicit midpoint reference
solver, and numerical order checks.

Vector fields are callables ``field(y)`` over a trailing state axis. The
explicit scheme only uses arithmetic on ``y`` and the field outputs, so it can
be traced by :mod:`psnn.diff_engine` (both tape and dual modes).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import diff_engine as ad
from .systems import HamiltonianSystem, symplectic_matrix

GAMMA = 1.0 / (4.0 * (2.0 - 2.0 ** (1.0 / 3.0)))

NOISE_FLOOR = 1e-13
REFERENCE_STEP = 1e-4


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NoiseFloorError(ValueError):
    """Measured errors are too small to fit an order; use larger steps."""


class StepError(ArithmeticError):
    """A step of a composed flow failed; carries the failing step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step


@dataclass(frozen=True)
class ButcherTableau:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def stages(self) -> int:
        return len(self.b)


def _pseudo_symplectic_tableau(g: float = GAMMA) -> ButcherTableau:
    a = np.zeros((7, 7))
    a[1, 0] = 2 * g
    a[2, 1] = 4 * g
    a[3, [0, 2]] = 2 * g, 0.5 - 2 * g
    a[4, [1, 3]] = 4 * g, 1 - 8 * g
    a[5, [0, 2, 4]] = 2 * g, 0.5 - 2 * g, 0.5 - 2 * g
    a[6, [1, 3, 5]] = 4 * g, 1 - 8 * g, 4 * g
    b = np.array([g, 2 * g, 0.25 - g, 0.5 - 4 * g, 0.25 - g, 2 * g, g])
    c = np.array([0.0, 2 * g, 4 * g, 0.5, 1 - 4 * g, 1 - 2 * g, 1.0])
    a.setflags(write=False)
    b.setflags(write=False)
    c.setflags(write=False)
    return ButcherTableau(a, b, c)


PS_TABLEAU = _pseudo_symplectic_tableau()


def ps_rk_step(field: Callable, y, h: float, tableau: ButcherTableau = PS_TABLEAU):
    """One step of the 7-stage explicit pseudo-symplectic RK method."""
    if not 0.0 < h < 1.0:
        raise ValueError(f"step h must satisfy 0 < h < 1, got {h}")
    a, b = tableau.a, tableau.b
    F = []
    for i in range(tableau.stages):
        xi = y
        # explicit: stage i only reads F_j with j < i
        for j in range(i):
            if a[i, j] != 0.0:
                xi = xi + (h * a[i, j]) * F[j]
        F.append(field(xi))
    out = y
    for j in range(tableau.stages):
        out = out + (h * b[j]) * F[j]
    return out


def compose_flow(field: Callable, y0, h: float, K: int, step: Callable = ps_rk_step):
    """Trajectory [y0, Phi(y0), ..., Phi^K(y0)]."""
    if K < 1:
        raise ValueError(f"K must be a positive integer, got {K}")
    traj = [y0]
    y = y0
    for k in range(K):
        try:
            y = step(field, y, h)
        except (ad.DomainError, ArithmeticError) as exc:
            raise StepError(k, exc) from exc
        traj.append(y)
    return traj


def flow_power(field: Callable, y, h: float, K: int, step: Callable = ps_rk_step):
    """Phi^K(y) without keeping the intermediate states."""
    for k in range(K):
        try:
            y = step(field, y, h)
        except (ad.DomainError, ArithmeticError) as exc:
            raise StepError(k, exc) from exc
    return y


def implicit_midpoint_step(
    field: Callable,
    y,
    h: float,
    tol: float = 1e-12,
    max_iter: int = 100,
    return_iterations: bool = False,
):
    """Solve y' = y + h f((y + y')/2) by fixed-point iteration from y + h f(y)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float)
    new = y + h * field(y)
    residual = np.inf
    for it in range(1, max_iter + 1):
        nxt = y + h * field(0.5 * (y + new))
        residual = float(np.max(np.abs(nxt - new)))
        new = nxt
        if residual < tol:
            return (new, it) if return_iterations else new
    raise ConvergenceError(
        f"implicit midpoint did not converge in {max_iter} iterations "
        f"(last residual {residual:.3e})",
        residual,
    )


def midpoint_trajectory(
    field: Callable, y0, h: float, n_steps: int, every: int = 1, tol: float = 1e-12
) -> np.ndarray:
    """States at steps 0, every, 2*every, ... up to n_steps (inclusive)."""
    y = np.asarray(y0, dtype=float)
    out = [y]
    for n in range(1, n_steps + 1):
        y = implicit_midpoint_step(field, y, h, tol=tol)
        if n % every == 0:
            out.append(y)
    return np.array(out)


def _n_steps(t: float, h: float) -> int:
    n = int(round(t / h))
    if abs(n * h - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not an integer multiple of step {h}")
    return n


def reference_solution(
    sys: HamiltonianSystem,
    y0,
    t: float,
    h_ref: float = REFERENCE_STEP,
    richardson: bool = False,
):
    """Implicit-midpoint solution at time t with the fine reference step.

    With ``richardson=True`` the h_ref and h_ref/2 solutions are combined as
    (4 y_{h/2} - y_h) / 3. The midpoint rule is symmetric, so its error has
    only even powers of h and the combination is accurate to O(h_ref^4).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    y0 = np.asarray(y0, dtype=float)
    if t == 0:
        return y0.copy()
    n = _n_steps(t, h_ref)
    coarse = midpoint_trajectory(sys.field, y0, h_ref, n, every=n)[-1]
    if not richardson:
        return coarse
    fine = midpoint_trajectory(sys.field, y0, h_ref / 2, 2 * n, every=2 * n)[-1]
    return (4.0 * fine - coarse) / 3.0


def reference_trajectory(
    sys: HamiltonianSystem, y0, h_out: float, n_out: int, h_ref: float = REFERENCE_STEP
) -> np.ndarray:
    """Reference states at t = 0, h_out, ..., n_out*h_out."""
    every = _n_steps(h_out, h_ref)
    return midpoint_trajectory(sys.field, y0, h_ref, n_out * every, every=every)


# ---------------------------------------------------------------------------
# structure and order checks


def one_step_map(field: Callable, h: float, K: int = 1, step: Callable = ps_rk_step):
    return lambda y: flow_power(field, y, h, K, step)


def symplecticity_residual(flow_map: Callable, y) -> float:
    """||M^T J M - J||_F with M the Jacobian of ``flow_map`` at y."""
    y = np.asarray(y, dtype=float)
    M = ad.jacobian(flow_map, y)
    J = symplectic_matrix(y.shape[-1] // 2)
    return float(np.linalg.norm(M.T @ J @ M - J, ord="fro"))


def fit_slope(hs: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(h)."""
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)


def order_measurements(
    sys: HamiltonianSystem,
    y0,
    steps: Sequence[float],
    mode: str,
    *,
    t_final: float = 1.0,
    K: int = 1,
    step: Callable = ps_rk_step,
) -> list[tuple[float, float]]:
    """(h, error or residual) pairs, before any fitting."""
    y0 = np.asarray(y0, dtype=float)
    rows = []
    if mode == "convergence":
        ref = reference_solution(sys, y0, t_final, richardson=True)
        for h in steps:
            y = flow_power(sys.field, y0, h, _n_steps(t_final, h), step)
            rows.append((h, float(np.linalg.norm(y - ref))))
    elif mode == "symplecticity":
        for h in steps:
            rows.append((h, symplecticity_residual(one_step_map(sys.field, h, K, step), y0)))
    else:
        raise ValueError(f"mode must be 'convergence' or 'symplecticity', got {mode!r}")
    return rows


def observed_order(
    sys: HamiltonianSystem,
    y0,
    steps: Sequence[float],
    mode: str = "convergence",
    *,
    t_final: float = 1.0,
    K: int = 1,
    step: Callable = ps_rk_step,
) -> float:
    """Fitted log-log slope of error (mode=convergence) or residual (symplecticity)."""
    if len(steps) < 3:
        raise ValueError("need at least 3 step sizes")
    if any(not 0 < h < 1 for h in steps):
        raise ValueError("all steps must lie in (0, 1)")
    rows = order_measurements(sys, y0, steps, mode, t_final=t_final, K=K, step=step)
    errs = [e for _, e in rows]
    if all(e < NOISE_FLOOR for e in errs):
        raise NoiseFloorError(
            f"all {mode} errors are below the noise floor {NOISE_FLOOR:g}; enlarge h"
        )
    if any(e < NOISE_FLOOR for e in errs):
        raise NoiseFloorError(
            f"some {mode} errors are below the noise floor {NOISE_FLOOR:g}; enlarge h"
        )
    return fit_slope([h for h, _ in rows], errs)
