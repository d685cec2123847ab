"""Evaluation quantities along long predicted trajectories.

``model`` arguments accept a :class:`GradientNet`, a :class:`HamiltonianSystem`
(its analytic gradient, i.e. a perfectly learned net), or a bare gradient
callable together with ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrators import (
    _n_steps,
    midpoint_trajectory,
    ps_rk_step,
    reference_trajectory,
)
from .systems import HamiltonianSystem
from .training import as_field

DEFAULT_EVAL_Y0 = {
    "bead_on_wire": (1.0, 0.0),
    "modified_pendulum": (1.0, 0.0),
    "galactic": (0.5, 0.0, 0.5, 0.0),
    "pendulum": (1.0, 0.0),
    "harmonic": (1.0, 0.0),
}


@dataclass
class ErrorCurve:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if self.times.size and self.times[0] != 0.0:
            raise ValueError("times must start at 0")

    def __len__(self):
        return self.times.size


def predicted_trajectory(model, y0, h: float, n_steps: int, d: int | None = None) -> np.ndarray:
    """States Phi^i(y0) for i = 0..n_steps, shape (n_steps + 1, 2d)."""
    field = as_field(model, d)
    y = np.asarray(y0, dtype=float)
    out = np.empty((n_steps + 1, y.size))
    out[0] = y
    for i in range(1, n_steps + 1):
        y = ps_rk_step(field, y, h)
        out[i] = y
    return out


def prediction_error_curve(
    model, sys: HamiltonianSystem, y0, h: float, t_max: float, d: int | None = None
) -> ErrorCurve:
    """||y_hat(t) - y(t)||^2 on the grid t = 0, h, ..., t_max."""
    n = _n_steps(t_max, h)
    pred = predicted_trajectory(model, y0, h, n, d)
    ref = reference_trajectory(sys, y0, h, n)
    err = np.sum((pred - ref) ** 2, axis=1)
    return ErrorCurve(h * np.arange(n + 1), err)


def trajectory_error_curve(
    model,
    sys: HamiltonianSystem,
    y0,
    h: float = 0.01,
    n_steps: int = 60000,
    d: int | None = None,
) -> ErrorCurve:
    """Per-step (1/2d) ||y_i - Phi^i(y0)||^2 against a midpoint trajectory at step h."""
    pred = predicted_trajectory(model, y0, h, n_steps, d)
    ref = midpoint_trajectory(sys.field, y0, h, n_steps)
    diff = pred - ref
    return ErrorCurve(h * np.arange(n_steps + 1), np.sum(diff * diff, axis=1) / sys.dim)


def trajectory_error(
    model,
    sys: HamiltonianSystem,
    y0,
    h: float = 0.01,
    n_steps: int = 60000,
    d: int | None = None,
) -> float:
    """Mean over steps 1..n of the per-step error from :func:`trajectory_error_curve`."""
    curve = trajectory_error_curve(model, sys, y0, h, n_steps, d)
    return float(np.mean(curve.values[1:]))


def energy_curve(
    model, sys: HamiltonianSystem, y0, h: float, t_max: float, d: int | None = None
) -> ErrorCurve:
    """True H evaluated along the predicted trajectory."""
    n = _n_steps(t_max, h)
    pred = predicted_trajectory(model, y0, h, n, d)
    return ErrorCurve(h * np.arange(n + 1), np.asarray(sys.H(pred), dtype=float))


def max_energy_drift(curve: ErrorCurve) -> float:
    return float(np.max(np.abs(curve.values - curve.values[0])))
