"""End-to-end runs: generate data, train, evaluate. Shared by the CLI and scripts."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import metrics as me
from .network import GradientNet
from .presets import Experiment
from .systems import builtin
from .training import Dataset, TrainingDiverged, generate_dataset, train


@dataclass
class RunResult:
    experiment: Experiment
    seed: int
    dataset: Dataset
    net: GradientNet | None
    history: list
    trajectory_error: float  # inf when training diverged
    energy_drift: float
    diverged: str | None = None
    error_curve: me.ErrorCurve | None = None
    energy: me.ErrorCurve | None = None

    @property
    def activation(self) -> str:
        return self.experiment.train.activation.kind

    def row(self) -> dict:
        return {
            "example": self.experiment.name,
            "activation": self.activation,
            "N": self.experiment.N,
            "S": self.experiment.train.S,
            "lr": self.experiment.train.lr,
            "seed": self.seed,
            "parameters": self.net.n_params if self.net is not None else None,
            "final_loss": self.history[-1] if self.history else None,
            "trajectory_error": self.trajectory_error,
            "max_energy_drift": self.energy_drift,
            "diverged": self.diverged or "",
        }


def run(
    exp: Experiment,
    seed: int,
    n_eval: int = 60000,
    energy_horizon: float = 60.0,
    dataset: Dataset | None = None,
) -> RunResult:
    """One seed of one experiment. The seed drives both data sampling and weight init.

    Divergence is recorded, not raised, so comparisons can rank a diverged run last.
    """
    sys = builtin(exp.system)
    if dataset is None:
        dataset = generate_dataset(sys, exp.region, exp.N, exp.T, exp.h_gen, seed)
    config = replace(exp.train, seed=seed)
    try:
        net, history = train(dataset, config, log_every=0)
        curve = me.trajectory_error_curve(net, sys, exp.eval_y0, 0.01, n_eval)
        energy = me.energy_curve(net, sys, exp.eval_y0, 0.01, energy_horizon)
    except (TrainingDiverged, ArithmeticError) as exc:
        return RunResult(exp, seed, dataset, None, [], float("inf"), float("inf"), str(exc))
    traj = float(np.mean(curve.values[1:]))
    return RunResult(exp, seed, dataset, net, history, traj, me.max_energy_drift(energy), None, curve, energy)


def best_of(exp: Experiment, seeds, **kwargs) -> tuple[RunResult, list[RunResult]]:
    """Run every seed; return the run with the smallest trajectory error and all runs."""
    runs = [run(exp, s, **kwargs) for s in seeds]
    return min(runs, key=lambda r: r.trajectory_error), runs


def comparison_columns(exp: Experiment):
    """(activation, N, S) for every comparison-table column of ``exp``."""
    return [(kind, N, S) for kind, cols in exp.comparison.items() for N, S in cols]


def finite_or_inf(x: float) -> float:
    return float(x) if np.isfinite(x) else float("inf")
