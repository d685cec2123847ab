"""Named experiment settings for the four benchmark problems.

Each preset pins the data region, sample count, network shape, training
schedule, and evaluation initial state, so a run is reproducible from its
name and seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .network import ActivationKind, activation_from_name
from .training import TrainConfig


@dataclass(frozen=True)
class Experiment:
    name: str
    system: str
    region: tuple = (-2.0, 2.0)
    N: int = 15
    T: float = 0.01
    h_gen: float = 0.01
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_y0: tuple = (1.0, 0.0)
    # activation -> [(training samples, summands), ...] for the comparison table
    comparison: dict = field(default_factory=dict)

    def with_activation(self, kind: str | ActivationKind, N: int, S: int) -> "Experiment":
        act = activation_from_name(kind) if isinstance(kind, str) else kind
        return replace(self, N=N, train=replace(self.train, activation=act, S=S))


_SMALL = {
    "pade": [(15, 4)],
    "pau": [(15, 4), (100, 4)],
    "taylor": [(15, 8), (100, 8)],
    "relu": [(15, 8), (1000, 8)],
}

# With only 15 samples the step 1e-2 overshoots into poorly generalising
# minima; 1e-3 still reaches a training loss near 1e-7 within 1500 epochs.
_SMALL_TRAIN = TrainConfig(lr=1e-3)

EXPERIMENTS = {
    "example1": Experiment(
        "example1",
        "bead_on_wire",
        train=_SMALL_TRAIN,
        comparison=_SMALL,
    ),
    "example2": Experiment(
        "example2",
        "modified_pendulum",
        train=_SMALL_TRAIN,
        comparison={**_SMALL, "pau": [(15, 8), (100, 4)]},
    ),
    "example3": Experiment(
        "example3",
        "galactic",
        N=1000,
        train=TrainConfig(epochs=2000, lr=1e-3, S=6),
        eval_y0=(0.5, 0.0, 0.5, 0.0),
        comparison={
            "pade": [(1000, 6)],
            "pau": [(1000, 12), (5000, 6)],
            "taylor": [(1000, 12), (5000, 12)],
            "relu": [(1000, 12), (10000, 12)],
        },
    ),
    "example4": Experiment("example4", "pendulum", train=_SMALL_TRAIN),
}

# trajectory errors reported for the comparison table, same layout as ``comparison``
REPORTED_ERRORS = {
    "example1": {"pade": [0.0345], "pau": [3.624, 0.4270], "taylor": [0.5762, 0.3284], "relu": [0.7273, 0.1980]},
    "example2": {"pade": [0.0742], "pau": [0.3624, 0.0975], "taylor": [0.6802, 0.1031], "relu": [5.1816, 0.1162]},
    "example3": {"pade": [0.5605], "pau": [5.3687, 0.7182], "taylor": [7.9136, 2.579], "relu": [1.9445, 0.9316]},
}


def experiment(name: str) -> Experiment:
    try:
        return EXPERIMENTS[name]
    except KeyError:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}") from None
