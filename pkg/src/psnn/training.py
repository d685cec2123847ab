"""Dataset generation, loss, Adam, and the full-batch training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import diff_engine as ad
from .integrators import ConvergenceError, flow_power, implicit_midpoint_step
from .network import (
    ActivationKind,
    GradientNet,
    gradient_field,
    init_network,
    pade,
    unpack,
)
from .rng import Xoshiro256
from .systems import HamiltonianSystem, apply_j_inverse

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    y0: np.ndarray  # (N, 2d)
    y1: np.ndarray  # (N, 2d)
    T: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        self.y1 = np.asarray(self.y1, dtype=float)
        if self.y0.ndim != 2 or self.y0.shape != self.y1.shape:
            raise ValueError("y0 and y1 must both have shape (N, 2d)")
        if self.y0.shape[0] < 1:
            raise ValueError("dataset must contain at least one pair")
        if self.y0.shape[1] % 2:
            raise ValueError("state dimension must be even")
        if not self.T > 0:
            raise ValueError("observation interval T must be positive")

    def __len__(self) -> int:
        return self.y0.shape[0]

    @property
    def dim(self) -> int:
        return self.y0.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y0[idx], self.y1[idx], self.T, dict(self.meta))


class DataGenerationError(RuntimeError):
    def __init__(self, sample: int, cause: Exception):
        super().__init__(f"sample {sample}: {cause}")
        self.sample = sample


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_finite_loss: float | None, cause: str = "non-finite loss"):
        super().__init__(
            f"{cause} at epoch {epoch}; last finite loss {last_finite_loss!r}"
        )
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


def parse_region(region, dim: int) -> np.ndarray:
    """Region as an array of (lo, hi) rows, one per coordinate; a single pair broadcasts."""
    r = np.asarray(region, dtype=float)
    if r.shape == (2,):
        r = np.tile(r, (dim, 1))
    if r.shape != (dim, 2):
        raise ValueError(f"region must have {dim} (lo, hi) pairs, got shape {r.shape}")
    if np.any(r[:, 1] <= r[:, 0]):
        raise ValueError("region bounds must satisfy lo < hi")
    return r


def generate_dataset(
    sys: HamiltonianSystem,
    region,
    N: int,
    T: float,
    h_gen: float,
    seed: int,
) -> Dataset:
    """Uniform initial states from the seeded stream, advanced by T/h_gen midpoint steps."""
    n_steps = int(round(T / h_gen))
    if n_steps < 1 or abs(n_steps * h_gen - T) > 1e-12:
        raise ValueError(f"h_gen={h_gen} must divide T={T}")
    if N < 1:
        raise ValueError("N must be positive")
    box = parse_region(region, sys.dim)
    rng = Xoshiro256(seed)
    u = rng.uniforms(N * sys.dim).reshape(N, sys.dim)
    y0 = box[:, 0] + (box[:, 1] - box[:, 0]) * u
    y1 = np.empty_like(y0)
    for i in range(N):
        y = y0[i]
        try:
            for _ in range(n_steps):
                y = implicit_midpoint_step(sys.field, y, h_gen)
        except (ConvergenceError, ArithmeticError) as exc:
            raise DataGenerationError(i, exc) from exc
        y1[i] = y
    meta = {
        "system_name": sys.name,
        "region": box.tolist(),
        "N": N,
        "T": T,
        "h_gen": h_gen,
        "seed": seed,
    }
    return Dataset(y0, y1, T, meta)


# ---------------------------------------------------------------------------
# prediction and loss


def as_field(model, d: int | None = None) -> Callable:
    """Vector field y -> J^{-1} g(y) for a GradientNet or a plain gradient callable."""
    if isinstance(model, GradientNet):
        return lambda y: apply_j_inverse(model(y), model.d)
    if isinstance(model, HamiltonianSystem):
        return model.field
    if d is None:
        raise ValueError("half dimension d is needed for a bare gradient callable")
    return lambda y: apply_j_inverse(model(y), d)


def predict_pair(model, y0, h: float, K: int):
    """Phi^K(h, y0) with the learned field; y0 may be a batch (N, 2d)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return flow_power(as_field(model), np.asarray(y0, dtype=float), h, K)


def loss(net: GradientNet, dataset: Dataset, h: float, K: int) -> float:
    r = predict_pair(net, dataset.y0, h, K) - dataset.y1
    return float(np.sum(r * r) / len(dataset))


def _loss_of_params(net: GradientNet, dataset: Dataset, h: float, K: int):
    y0, y1, n = dataset.y0, dataset.y1, float(len(dataset))

    def f(theta):
        A, B, b, act = unpack(net, theta)

        def field(y):
            return apply_j_inverse(gradient_field(net.activation, A, B, b, act, y), net.d)

        r = flow_power(field, y0, h, K) - y1
        # per-sample squared norms, then summed in dataset order
        return ad.sum(ad.dot(r, r)) / n

    return f


def loss_and_gradient(net: GradientNet, dataset: Dataset, h: float, K: int):
    return ad.value_and_grad(_loss_of_params(net, dataset, h, K), net.params())


def loss_gradient(net: GradientNet, dataset: Dataset, h: float, K: int) -> np.ndarray:
    """Exact reverse-mode gradient of the loss over the flat parameter vector."""
    return loss_and_gradient(net, dataset, h, K)[1]


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    if params.shape != grad.shape or state.m.shape != params.shape:
        raise ValueError("params, grad and Adam state must have the same shape")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, t), new


@dataclass
class TrainConfig:
    h: float = 0.01
    K: int = 1
    epochs: int = 1500
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    width: int = 16
    S: int = 4
    activation: ActivationKind = field(default_factory=pade)

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise ValueError("integrator step h must satisfy 0 < h < 1")
        if self.K < 1:
            raise ValueError("K must be a positive integer")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    def check_interval(self, T: float) -> None:
        if abs(self.K * self.h - T) > 1e-12:
            raise ValueError(f"K*h = {self.K * self.h} does not match T = {T}")

    def to_json(self) -> dict:
        out = asdict(self)
        out["activation"] = self.activation.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        obj = dict(obj)
        if "activation" in obj and isinstance(obj["activation"], dict):
            obj["activation"] = ActivationKind.from_json(obj["activation"])
        return cls(**obj)


def train(
    dataset: Dataset,
    config: TrainConfig,
    net: GradientNet | None = None,
    log_every: int = 100,
) -> tuple[GradientNet, list[float]]:
    """Full-batch training: per epoch, loss over all pairs then one Adam update.

    ``history[j]`` is the loss at the start of epoch j (before its update).
    """
    config.check_interval(dataset.T)
    if net is None:
        net = init_network(
            dataset.dim // 2, config.width, config.S, config.activation, config.seed
        )
    theta = net.params()
    state = AdamState.zeros(theta.size)
    history: list[float] = []
    for epoch in range(config.epochs):
        current = net.with_params(theta)
        last = history[-1] if history else None
        try:
            value, grad = loss_and_gradient(current, dataset, config.h, config.K)
        except ArithmeticError as exc:
            raise TrainingDiverged(epoch, last, str(exc)) from exc
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(epoch, last)
        history.append(value)
        state, theta = adam_step(
            state, theta, grad, config.lr, config.beta1, config.beta2, config.eps
        )
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            log.info("epoch %d loss %.6e", epoch, value)
    return net.with_params(theta), history
