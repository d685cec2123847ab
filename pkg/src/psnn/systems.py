"""Reference Hamiltonian systems.

States are ordered y = (p_1..p_d, q_1..q_d). All functions accept a trailing
state axis, so a batch of states of shape (N, 2d) evaluates in one call, and
are written with :mod:`psnn.diff_engine` primitives so they can be traced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diff_engine as ad


def symplectic_matrix(d: int) -> np.ndarray:
    """J = [[0, I_d], [-I_d, 0]]."""
    eye = np.eye(d)
    zero = np.zeros((d, d))
    return np.block([[zero, eye], [-eye, zero]])


def apply_j_inverse(g, d: int):
    """J^{-1} g = -J g = (-g_q, g_p)."""
    return ad.backend(g).concatenate([-g[..., d:], g[..., :d]], axis=-1)


@dataclass(frozen=True)
class HamiltonianSystem:
    name: str
    d: int
    hamiltonian: Callable
    grad_h: Callable

    @property
    def dim(self) -> int:
        return 2 * self.d

    def _check_dim(self, y):
        if ad.value_of(y).shape[-1] != self.dim:
            raise ValueError(
                f"{self.name}: state has dimension {ad.value_of(y).shape[-1]}, expected {self.dim}"
            )

    def H(self, y):
        self._check_dim(y)
        return ad.check_finite(self.hamiltonian(y), f"{self.name} H")

    def gradient(self, y):
        self._check_dim(y)
        return ad.check_finite(self.grad_h(y), f"{self.name} grad H")

    def field(self, y):
        """J^{-1} grad H(y)."""
        if ad.is_traced(y):
            return vector_field(self, y)
        # untraced fast path: same arithmetic, fewer wrapper calls
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            self._check_dim(y)
        g = self.grad_h(y)
        d = self.d
        out = np.concatenate((-g[..., d:], g[..., :d]), axis=-1)
        return ad.check_finite(out, f"{self.name} field")


def vector_field(sys: HamiltonianSystem, y):
    return apply_j_inverse(sys.gradient(y), sys.d)


# --- Example 4: pendulum H = p^2/2 - cos q


def _pendulum_h(y):
    xp = ad.backend(y)
    p, q = y[..., 0], y[..., 1]
    return p * p / 2.0 - xp.cos(q)


def _pendulum_grad(y):
    xp = ad.backend(y)
    p, q = y[..., 0], y[..., 1]
    return xp.stack([p, xp.sin(q)], axis=-1)


# --- Example 2: modified pendulum H = p^2/2 - cos q (1 - p/6)


def _modpend_h(y):
    xp = ad.backend(y)
    p, q = y[..., 0], y[..., 1]
    return p * p / 2.0 - xp.cos(q) * (1.0 - p / 6.0)


def _modpend_grad(y):
    xp = ad.backend(y)
    p, q = y[..., 0], y[..., 1]
    return xp.stack([p + xp.cos(q) / 6.0, xp.sin(q) * (1.0 - p / 6.0)], axis=-1)


# --- Example 1: bead on a wire, H = p^2 / (2 (1 + U'(q)^2)) + U(q), U = 0.1 q (q - 1)


def _bead_h(y):
    p, q = y[..., 0], y[..., 1]
    du = 0.2 * q - 0.1
    return p * p / (2.0 * (1.0 + du * du)) + 0.1 * q * (q - 1.0)


def _bead_grad(y):
    xp = ad.backend(y)
    p, q = y[..., 0], y[..., 1]
    du = 0.2 * q - 0.1
    w = 1.0 + du * du
    dh_dp = p / w
    # d/dq [p^2 / (2w)] = -p^2 * w' / (2 w^2), w' = 2 U' U'' = 0.4 U'
    dh_dq = -(p * p) * (0.4 * du) / (2.0 * w * w) + (0.2 * q - 0.1)
    return xp.stack([dh_dp, dh_dq], axis=-1)


# --- Example 3: galactic, H = (p1^2+p2^2)/2 + (p1 q2 - p2 q1)/2 + ln(1 + q1^2 + q2^2)


def _galactic_h(y):
    xp = ad.backend(y)
    p1, p2, q1, q2 = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    return (
        (p1 * p1 + p2 * p2) / 2.0
        + (p1 * q2 - p2 * q1) / 2.0
        + xp.log(1.0 + q1 * q1 + q2 * q2)
    )


def _galactic_grad(y):
    xp = ad.backend(y)
    p1, p2, q1, q2 = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    r = 1.0 + q1 * q1 + q2 * q2
    return xp.stack(
        [
            p1 + q2 / 2.0,
            p2 - q1 / 2.0,
            -p2 / 2.0 + 2.0 * q1 / r,
            p1 / 2.0 + 2.0 * q2 / r,
        ],
        axis=-1,
    )


# --- oracle: harmonic oscillator H = (p^2 + q^2)/2, flow is a rotation


def _harmonic_h(y):
    p, q = y[..., 0], y[..., 1]
    return (p * p + q * q) / 2.0


def _harmonic_grad(y):
    return y


def harmonic_flow(y, t: float):
    """Exact flow of the harmonic oscillator: p' = -q, q' = p."""
    c, s = np.cos(t), np.sin(t)
    p, q = y[..., 0], y[..., 1]
    return ad.backend(y).stack([c * p - s * q, s * p + c * q], axis=-1)


_BUILTINS = {
    "pendulum": (1, _pendulum_h, _pendulum_grad),
    "modified_pendulum": (1, _modpend_h, _modpend_grad),
    "bead_on_wire": (1, _bead_h, _bead_grad),
    "galactic": (2, _galactic_h, _galactic_grad),
    "harmonic": (1, _harmonic_h, _harmonic_grad),
}

SYSTEM_NAMES = tuple(_BUILTINS)


def builtin(name: str) -> HamiltonianSystem:
    try:
        d, h, g = _BUILTINS[name]
    except KeyError:
        raise KeyError(
            f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}"
        ) from None
    return HamiltonianSystem(name, d, h, g)
