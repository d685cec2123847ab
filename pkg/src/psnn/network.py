"""Gradient network with structurally symmetric Jacobian.

    H_y,net(y) = sum_i A_i^T s_i(A_i y) - sum_i B_i^T s_i(B_i y) + b

A_i, B_i are l x 2d, s_i acts element-wise. The Jacobian
sum_i A_i^T diag(s_i') A_i - B_i^T diag(s_i') B_i is symmetric for any
weights, so the output is always the gradient of some scalar function.

Weights are stored stacked: A and B have shape (S, l, 2d), activation
parameters shape (S, P).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import diff_engine as ad
from .rng import Xoshiro256

ACTIVATION_KINDS = ("pade", "taylor", "pau", "relu")

# d_M(x) = 2 + 2x + x^2, lowest degree first
DEFAULT_DENOMINATOR = (2.0, 2.0, 1.0)


@dataclass(frozen=True)
class ActivationKind:
    kind: str
    degrees: tuple[int, ...] = ()
    denominator: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "pade":
            L, M = self.degrees
            if L == M:
                raise ValueError("Pade-type activation needs L != M")
            if L < 1 or M < 1:
                raise ValueError("Pade-type degrees must be positive")
            if len(self.denominator) != M + 1 or self.denominator[-1] == 0:
                raise ValueError(f"denominator must be a degree-{M} polynomial")
            if _has_real_root(self.denominator):
                raise ValueError(f"denominator {self.denominator} has a real root")
        elif self.kind == "pau":
            m, n = self.degrees
            if m < 0 or n < 1:
                raise ValueError("PAU degrees must satisfy m >= 0, n >= 1")

    def n_params(self) -> int:
        """Learnable activation parameters per summand."""
        if self.kind == "pade":
            return self.degrees[0] + 1
        if self.kind == "pau":
            m, n = self.degrees
            return (m + 1) + n
        return 0

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "degrees": list(self.degrees),
            "fixed_denominator": list(self.denominator),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ActivationKind":
        return cls(
            obj["kind"],
            tuple(int(v) for v in obj.get("degrees", ())),
            tuple(float(v) for v in obj.get("fixed_denominator", ())),
        )


def _has_real_root(coeffs) -> bool:
    roots = np.roots(list(reversed(coeffs)))
    return bool(np.any(np.abs(roots.imag) < 1e-12))


def pade(L: int = 3, M: int = 2, denominator=None) -> ActivationKind:
    if denominator is None:
        if M != 2:
            raise ValueError("give a denominator explicitly when M != 2")
        denominator = DEFAULT_DENOMINATOR
    return ActivationKind("pade", (L, M), tuple(float(c) for c in denominator))


def pau(m: int = 5, n: int = 4) -> ActivationKind:
    return ActivationKind("pau", (m, n))


def taylor() -> ActivationKind:
    return ActivationKind("taylor")


def relu() -> ActivationKind:
    return ActivationKind("relu")


def activation_from_name(name: str) -> ActivationKind:
    factories = {"pade": pade, "pau": pau, "taylor": taylor, "relu": relu}
    try:
        return factories[name]()
    except KeyError:
        raise ValueError(
            f"unknown activation {name!r}; choose from {', '.join(ACTIVATION_KINDS)}"
        ) from None


# ---------------------------------------------------------------------------
# activations


def _horner(coeffs, x):
    """sum_j coeffs[j] x^j. coeffs may be floats or traced slices."""
    out = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        out = out * x + c
    return out


def _horner_derivative(coeffs, x):
    return _horner([j * c for j, c in enumerate(coeffs)][1:], x) if len(coeffs) > 1 else 0.0 * x


def _columns(params, count: int):
    """Split (S, P) parameters into P column slices shaped (S, 1)."""
    return [params[..., j : j + 1] for j in range(count)]


def activate(kind: ActivationKind, params, z):
    """Apply the S summand activations to z of shape (..., S, l).

    ``params`` has shape (S, P) and may be a traced value.
    """
    xp = ad.backend(params, z)
    if kind.kind == "pade":
        L = kind.degrees[0]
        num = _horner(_columns(params, L + 1), z)
        return num / _horner(list(kind.denominator), z)
    if kind.kind == "pau":
        m, n = kind.degrees
        cols = _columns(params, m + 1 + n)
        num = _horner(cols[: m + 1], z)
        inner = _horner([0.0] + cols[m + 1 :], z)
        return num / (1.0 + xp.absolute(inner))
    if kind.kind == "relu":
        return xp.relu(z)
    # taylor: summand i (1-based) applies x^i / i!
    S = ad.value_of(z).shape[-2]
    terms = [
        xp.power(z[..., i, :], i + 1) / float(math.factorial(i + 1)) for i in range(S)
    ]
    return xp.stack(terms, axis=-2)


def activate_derivative(kind: ActivationKind, params, z) -> np.ndarray:
    """Analytic d/dz of :func:`activate` (plain arrays)."""
    params = np.asarray(params, dtype=float)
    z = np.asarray(z, dtype=float)
    if kind.kind == "pade":
        L = kind.degrees[0]
        cols = _columns(params, L + 1)
        den = list(kind.denominator)
        N, dN = _horner(cols, z), _horner_derivative(cols, z)
        D, dD = _horner(den, z), _horner_derivative(den, z)
        return (dN * D - N * dD) / (D * D)
    if kind.kind == "pau":
        m, n = kind.degrees
        cols = _columns(params, m + 1 + n)
        P, dP = _horner(cols[: m + 1], z), _horner_derivative(cols[: m + 1], z)
        rc = [0.0] + cols[m + 1 :]
        R, dR = _horner(rc, z), _horner_derivative(rc, z)
        Q = 1.0 + np.abs(R)
        return dP / Q - P * np.sign(R) * dR / (Q * Q)
    if kind.kind == "relu":
        return (z > 0).astype(float)
    S = z.shape[-2]
    i = np.arange(1, S + 1).reshape(S, 1)
    fact = np.array([math.factorial(k - 1) for k in range(1, S + 1)], dtype=float).reshape(S, 1)
    return z ** (i - 1) / fact


def activation_forward(kind: ActivationKind, params, x, summand: int = 1):
    """One summand's activation at x (scalar or array).

    ``summand`` is the 1-based summand index; only the Taylor family uses it.
    """
    if not ad.is_traced(x):
        x = np.asarray(x, dtype=float)
    p = np.asarray(params, dtype=float).reshape(1, -1)
    if kind.kind == "taylor":
        return ad.backend(x).power(x, summand) / float(math.factorial(summand))
    shape = ad.value_of(x).shape
    out = activate(kind, p, ad.reshape(x, shape + (1, 1)))
    return ad.reshape(out, shape)


def activation_derivative(kind: ActivationKind, params, x, summand: int = 1):
    x = np.asarray(x, dtype=float)
    p = np.asarray(params, dtype=float).reshape(1, -1)
    if kind.kind == "taylor":
        return x ** (summand - 1) / float(math.factorial(summand - 1))
    return activate_derivative(kind, p, x[..., None, None])[..., 0, 0]


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class GradientNet:
    d: int
    l: int  # noqa: E741 - hidden width
    S: int
    activation: ActivationKind
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    act_params: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return 2 * self.d

    @property
    def n_params(self) -> int:
        return 2 * self.S * self.l * self.dim + self.dim + self.S * self.activation.n_params()

    def params(self) -> np.ndarray:
        """Flat parameter vector: A, B, b, activation parameters (row-major)."""
        return np.concatenate(
            [self.A.ravel(), self.B.ravel(), self.b.ravel(), self.act_params.ravel()]
        )

    def with_params(self, theta) -> "GradientNet":
        A, B, b, act = unpack(self, np.asarray(theta, dtype=float))
        return replace(self, A=A, B=B, b=b, act_params=act)

    def __call__(self, y):
        return hynet_forward(self, y)

    @cached_property
    def _flat(self):
        """Both branches stacked row-wise for fast untraced evaluation."""
        S, l, n = self.S, self.l, self.dim
        W = np.concatenate([self.A, self.B]).reshape(2 * S * l, n)
        sign = np.repeat([1.0, -1.0], S * l)
        rows = np.repeat(np.concatenate([self.act_params, self.act_params]), l, axis=0)
        cols = [rows[:, j] for j in range(rows.shape[1])]
        power = np.tile(np.repeat(np.arange(1, S + 1), l), 2)
        fact = np.array([math.factorial(k) for k in power], dtype=float)
        return W, sign, cols, power, fact


def _plain_forward(net: GradientNet, y: np.ndarray) -> np.ndarray:
    W, sign, cols, power, fact = net._flat
    z = y @ W.T  # (..., 2Sl)
    kind = net.activation
    if kind.kind == "pade":
        s = _horner(cols, z) / _horner(list(kind.denominator), z)
    elif kind.kind == "pau":
        m = kind.degrees[0]
        s = _horner(cols[: m + 1], z) / (1.0 + np.abs(_horner([0.0] + cols[m + 1 :], z)))
    elif kind.kind == "relu":
        s = np.maximum(z, 0.0)
    else:
        s = z**power / fact
    return (s * sign) @ W + net.b


def unpack(net: GradientNet, theta):
    """Split a (possibly traced) flat vector into A, B, b, activation params."""
    S, l, n, P = net.S, net.l, net.dim, net.activation.n_params()
    sizes = [S * l * n, S * l * n, n, S * P]
    if ad.value_of(theta).shape != (sum(sizes),):
        raise ValueError(
            f"parameter vector has shape {ad.value_of(theta).shape}, expected ({sum(sizes)},)"
        )
    o1, o2, o3 = sizes[0], 2 * sizes[0], 2 * sizes[0] + n
    A = ad.reshape(theta[0:o1], (S, l, n))
    B = ad.reshape(theta[o1:o2], (S, l, n))
    b = theta[o2:o3]
    act = ad.reshape(theta[o3:], (S, P))
    return A, B, b, act


def gradient_field(activation: ActivationKind, A, B, b, act, y):
    """H_y,net for explicit (possibly traced) weights; y has shape (..., 2d)."""
    xp = ad.backend(A, B, b, act, y)
    yy = y[..., None, :]

    def branch(W):
        z = xp.matvec(W, yy)  # (..., S, l)
        s = activate(activation, act, z)
        return xp.sum(xp.matvec(W, s, transpose=True), axis=-2)

    return branch(A) - branch(B) + b


def hynet_forward(net: GradientNet, y, theta=None):
    """Network output at y. With ``theta`` given, weights come from that vector."""
    if ad.value_of(y).shape[-1] != net.dim:
        raise ValueError(f"state has dimension {ad.value_of(y).shape[-1]}, expected {net.dim}")
    if theta is None and not ad.is_traced(y):
        out = _plain_forward(net, np.asarray(y, dtype=float))
    elif theta is None:
        out = gradient_field(net.activation, net.A, net.B, net.b, net.act_params, y)
    else:
        out = gradient_field(net.activation, *unpack(net, theta), y)
    return ad.check_finite(out, "network output")


def hynet_jacobian(net: GradientNet, y) -> np.ndarray:
    """sum_i A_i^T diag(s_i'(A_i y)) A_i - B_i^T diag(s_i'(B_i y)) B_i."""
    y = np.asarray(y, dtype=float)
    if y.shape != (net.dim,):
        raise ValueError(f"state has shape {y.shape}, expected ({net.dim},)")

    def part(W):
        z = np.einsum("sln,n->sl", W, y)
        ds = activate_derivative(net.activation, net.act_params, z)
        return np.einsum("slm,sl,sln->mn", W, ds, W)

    M = part(net.A) - part(net.B)
    # each unordered entry computed once, so symmetry is exact rather than up to rounding
    return np.triu(M) + np.triu(M, 1).T


def init_network(d: int, l: int, S: int, activation: ActivationKind, seed: int) -> GradientNet:  # noqa: E741
    """A_i, B_i ~ N(0, sd^2) with sd = sqrt(2 / (2 l d)); b ~ N(0, 1); activation params 0.

    Draw order from the seeded stream: A (row-major), B, b.
    """
    if l < 1 or S < 1 or d < 1:
        raise ValueError("d, l and S must be positive")
    n = 2 * d
    rng = Xoshiro256(seed)
    sd = math.sqrt(2.0 / (2.0 * l * d))
    A = sd * rng.normals(S * l * n).reshape(S, l, n)
    B = sd * rng.normals(S * l * n).reshape(S, l, n)
    b = rng.normals(n)
    act = np.zeros((S, activation.n_params()))
    return GradientNet(d, l, S, activation, A, B, b, act, meta={"seed": seed})


def quadratic_net(Q, bias=None) -> GradientNet:
    """Pade net that reproduces y -> Q y + bias exactly, for symmetric Q.

    Uses numerator c = (0, 2, 2, 1) = x * d_M(x), so the activation is the
    identity, and splits Q = A^T A - B^T B via its eigendecomposition.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if Q.shape != (n, n) or n % 2 or not np.allclose(Q, Q.T, atol=0):
        raise ValueError("Q must be a symmetric 2d x 2d matrix")
    w, V = np.linalg.eigh(Q)
    A = (np.sqrt(np.clip(w, 0, None))[:, None] * V.T)[None]
    B = (np.sqrt(np.clip(-w, 0, None))[:, None] * V.T)[None]
    act = np.array([[0.0, 2.0, 2.0, 1.0]])
    b = np.zeros(n) if bias is None else np.asarray(bias, dtype=float)
    return GradientNet(n // 2, n, 1, pade(), A, B, b, act, meta={"construction": "quadratic"})
