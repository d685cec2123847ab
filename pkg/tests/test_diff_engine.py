import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psnn import diff_engine as ad
from psnn import integrators as integ
from psnn.network import activation_derivative, activation_forward, pade
from psnn.systems import builtin

finite = st.floats(-3.0, 3.0, allow_nan=False)
positive = st.floats(0.2, 3.0)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


# --- record / backward


def test_square_records_one_multiply():
    out, tape = ad.record(lambda x: x * x, np.array(3.0))
    assert out == 9.0
    ops = [n.op for n in tape.nodes if n.op != "leaf"]
    assert ops == ["mul"]
    assert ad.backward(tape, 1.0) == 6.0


def test_product_of_two_leaves():
    out, tape = ad.record(lambda v: v[0] * v[1], np.array([2.0, 5.0]))
    assert out == 10.0
    np.testing.assert_array_equal(ad.backward(tape, 1.0), [5.0, 2.0])


def test_traced_rk_step_matches_plain_bitwise():
    sys = builtin("pendulum")
    y = np.array([0.3, 1.1])
    out, tape = ad.record(lambda v: integ.ps_rk_step(sys.field, v, 0.1), y)
    np.testing.assert_array_equal(out, integ.ps_rk_step(sys.field, y, 0.1))
    np.testing.assert_array_equal(tape.replay(y), out)


def test_pade_input_gradient_matches_quotient_rule():
    c = np.array([0.3, -1.2, 0.7, 0.25])
    kind = pade()
    for x in (-1.7, -0.2, 0.0, 0.9, 2.4):
        _, g = ad.value_and_grad(lambda v: activation_forward(kind, c, v), np.array(x))
        num = c[0] + c[1] * x + c[2] * x**2 + c[3] * x**3
        dnum = c[1] + 2 * c[2] * x + 3 * c[3] * x**2
        den, dden = 2 + 2 * x + x**2, 2 + 2 * x
        expected = (dnum * den - num * dden) / den**2
        assert rel_err(g, expected, 1e-300) < 1e-12


def test_cotangent_shape_mismatch():
    _, tape = ad.record(lambda v: v * 2.0, np.array([1.0, 2.0]))
    with pytest.raises(ValueError, match="cotangent"):
        ad.backward(tape, np.ones(3))


def test_division_by_zero_is_a_domain_error():
    with pytest.raises(ad.DomainError, match="division by zero"):
        ad.record(lambda v: 1.0 / (v - 1.0), np.array(1.0))


def test_log_of_nonpositive_names_the_node():
    with pytest.raises(ad.DomainError, match=r"log of non-positive argument at tape node #\d+"):
        ad.record(lambda v: ad.log(v - 2.0), np.array(1.0))


def test_plain_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log(np.array([1.0, 0.0]))


def test_constant_function_has_zero_gradient():
    v, g = ad.value_and_grad(lambda x: 4.0, np.array([1.0, 2.0]))
    assert v == 4.0
    np.testing.assert_array_equal(g, [0.0, 0.0])


# --- primitive gradients against finite differences

UNARY = {
    "neg": lambda x: -x,
    "cos": ad.cos,
    "sin": ad.sin,
    "abs": ad.absolute,
    "relu": ad.relu,
    "pow3": lambda x: ad.power(x, 3),
    "pow0": lambda x: ad.power(x, 0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(x=finite)
def test_unary_gradient_matches_fd(name, x):
    if name in ("abs", "relu") and abs(x) < 1e-3:
        x = 0.5
    f = lambda v: ad.sum(UNARY[name](v))  # noqa: E731
    g = ad.value_and_grad(f, np.array([x]))[1]
    assert np.allclose(g, ad.fd_gradient(f, np.array([x]), 1e-5), rtol=1e-5, atol=1e-8)


@given(x=positive)
def test_log_gradient_matches_fd(x):
    f = lambda v: ad.sum(ad.log(v))  # noqa: E731
    g = ad.value_and_grad(f, np.array([x]))[1]
    assert np.allclose(g, ad.fd_gradient(f, np.array([x]), 1e-5), rtol=1e-5, atol=1e-8)


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "dot": ad.dot,
}


@pytest.mark.parametrize("name", sorted(BINARY))
@given(a=st.lists(finite, min_size=2, max_size=2), b=st.lists(positive, min_size=2, max_size=2))
def test_binary_gradient_matches_fd(name, a, b):
    x = np.array(a + b)
    f = lambda v: ad.sum(BINARY[name](v[:2], v[2:]))  # noqa: E731
    g = ad.value_and_grad(f, x)[1]
    assert np.allclose(g, ad.fd_gradient(f, x, 1e-5), rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("transpose", [False, True])
def test_matvec_gradient_and_batching(transpose):
    rng = np.random.default_rng(3)
    m, v = rng.normal(size=(2, 3, 3)), rng.normal(size=(4, 2, 3))
    x = np.concatenate([m.ravel(), v.ravel()])

    def f(t):
        mm = ad.reshape(t[:18], (2, 3, 3))
        vv = ad.reshape(t[18:], (4, 2, 3))
        return ad.sum(ad.cos(ad.matvec(mm, vv, transpose=transpose)))

    g = ad.value_and_grad(f, x)[1]
    assert np.allclose(g, ad.fd_gradient(f, x, 1e-5), rtol=1e-5, atol=1e-8)
    plain = ad.matvec(m, v, transpose=transpose)
    expected = np.einsum("sji,bsj->bsi" if transpose else "sij,bsj->bsi", m, v)
    np.testing.assert_allclose(plain, expected, rtol=1e-14)


def test_structural_primitives_gradient():
    x = np.array([0.3, -1.0, 2.0, 0.5])

    def f(v):
        s = ad.stack([v[0] * v[1], v[2]], axis=-1)
        c = ad.concatenate([s, v[1:3]], axis=-1)
        return ad.sum(c * c) + ad.sum(ad.reshape(v, (2, 2))[1])

    g = ad.value_and_grad(f, x)[1]
    assert np.allclose(g, ad.fd_gradient(f, x, 1e-5), rtol=1e-6)


def test_broadcast_gradient_unbroadcasts():
    x = np.array([1.5, -0.5])
    w = np.arange(6.0).reshape(3, 2)
    g = ad.value_and_grad(lambda v: ad.sum(v * w), x)[1]
    np.testing.assert_array_equal(g, w.sum(axis=0))


def test_kink_derivatives_are_zero():
    assert ad.value_and_grad(lambda v: ad.sum(ad.relu(v)), np.array([0.0]))[1][0] == 0.0
    assert ad.value_and_grad(lambda v: ad.sum(ad.absolute(v)), np.array([0.0]))[1][0] == 0.0
    assert ad.jvp(ad.relu, np.array([0.0]), np.array([1.0]))[0] == 0.0


# --- jvp / jacobian


def test_jvp_identity_and_linear():
    v = np.array([0.2, -3.0])
    np.testing.assert_array_equal(ad.jvp(lambda y: y, np.ones(2), v), v)
    M = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(ad.jvp(lambda y: ad.matvec(M, y), np.ones(2), v), M @ v)


def test_jvp_shape_mismatch():
    with pytest.raises(ValueError):
        ad.jvp(lambda y: y, np.ones(2), np.ones(3))


def test_jvp_of_rk_step_matches_fd():
    sys = builtin("harmonic")
    f = lambda y: integ.ps_rk_step(sys.field, y, 0.3)  # noqa: E731
    y, v = np.array([0.4, -0.9]), np.array([1.0, 0.5])
    fd = (f(y + 1e-6 * v) - f(y - 1e-6 * v)) / 2e-6
    assert rel_err(ad.jvp(f, y, v), fd) < 1e-7


@given(alpha=finite, beta=finite)
def test_jvp_is_linear_in_tangent(alpha, beta):
    sys = builtin("modified_pendulum")
    f = lambda y: integ.ps_rk_step(sys.field, y, 0.2)  # noqa: E731
    y, u, v = np.array([0.7, 0.2]), np.array([1.0, -0.3]), np.array([0.1, 2.0])
    lhs = ad.jvp(f, y, alpha * u + beta * v)
    rhs = alpha * ad.jvp(f, y, u) + beta * ad.jvp(f, y, v)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_jacobian_examples():
    np.testing.assert_array_equal(ad.jacobian(lambda y: y, np.array([1.0, 2.0])), np.eye(2))
    sys = builtin("harmonic")
    np.testing.assert_array_equal(ad.jacobian(sys.field, np.array([0.3, 0.4])), [[0, -1], [1, 0]])


def test_rk_step_jacobian_determinant_is_nearly_one():
    sys = builtin("pendulum")
    dets = []
    for h in (0.2, 0.1):
        M = ad.jacobian(lambda y: integ.ps_rk_step(sys.field, y, h), np.array([0.5, 1.0]))
        dets.append(abs(np.linalg.det(M) - 1.0))
    assert dets[0] < 1e-7
    assert dets[1] < dets[0] / 100  # high-order decay


def test_jacobian_matches_fd_jacobian():
    sys = builtin("galactic")
    y = np.array([0.1, -0.4, 0.8, 0.3])
    np.testing.assert_allclose(ad.jacobian(sys.field, y), ad.fd_jacobian(sys.field, y, 1e-6), atol=1e-8)


# --- fd oracle


def test_fd_gradient_examples():
    assert abs(ad.fd_gradient(lambda x: x * x, np.array(3.0), 1e-5) - 6.0) < 1e-9
    np.testing.assert_array_equal(ad.fd_gradient(lambda x: 1.0, np.zeros(3), 1e-5), np.zeros(3))
    with pytest.raises(ValueError):
        ad.fd_gradient(lambda x: x, np.zeros(1), 0.0)


def test_replay_reproduces_output():
    f = lambda v: ad.sum(ad.sin(v) * v) / (1.0 + ad.dot(v, v))  # noqa: E731
    x = np.array([0.3, 1.2, -0.7])
    out, tape = ad.record(f, x)
    assert tape.replay(x) == out
    x2 = np.array([1.0, 0.0, 2.0])
    assert tape.replay(x2) == f(x2)
    assert all(p < i for i, n in enumerate(tape.nodes) for p in n.parents)


def test_mixing_tapes_is_rejected():
    a = ad.Tape().leaf(np.array(1.0))
    b = ad.Tape().leaf(np.array(2.0))
    with pytest.raises(ValueError):
        a + b


def test_backend_switch():
    assert ad.backend(np.ones(2)) is ad.plain
    assert ad.backend(ad.Dual(np.ones(2), np.zeros(2))) is ad.traced
    with pytest.raises(ad.DomainError):
        ad.check_finite(np.array([np.nan]))
