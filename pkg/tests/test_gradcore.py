import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

import mocapvi.camera  # noqa: F401  (registers rodrigues/project)
import mocapvi.kinematics  # noqa: F401  (registers forward_kinematics)
from mocapvi import gradcore as gc
from mocapvi.gradcore import PRIMITIVES, NonFiniteError, ParamVector, Tape
from helpers import chain_model

H = 1e-5


CHAIN = chain_model()


def _spd(rng, n=3, batch=()):
    a = rng.normal(size=batch + (n, n))
    return a @ np.swapaxes(a, -1, -2) + n * np.eye(n)


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 2.0, size=shape)


# Each generator returns (args, kwargs, indices of differentiable positional args).
GENERATORS = {
    "add": lambda r: ((r.normal(size=(2, 3)), r.normal(size=3)), {}, (0, 1)),
    "sub": lambda r: ((r.normal(size=(2, 3)), r.normal(size=(2, 1))), {}, (0, 1)),
    "mul": lambda r: ((r.normal(size=(2, 3)), r.normal(size=3)), {}, (0, 1)),
    "div": lambda r: ((r.normal(size=(2, 3)), _away_from_zero(r, (2, 3))), {}, (0, 1)),
    "neg": lambda r: ((r.normal(size=4),), {}, (0,)),
    "power": lambda r: ((r.uniform(0.5, 2.0, size=4),), {"p": 1.7}, (0,)),
    "square": lambda r: ((r.normal(size=4),), {}, (0,)),
    "matmul": lambda r: ((r.normal(size=(2, 3, 4)), r.normal(size=(4, 2))), {}, (0, 1)),
    "sum": lambda r: ((r.normal(size=(2, 3)),), {"axis": 1, "keepdims": False}, (0,)),
    "reshape": lambda r: ((r.normal(size=(2, 3)),), {"shape": (3, 2)}, (0,)),
    "swapaxes": lambda r: ((r.normal(size=(2, 3, 4)), 0, 2), {}, (0,)),
    "getitem": lambda r: ((r.normal(size=(4, 3)),), {"idx": (np.array([0, 2, 2]), slice(1, 3))},
                          (0,)),
    "concatenate": lambda r: ((r.normal(size=(2, 3)), r.normal(size=(1, 3))), {"axis": 0},
                              (0, 1)),
    "stack": lambda r: ((r.normal(size=3), r.normal(size=3)), {"axis": 1}, (0, 1)),
    "exp": lambda r: ((r.normal(size=4),), {}, (0,)),
    "log": lambda r: ((r.uniform(0.2, 3.0, size=4),), {}, (0,)),
    "log1p": lambda r: ((r.uniform(-0.5, 3.0, size=4),), {}, (0,)),
    "sqrt": lambda r: ((r.uniform(0.2, 3.0, size=4),), {}, (0,)),
    "tanh": lambda r: ((r.normal(size=4),), {}, (0,)),
    "sin": lambda r: ((r.normal(size=4),), {}, (0,)),
    "cos": lambda r: ((r.normal(size=4),), {}, (0,)),
    "softplus": lambda r: ((r.normal(size=4) * 3,), {}, (0,)),
    "relu": lambda r: ((_away_from_zero(r, (5,)),), {}, (0,)),
    "norm": lambda r: ((r.normal(size=(3, 2)) + 0.5,), {"axis": -1}, (0,)),
    "logdet_spd": lambda r: ((_spd(r, 3, (2,)),), {}, (0,)),
    "rodrigues": lambda r: ((r.normal(size=3) * r.choice([1e-5, 0.3, 1.5]),), {}, (0,)),
    "project": lambda r: (
        (r.normal(size=(4, 3)) * 0.3 + [0, 0, 3], mocapvi.camera.rodrigues(r.normal(size=3) * 0.2),
         r.normal(size=3) * 0.1),
        {"intr": np.array([900.0, 950.0, 320.0, 240.0]),
         "dist": np.array([-0.2, 0.05, 1e-3, -2e-3, 0.01])}, (0, 1, 2)),
    "forward_kinematics": lambda r: (
        (r.normal(size=(3, CHAIN.n_dof)) * 0.5,
         CHAIN.default_beta + r.normal(size=CHAIN.n_beta) * 0.05),
        {"arrays": CHAIN.arrays()}, (0, 1)),
}


def _directional_check(prim, args, kw, diff, rng):
    """Compare <g, J v> from central differences with <vjp(g), v>."""
    out = prim.fwd(*args, **kw)
    g = rng.normal(size=np.shape(out))
    cot = prim.bwd(g, out, *args, **kw)
    for i in diff:
        v = rng.normal(size=np.shape(args[i]))
        if prim.name == "logdet_spd":
            v = 0.5 * (v + np.swapaxes(v, -1, -2))  # stay on symmetric matrices
        plus = list(args)
        minus = list(args)
        plus[i] = args[i] + H * v
        minus[i] = args[i] - H * v
        fd = np.sum(g * (prim.fwd(*plus, **kw) - prim.fwd(*minus, **kw))) / (2 * H)
        ad = np.sum(np.asarray(cot[i]) * v)
        assert abs(fd - ad) <= 1e-5 * max(abs(fd), abs(ad), 1e-3), (prim.name, i, fd, ad)


def test_every_primitive_has_a_generator():
    assert set(PRIMITIVES) <= set(GENERATORS), set(PRIMITIVES) - set(GENERATORS)


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_primitive_vjp_matches_finite_differences(name):
    prim = PRIMITIVES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(100):
        args, kw, diff = GENERATORS[name](rng)
        _directional_check(prim, args, kw, diff, rng)


def test_grad_square():
    _, g = gc.value_and_grad(lambda p: gc.square(p["x"]).sum(), np.array([3.0]))
    assert g.values[0] == 6.0


def test_grad_product():
    pv = ParamVector.from_groups({"x": np.array(2.0), "y": np.array(5.0)})
    g = gc.grad(lambda p: p["x"] * p["y"], pv)
    assert g["x"] == 5.0 and g["y"] == 2.0
    assert g.layout == pv.layout


def _mlp_loss(p):
    h = gc.tanh(gc.matmul(p["x"], p["W0"]) + p["b0"])
    return gc.sum_(gc.square(gc.matmul(h, p["W1"]) + p["b1"]))


def test_mlp_gradient_vs_finite_differences():
    rng = np.random.default_rng(3)
    pv = ParamVector.from_groups({"x": rng.normal(size=(5, 4)), "W0": rng.normal(size=(4, 8)),
                                  "b0": rng.normal(size=8), "W1": rng.normal(size=(8, 2)),
                                  "b1": rng.normal(size=2)})
    g = gc.grad(_mlp_loss, pv)
    fd = np.empty(pv.size)
    for i in range(pv.size):
        a, b = pv.values.copy(), pv.values.copy()
        a[i] += 1e-5
        b[i] -= 1e-5
        fd[i] = (_mlp_loss(pv.with_values(a).groups()) - _mlp_loss(pv.with_values(b).groups())) / 2e-5
    rel = np.abs(fd - g.values) / np.maximum(np.abs(fd), 1e-6)
    assert rel.max() <= 1e-5


def test_jacobian_identity_and_linear():
    x = np.array([1.0, -2.0, 0.5])
    assert_allclose(gc.jacobian(lambda p: p["x"] * 1.0, x), np.eye(3))
    A = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(gc.jacobian(lambda p: gc.matmul(A, p["x"]), x), A)


def test_jacobian_rows_are_gradients():
    rng = np.random.default_rng(0)
    x = rng.normal(size=4)

    def g(p):
        return gc.stack([gc.sum_(gc.sin(p["x"])), gc.sum_(gc.square(p["x"]))])

    jac = gc.jacobian(g, x)
    assert_allclose(jac[0], np.cos(x), rtol=1e-14)
    assert_allclose(jac[1], 2 * x, rtol=1e-14)


def test_nonfinite_forward_names_node():
    with pytest.raises(NonFiniteError) as err:
        gc.grad(lambda p: gc.sum_(gc.log(p["x"])), np.array([1.0, -1.0]))
    assert err.value.name == "log"
    assert "log" in str(err.value)


def test_nonfinite_gradient_names_node():
    # sqrt(0) is finite but its derivative is not
    with pytest.raises(NonFiniteError) as err:
        gc.grad(lambda p: gc.sum_(gc.sqrt(p["x"])), np.array([0.0, 1.0]))
    assert err.value.name == "sqrt"


def test_replay_reproduces_forward_bitwise():
    rng = np.random.default_rng(1)
    tape = Tape()
    x = tape.leaf(rng.normal(size=(3, 4)))
    W = tape.leaf(rng.normal(size=(4, 2)))
    y = gc.sum_(gc.softplus(gc.matmul(x, W)))
    vals = tape.replay()
    assert len(vals) == len(tape)
    assert np.array_equal(vals[y.idx], y.value)


def test_param_vector_layout_invariants():
    pv = ParamVector.from_groups({"a": np.zeros((2, 3)), "b": np.ones(4)})
    assert pv.size == 10
    assert pv.slice("b") == slice(6, 10)
    with pytest.raises(ValueError):
        ParamVector(np.zeros(5), {"a": (0, 3, (3,)), "b": (4, 5, (1,))})


def test_grad_is_deterministic():
    rng = np.random.default_rng(2)
    pv = ParamVector.from_groups({"x": rng.normal(size=(6, 4)), "W0": rng.normal(size=(4, 16)),
                                  "b0": rng.normal(size=16), "W1": rng.normal(size=(16, 3)),
                                  "b1": rng.normal(size=3)})
    assert np.array_equal(gc.grad(_mlp_loss, pv).values, gc.grad(_mlp_loss, pv).values)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_grad_is_linear(a, b, seed):
    x = np.random.default_rng(seed).normal(size=5)

    def f(p):
        return gc.sum_(gc.sin(p["x"]) * p["x"])

    def g(p):
        return gc.sum_(gc.exp(p["x"] * 0.3))

    lhs = gc.grad(lambda p: a * f(p) + b * g(p), x).values
    rhs = a * gc.grad(f, x).values + b * gc.grad(g, x).values
    assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
