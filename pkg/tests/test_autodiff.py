import numpy as np
import pytest

from glpn import autodiff as ad
from glpn.errors import ContractError, DimensionError


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (f(up) - f(dn)) / (2 * h)
    return g


def test_quadratic_gradient():
    tape = ad.Tape()
    x = tape.param([[1.0], [2.0]], name="x")
    grads = ad.backward(x.T @ x)
    assert np.array_equal(grads["x"], [[2.0], [4.0]])


def test_constant_loss_and_norm_squared():
    tape = ad.Tape()
    w = tape.param(np.arange(6.0).reshape(2, 3), name="w")
    c = tape.const([[3.0]])
    g = ad.backward(c + ad.scale(ad.masked_sse(w, np.zeros((2, 3)), np.ones((2, 3))), 0.0))
    assert np.all(g["w"] == 0)
    tape = ad.Tape()
    w = tape.param(np.arange(6.0).reshape(2, 3), name="w")
    g = ad.backward(ad.masked_sse(w, np.zeros((2, 3)), np.ones((2, 3))))
    assert np.array_equal(g["w"], 2 * np.arange(6.0).reshape(2, 3))


def composite(tape, w1, w2, x, a):
    h = ad.tanh(tape.const(a) @ tape.const(x) @ w1)
    s = ad.row_softmax(h @ w2)
    pooled = s.T @ h
    out = ad.sigmoid(s @ pooled) * 2.0 + ad.relu(h) - h * h
    return ad.masked_sse(out, np.ones(out.shape), (np.arange(out.value.size).reshape(out.shape) % 3 != 0) * 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_composite_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((6, 6))
    x = rng.normal(size=(6, 3))
    w1, w2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

    def value(p1, p2):
        tape = ad.Tape()
        return float(composite(tape, tape.param(p1), tape.param(p2), x, a).value[0, 0])

    tape = ad.Tape()
    v1, v2 = tape.param(w1, name="w1"), tape.param(w2, name="w2")
    grads = ad.backward(composite(tape, v1, v2, x, a))
    for name, p, f in (("w1", w1, lambda q: value(q, w2)), ("w2", w2, lambda q: value(w1, q))):
        num = fd_grad(f, p)
        # relu kinks are measure-zero for Gaussian inputs
        assert np.allclose(grads[name], num, rtol=1e-4, atol=1e-6)


def test_shared_node_accumulates():
    tape = ad.Tape()
    x = tape.param([[3.0]], name="x")
    y = x * x + x
    assert ad.backward(y)["x"][0, 0] == 7.0


def test_errors():
    tape = ad.Tape()
    with pytest.raises(DimensionError):
        tape.const(np.ones((2, 3))) @ tape.const(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        tape.const(np.ones((2, 3))) + tape.const(np.ones((3, 2)))
    with pytest.raises(ContractError):
        ad.backward(tape.param(np.ones((2, 2))))
    with pytest.raises(ContractError):
        ad.activation("swish")


def test_backward_is_repeatable():
    tape = ad.Tape()
    w = tape.param(np.ones((2, 2)), name="w")
    loss = ad.masked_sse(w @ w, np.zeros((2, 2)), np.ones((2, 2)))
    assert np.array_equal(ad.backward(loss)["w"], ad.backward(loss)["w"])


def test_adam_zero_gradient_and_first_step():
    p = {"a": np.array([[1.0]])}
    st = ad.AdamState(lr=0.01)
    assert ad.adam_step(p, {"a": np.zeros((1, 1))}, st)["a"][0, 0] == 1.0
    st = ad.AdamState(lr=0.01)
    out = ad.adam_step(p, {"a": np.ones((1, 1))}, st)
    assert out["a"][0, 0] == pytest.approx(1.0 - 0.01, abs=1e-9)


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(0)
    target = rng.normal(size=(3, 2))
    params = {"w": np.zeros((3, 2))}
    st = ad.AdamState(lr=0.1)

    def loss_and_grad(p):
        tape = ad.Tape()
        w = tape.param(p["w"], name="w")
        loss = ad.masked_sse(w, target, np.ones((3, 2)))
        return float(loss.value[0, 0]), ad.backward(loss)

    first, _ = loss_and_grad(params)
    for _ in range(200):
        _, g = loss_and_grad(params)
        params = ad.adam_step(params, g, st)
    assert loss_and_grad(params)[0] < 1e-4 * first


def test_adam_frozen_and_shape_check():
    p = {"a": np.ones((2, 1)), "b": np.ones((1, 1))}
    out = ad.adam_step(p, {"a": np.ones((2, 1)), "b": np.ones((1, 1))}, ad.AdamState(), frozen={"b"})
    assert out["b"][0, 0] == 1.0 and out["a"][0, 0] < 1.0
    with pytest.raises(DimensionError):
        ad.adam_step(p, {"a": np.ones((1, 2))}, ad.AdamState())
