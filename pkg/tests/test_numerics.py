import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import max_relative_error
from igdmrec import numerics as nx
from igdmrec.errors import DimensionError, NumericalError
from igdmrec.optim import Adam


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [0.25, 3.0]])
    tape = nx.Tape()
    out = nx.matmul(tape.constant(np.eye(2)), tape.constant(m))
    assert np.array_equal(out.value, m)


def test_tanh_zero_and_softmax_symmetry():
    tape = nx.Tape()
    assert np.array_equal(nx.tanh(tape.constant(np.zeros((2, 3)))).value, np.zeros((2, 3)))
    assert np.array_equal(nx.softmax_rows(tape.constant([[0.0, 0.0]])).value, [[0.5, 0.5]])


def test_shape_mismatch_names_both_shapes():
    tape = nx.Tape()
    with pytest.raises(DimensionError) as err:
        nx.matmul(tape.constant(np.ones((2, 3))), tape.constant(np.ones((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)
    with pytest.raises(DimensionError) as err:
        nx.add(tape.constant(np.ones((2, 3))), tape.constant(np.ones((3, 2))))
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(NumericalError):
        nx.as_matrix([[1.0, np.nan]])


def test_backward_xtx():
    tape = nx.Tape()
    x = tape.leaf(np.array([[1.0, 2.0]]), name="x")
    grads = tape.backward(nx.sum_(nx.mul(x, x)))
    assert np.array_equal(grads["x"], [[2.0, 4.0]])


def test_backward_requires_scalar():
    tape = nx.Tape()
    x = tape.leaf(np.ones((2, 2)), name="x")
    with pytest.raises(DimensionError):
        tape.backward(nx.mul(x, x))


def test_constant_loss_and_unreachable_leaf_get_zero_gradients():
    tape = nx.Tape()
    x = tape.leaf(np.ones((2, 2)), name="x")
    y = tape.leaf(np.ones((1, 3)), name="y")
    loss = nx.sum_(nx.mul(x, x))
    grads = tape.backward(loss)
    assert np.array_equal(grads["y"], np.zeros((1, 3)))
    tape2 = nx.Tape()
    z = tape2.leaf(np.ones((2, 2)), name="z")
    c = nx.sum_(tape2.constant(np.ones((2, 2))))
    assert np.array_equal(tape2.backward(c)["z"], np.zeros((2, 2)))


def test_sum_matmul_gradient_pattern():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    tape = nx.Tape()
    A = tape.leaf(a, name="A")
    B = tape.leaf(b, name="B")
    grads = tape.backward(nx.sum_(nx.matmul(A, B)))
    assert np.allclose(grads["A"], np.ones((3, 2)) @ b.T)
    assert max_relative_error(lambda t, p: nx.sum_(nx.matmul(p["A"], p["B"])), {"A": a, "B": b}) < 1e-4


UNARY = {
    "tanh": nx.tanh,
    "sigmoid": nx.sigmoid,
    "log_sigmoid": nx.log_sigmoid,
    "exp": nx.exp,
    "log": lambda v: nx.log(nx.add(nx.mul(v, v), 1.0)),
    "l2norm_rows": nx.l2norm_rows,
    "softmax_rows": nx.softmax_rows,
    "transpose": nx.transpose,
    "neg": nx.neg,
    "scale": lambda v: nx.scale(v, -1.7),
    "sum_axis0": lambda v: nx.sum_(v, axis=0),
    "sum_axis1": lambda v: nx.sum_(v, axis=1),
    "take_rows": lambda v: nx.take_rows(v, np.array([0, 2, 0, 1])),
    "split": lambda v: nx.mul(*nx.split(v, [2, 2], axis=1)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_primitive_gradients(name):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    fn = UNARY[name]

    def build(tape, p):
        out = fn(p["x"])
        weight = np.random.default_rng(list(out.shape)).normal(size=out.shape)
        return nx.sum_(nx.mul(out, tape.constant(weight)))

    assert max_relative_error(build, {"x": x}) < 1e-4


def test_binary_broadcast_gradients():
    rng = np.random.default_rng(2)
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(1, 4)), "c": rng.uniform(1, 2, size=(3, 1))}

    def build(tape, p):
        x = nx.add(p["a"], p["b"])
        x = nx.mul(x, p["c"])
        x = nx.sub(x, p["b"])
        x = nx.div(x, p["c"])
        return nx.sum_(nx.tanh(nx.concat([x, p["a"]], axis=1)))

    assert max_relative_error(build, params) < 1e-4


def test_spmm_gradient():
    rng = np.random.default_rng(3)
    m = sp.random(5, 4, density=0.5, random_state=3, format="csr")
    params = {"x": rng.normal(size=(4, 3))}
    assert max_relative_error(lambda t, p: nx.sum_(nx.tanh(nx.spmm(m, p["x"]))), params) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_random_graph_gradients(n, d, k, seed):
    rng = np.random.default_rng(seed)
    params = {"W": rng.normal(size=(d, k)), "b": rng.normal(size=(1, k))}
    x = rng.normal(size=(n, d))

    def build(tape, p):
        h = nx.tanh(nx.add(nx.matmul(tape.constant(x), p["W"]), p["b"]))
        s = nx.softmax_rows(h)
        return nx.sum_(nx.mul(nx.log(s), nx.sigmoid(h)))

    assert max_relative_error(build, params) < 1e-4


def test_tape_determinism():
    def run():
        rng = np.random.default_rng(11)
        tape = nx.Tape()
        w = tape.leaf(rng.normal(size=(6, 5)), name="w")
        loss = nx.sum_(nx.softmax_rows(nx.matmul(tape.constant(rng.normal(size=(4, 6))), w)))
        return loss.value.copy(), tape.backward(loss)["w"]
    (l1, g1), (l2, g2) = run(), run()
    assert np.array_equal(l1, l2) and np.array_equal(g1, g2)


def test_xavier_bounds_and_determinism():
    w = nx.xavier_uniform(64, 64, np.random.default_rng(0))
    assert np.abs(w).max() <= np.sqrt(6 / 128)
    assert np.array_equal(w, nx.xavier_uniform(64, 64, np.random.default_rng(0)))
    one = nx.xavier_uniform(1, 1, np.random.default_rng(5))
    assert abs(one[0, 0]) <= np.sqrt(3)


def test_adam_first_step_closed_form():
    p = {"w": np.zeros((2, 3))}
    Adam(lr=0.001).update(p, {"w": np.ones((2, 3))})
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert np.allclose(p["w"], -0.001 / (1 + 1e-8), rtol=0, atol=1e-18)
    assert np.allclose(p["w"], -0.0009999999, atol=1e-12)


def test_adam_zero_gradient_is_fixed_point():
    p = {"w": np.array([[0.3, -1.2]])}
    opt = Adam()
    for _ in range(3):
        opt.update(p, {"w": np.zeros((1, 2))})
    assert np.array_equal(p["w"], [[0.3, -1.2]])


def test_adam_constant_gradient_steps_do_not_grow():
    p = {"w": np.zeros((1, 1))}
    opt = Adam()
    opt.update(p, {"w": np.full((1, 1), 0.7)})
    d1 = abs(p["w"][0, 0])
    before = p["w"][0, 0]
    opt.update(p, {"w": np.full((1, 1), 0.7)})
    d2 = abs(p["w"][0, 0] - before)
    assert d2 <= d1 * (1 + 1e-6)


def test_adam_rejects_nonfinite_gradient_with_diagnostics():
    opt = Adam()
    with pytest.raises(NumericalError, match="emb.*step 1"):
        opt.update({"emb": np.zeros((1, 2))}, {"emb": np.array([[np.inf, 0.0]])})
