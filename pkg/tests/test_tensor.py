import numpy as np
import pytest

from amortized_eig.tensor import PRIMITIVES, Graph, GradcheckFailure, ShapeError, Tensor, gradcheck, ops

TOL = 1e-4
rng = np.random.default_rng(7)


def _pos(*shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _lower(b, n):
    lo = np.tril(rng.standard_normal((b, n, n)) * 0.3)
    lo[:, np.arange(n), np.arange(n)] = rng.uniform(1.0, 2.0, size=(b, n))
    return lo


def _relu_point():
    x = rng.standard_normal((3, 4))
    x[np.abs(x) < 0.05] = 0.3  # keep away from the kink
    return x


# (primitive, inputs, attrs, wrt)
CASES = [
    ("add", [rng.standard_normal((3, 4)), rng.standard_normal(4)], {}, None),
    ("subtract", [rng.standard_normal((3, 1)), rng.standard_normal((1, 4))], {}, None),
    ("multiply", [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))], {}, None),
    ("divide", [rng.standard_normal((2, 3)), _pos(2, 3)], {}, None),
    ("negate", [rng.standard_normal(5)], {}, None),
    ("exp", [rng.standard_normal(5)], {}, None),
    ("log", [_pos(5)], {}, None),
    ("sqrt", [_pos(5)], {}, None),
    ("tanh", [rng.standard_normal(5)], {}, None),
    ("relu", [_relu_point()], {}, None),
    ("softplus", [rng.standard_normal(6) * 3], {}, None),
    ("sigmoid", [rng.standard_normal(6) * 3], {}, None),
    ("matmul", [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))], {}, None),
    ("sum", [rng.standard_normal((3, 4))], {"axis": 1}, None),
    ("mean", [rng.standard_normal((3, 4))], {"axis": 0, "keepdims": True}, None),
    ("softmax", [rng.standard_normal((3, 5))], {}, None),
    ("cumsum", [rng.standard_normal((2, 5))], {}, None),
    ("concatenate", [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))], {"axis": -1}, None),
    ("slice", [rng.standard_normal((4, 5))], {"index": (slice(1, 3), slice(None, None, 2))}, None),
    ("reshape", [rng.standard_normal((2, 6))], {"shape": (3, 4)}, None),
    ("transpose", [rng.standard_normal((2, 3, 4))], {"axes": (2, 0, 1)}, None),
    ("gather", [rng.standard_normal((3, 4))], {"index": np.array([3, 0, 0, 2])}, None),
    ("take_along", [rng.standard_normal((3, 4))], {"index": np.array([[1], [3], [1]])}, None),
    ("attention", [rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4)),
                   rng.standard_normal((2, 3, 4))], {}, None),
    ("dropout", [rng.standard_normal((3, 4))], {"mask": (rng.random((3, 4)) < 0.7) / 0.7}, None),
    ("tri_solve", [_lower(2, 3), rng.standard_normal((2, 3))], {}, None),
]


def test_every_primitive_is_covered():
    assert {c[0] for c in CASES} == set(PRIMITIVES)


@pytest.mark.parametrize("op,point,attrs,wrt", CASES, ids=[c[0] for c in CASES])
def test_gradcheck(op, point, attrs, wrt):
    assert gradcheck(op, point, attrs=attrs, wrt=wrt) < TOL


def test_batched_matmul_gradcheck():
    a = rng.standard_normal((2, 3, 4))
    assert gradcheck("matmul", [a, rng.standard_normal((4, 5))]) < TOL
    assert gradcheck("matmul", [a, rng.standard_normal((2, 4, 2))]) < TOL


def test_gradcheck_rejects_non_finite_input():
    with pytest.raises(GradcheckFailure):
        gradcheck("log", [np.array([np.nan, 1.0])])


def test_fan_out_accumulates():
    g = Graph()
    x = g.leaf(np.array([1.5, -2.0]))
    y = ops.sum(ops.add(ops.multiply(x, x), ops.multiply(3.0, x)))
    g.backward(y)
    np.testing.assert_allclose(g.grad(x), 2 * x.data + 3.0)


def test_dropout_eval_is_identity():
    x = Tensor(rng.standard_normal((4, 3)))
    assert ops.dropout(x, 0.5, None, training=False) is x


def test_dropout_train_scaling():
    x = Tensor(np.ones((200, 200)))
    out = ops.dropout(x, 0.25, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert abs(out.mean() - 1.0) < 0.02


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    g = Graph()
    x = g.leaf(np.ones(3))
    with pytest.raises(ShapeError):
        g.backward(ops.multiply(x, 2.0))


def test_constants_record_nothing():
    y = ops.exp(Tensor(np.zeros(3)))
    assert y.graph is None and not y.requires_grad
