import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from deceptlens import autodiff as ad
from deceptlens.autodiff import Tensor
from deceptlens.errors import DomainError, ShapeError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def _t(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def test_matmul_values():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])
    X = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(X)).data, X)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradcheck(rng):
    A, B = _t(rng, 4, 3, name="A"), _t(rng, 3, 5, name="B")
    errs = ad.gradcheck(lambda: ad.sum(ad.matmul(A, B)), [A, B])
    assert max(errs.values()) < 1e-4


def test_matmul_backward_formula(rng):
    A, B = _t(rng, 4, 3), _t(rng, 3, 5)
    G = rng.normal(size=(4, 5))
    ad.matmul(A, B).backward(G)
    np.testing.assert_allclose(A.grad, G @ B.data.T, rtol=1e-13)
    np.testing.assert_allclose(B.grad, A.data.T @ G, rtol=1e-13)


def test_batched_matmul_broadcast_gradcheck(rng):
    W = _t(rng, 3, 4, name="W")
    X = _t(rng, 2, 4, 5, name="X")
    errs = ad.gradcheck(lambda: ad.sum(ad.tanh(ad.matmul(W, X))), [W, X])
    assert max(errs.values()) < 1e-4


def test_activation_values():
    assert ad.tanh(Tensor(0.0)).data == 0.0
    assert ad.sigmoid(Tensor(0.0)).data == 0.5
    assert ad.relu(Tensor(-3.0)).data == 0.0
    big = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.0 and big[1] == 1.0


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
def test_tanh_range(x):
    y = ad.tanh(Tensor(x)).data
    assert np.all(y >= -1) and np.all(y <= 1)
    # strictly inside for moderate inputs
    assert np.all(np.abs(y[np.abs(x) < 15]) < 1)


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "relu", "linear"])
def test_activation_gradcheck(rng, name):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    X = Tensor(x, name="x")
    errs = ad.gradcheck(lambda: ad.sum(ad.mul(ad.elementwise(name, X), Tensor(np.arange(12.0).reshape(3, 4)))), [X])
    assert errs["x"] < 1e-4


def test_local_derivatives(rng):
    x = rng.normal(size=7)
    for name, deriv in [
        ("tanh", lambda v: 1 - np.tanh(v) ** 2),
        ("sigmoid", lambda v: (1 / (1 + np.exp(-v))) * (1 - 1 / (1 + np.exp(-v)))),
        ("relu", lambda v: (v > 0).astype(float)),
    ]:
        X = Tensor(x.copy(), requires_grad=True)
        ad.sum(ad.elementwise(name, X)).backward()
        np.testing.assert_allclose(X.grad, deriv(x), rtol=1e-12)


def test_unknown_activation():
    with pytest.raises(ValueError):
        ad.elementwise("gelu", Tensor(1.0))


def test_softmax_examples():
    np.testing.assert_array_equal(ad.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    for v in (-1e6, 0.0, 3.7, 1e6):
        assert ad.softmax(Tensor([[v]])).data[0, 0] == 1.0
    with pytest.raises(ShapeError):
        ad.softmax(Tensor(np.zeros((1, 0))))


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=finite), finite)
def test_softmax_sum_and_shift(x, c):
    y = ad.softmax(Tensor(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(ad.softmax(Tensor(x + c)).data, y, atol=1e-9)


def test_softmax_mask_excludes_positions(rng):
    x = rng.normal(size=(2, 5))
    mask = np.array([[1, 1, 0, 1, 0], [0, 0, 0, 0, 1]], dtype=bool)
    y = ad.softmax(Tensor(x), mask=mask).data
    assert np.all(y[~mask] == 0.0)
    np.testing.assert_allclose(y.sum(-1), 1.0, atol=1e-12)
    ref = np.exp(x[0, mask[0]]) / np.exp(x[0, mask[0]]).sum()
    np.testing.assert_allclose(y[0, mask[0]], ref, rtol=1e-12)


def test_softmax_gradcheck(rng):
    X = _t(rng, 3, 5, name="x")
    probe = Tensor(rng.normal(size=(3, 5)))
    mask = np.array([1, 0, 1, 1, 1], dtype=bool)
    errs = ad.gradcheck(lambda: ad.sum(ad.mul(ad.softmax(X, mask=mask), probe)), [X])
    assert errs["x"] < 1e-4


def test_mean_pool_examples():
    x = Tensor([[1.0, 3.0], [2.0, 4.0]])
    np.testing.assert_array_equal(ad.mean_pool(x, [True, True]).data, [[2.0, 3.0]])
    np.testing.assert_array_equal(ad.mean_pool(x, [False, True]).data, [[3.0, 4.0]])
    with pytest.raises(DomainError):
        ad.mean_pool(x, [False, False])


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 4), st.integers(0, 10**6))
def test_mean_pool_ignores_pad_columns(d, n, pads, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(d, n))
    padded = np.concatenate([x, r.normal(size=(d, pads))], axis=1)
    mask = np.r_[np.ones(n, bool), np.zeros(pads, bool)]
    np.testing.assert_allclose(ad.mean_pool(Tensor(padded), mask).data, x.mean(axis=1)[None], rtol=1e-12, atol=1e-15)


def test_mean_pool_gradcheck(rng):
    X = _t(rng, 2, 4, 5, name="x")
    mask = np.array([[1, 1, 0, 1, 0], [1, 0, 0, 0, 0]], dtype=bool)
    probe = Tensor(rng.normal(size=(2, 1, 4)))
    errs = ad.gradcheck(lambda: ad.sum(ad.mul(ad.mean_pool(X, mask), probe)), [X])
    assert errs["x"] < 1e-4


def test_layer_norm_normalises_columns(rng):
    x = rng.normal(3.0, 5.0, size=(2, 6, 4))
    y = ad.layer_norm(Tensor(x), Tensor(np.ones((6, 1))), Tensor(np.zeros((6, 1))), 1e-5).data
    np.testing.assert_allclose(y.mean(axis=-2), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-2), 1.0, atol=1e-5)  # eps shrinks the variance slightly


def test_layer_norm_gradcheck(rng):
    X, g, b = _t(rng, 2, 5, 3, name="x"), _t(rng, 5, 1, name="g"), _t(rng, 5, 1, name="b")
    probe = Tensor(rng.normal(size=(2, 5, 3)))
    errs = ad.gradcheck(lambda: ad.sum(ad.mul(ad.layer_norm(X, g, b), probe)), [X, g, b])
    assert max(errs.values()) < 1e-4


def test_embedding_lookup_and_scatter_gradient():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    ids = np.array([[1, 3, 1]])
    e = ad.embedding(table, ids)
    assert e.shape == (1, 3, 3)
    np.testing.assert_array_equal(e.data[0, :, 0], [3.0, 4.0, 5.0])
    ad.sum(e).backward()
    np.testing.assert_array_equal(table.grad[:, 0], [0.0, 2.0, 0.0, 1.0])


def test_embedding_gradcheck(rng):
    table = _t(rng, 6, 4, name="table")
    ids = np.array([[0, 2, 2, 5], [1, 1, 3, 0]])
    probe = Tensor(rng.normal(size=(2, 4, 4)))
    errs = ad.gradcheck(lambda: ad.sum(ad.mul(ad.embedding(table, ids), probe)), [table])
    assert errs["table"] < 1e-4


def test_reshape_concat_transpose_gradcheck(rng):
    A, B = _t(rng, 2, 3, name="A"), _t(rng, 2, 2, name="B")
    probe = Tensor(rng.normal(size=(5, 2)))

    def loss():
        return ad.sum(ad.mul(ad.transpose(ad.concat([A, B], axis=-1)), probe))

    assert max(ad.gradcheck(loss, [A, B]).values()) < 1e-4
    R = _t(rng, 2, 6, name="R")
    assert ad.gradcheck(lambda: ad.sum(ad.tanh(ad.reshape(R, (3, 4)))), [R])["R"] < 1e-4


def test_mean_and_sub_gradcheck(rng):
    A, B = _t(rng, 3, 4, name="A"), _t(rng, 1, 4, name="B")
    errs = ad.gradcheck(lambda: ad.mean(ad.mul(A - B, A - B)), [A, B])
    assert max(errs.values()) < 1e-4


def test_bce_values_and_clamp():
    p = Tensor(np.array([0.5, 0.5]), requires_grad=True)
    loss = ad.binary_cross_entropy(p, [0, 1])
    assert abs(float(loss.data) - np.log(2)) < 1e-15
    q = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    loss = ad.binary_cross_entropy(q, [1, 0])
    assert abs(float(loss.data) + np.log(1e-7)) < 1e-9
    loss.backward()
    # clamped region passes no gradient
    np.testing.assert_array_equal(q.grad, [0.0, 0.0])


def test_bce_gradcheck(rng):
    logits = _t(rng, 6, name="z")
    y = np.array([0, 1, 1, 0, 1, 0])
    w = np.array([1.2, 0.8, 0.8, 1.2, 0.8, 1.2])
    errs = ad.gradcheck(lambda: ad.binary_cross_entropy(ad.sigmoid(logits), y, w), [logits])
    assert errs["z"] < 1e-4


def test_backward_requires_scalar_without_seed(rng):
    with pytest.raises(ShapeError):
        _t(rng, 2, 2).backward()


def test_gradient_accumulates_over_shared_use(rng):
    x = Tensor(np.array(3.0), requires_grad=True)
    (x * x + x).backward()
    assert x.grad == 7.0


def test_no_grad_records_nothing(rng):
    x = _t(rng, 3)
    with ad.no_grad():
        y = ad.tanh(x)
    assert not y.requires_grad and y._parents == ()


def test_relative_error_floor_handles_zero_gradients():
    assert ad.relative_error(np.zeros(3), np.full(3, 1e-11)) < 1e-4
    assert ad.relative_error(np.ones(3), np.ones(3)) == 0.0
    assert ad.relative_error([1.0], [2.0]) == 0.5


def test_forward_is_deterministic(rng):
    x = rng.normal(size=(4, 6))
    a = ad.softmax(ad.tanh(Tensor(x))).data
    b = ad.softmax(ad.tanh(Tensor(x.copy()))).data
    assert np.array_equal(a, b)
