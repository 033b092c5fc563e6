import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from mtsimplify import autodiff as ad
from mtsimplify.autodiff import ContractError, ShapeError, Tape, Tensor


def param(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def grad_of(f, *params):
    with Tape() as tape:
        loss = f()
    ad.backward(loss, tape)
    return [p.grad for p in params]


def test_matmul_hand_case():
    out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_hand_case():
    out = ad.softmax(Tensor([np.log(2.0), 0.0]))
    np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_is_shift_stable():
    out = ad.softmax(Tensor([1000.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_softmax_mask_and_empty():
    out = ad.softmax(Tensor([[1.0, 2.0, 3.0]]), mask=np.array([[True, True, False]]))
    assert out.data[0, 2] == 0.0
    np.testing.assert_allclose(out.data.sum(), 1.0)
    with pytest.raises(ShapeError):
        ad.softmax(Tensor(np.zeros((2, 0))))


def test_sigmoid_derivative_at_zero():
    x = param(0.0)
    (g,) = grad_of(lambda: ad.sigmoid(x), x)
    assert g == pytest.approx(0.25)


def test_tanh_sigmoid_values():
    x = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(ad.tanh(Tensor(x)).data, np.tanh(x))
    np.testing.assert_allclose(ad.sigmoid(Tensor(x)).data, 1 / (1 + np.exp(-x)))


def test_clip_by_global_norm_hand_case():
    clipped, norm = ad.clip_by_global_norm([np.array([3.0, 4.0])], 2.0)
    assert norm == 5.0
    np.testing.assert_allclose(clipped[0], [1.2, 1.6])


def test_clip_leaves_small_gradients_alone():
    g = [np.array([0.3, 0.4])]
    clipped, _ = ad.clip_by_global_norm(g, 2.0)
    np.testing.assert_array_equal(clipped[0], g[0])


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)), st.floats(0.1, 10))
def test_clip_is_idempotent(g, max_norm):
    once, _ = ad.clip_by_global_norm([g], max_norm)
    twice, _ = ad.clip_by_global_norm(once, max_norm)
    np.testing.assert_allclose(twice[0], once[0], rtol=1e-12, atol=1e-300)
    assert np.linalg.norm(once[0]) <= max_norm * (1 + 1e-12)


def test_finite_diff_self_check_on_square():
    x = param(3.0)
    err = ad.finite_diff_check(lambda: ad.mul(x, x), [x])
    assert err < 1e-6


def test_backward_requires_scalar_on_tape():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        ad.backward(y, tape)
    with pytest.raises(ContractError):
        ad.backward(ad.sum_(Tensor([1.0])), tape)


def test_no_graph_outside_tape():
    x = param([1.0])
    with Tape() as tape:
        pass
    y = ad.mul(x, 3.0)
    assert len(tape) == 0 and y not in tape


def test_leaf_grads_accumulate_until_zeroed():
    x = param(2.0)
    for _ in range(2):
        with Tape() as tape:
            loss = ad.mul(x, 3.0)
        ad.backward(loss, tape)
    assert x.grad == pytest.approx(6.0)
    ad.zero_grad([x])
    assert x.grad is None


def test_scatter_add_accumulates_repeated_ids():
    src = param([[0.2, 0.3, 0.5]])
    out = ad.scatter_add(src, np.array([[1, 1, 0]]), 3)
    np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.0]])
    w = Tensor([[1.0, 2.0, 3.0]])
    (g,) = grad_of(lambda: ad.sum_(ad.mul(ad.scatter_add(src, np.array([[1, 1, 0]]), 3), w)), src)
    np.testing.assert_allclose(g, [[2.0, 2.0, 1.0]])


def test_embedding_range_check():
    with pytest.raises(ContractError):
        ad.embedding(param(np.zeros((3, 2))), np.array([3]))


def test_sqrt_safe_zero_gradient_at_origin():
    x = param([0.0, 0.0])
    (g,) = grad_of(lambda: ad.sqrt_safe(ad.sum_(ad.mul(x, x))), x)
    np.testing.assert_array_equal(g, [0.0, 0.0])


def _composite(kind, rng):
    """A random small graph and its parameters for gradient checking."""
    a = param(rng.normal(size=(3, 4)))
    b = param(rng.normal(size=(4, 2)))
    c = param(rng.normal(size=(2, 3)))
    ids = rng.integers(0, 3, size=(2, 3))
    if kind == 0:
        return (lambda: ad.sum_(ad.tanh(ad.matmul(a, b)))), [a, b]
    if kind == 1:
        return (lambda: ad.sum_(ad.mul(ad.softmax(ad.matmul(a, b)), Tensor(rng_w)))), [a, b]
    if kind == 2:
        return (lambda: ad.sum_(ad.sigmoid(ad.concat([ad.matmul(a, b), c[:1, :2]], axis=0)))), [a, b, c]
    if kind == 3:
        return (lambda: ad.sum_(ad.mul(ad.embedding(a, ids), ad.embedding(a, ids)))), [a]
    if kind == 4:
        return (lambda: ad.mean(ad.cross_entropy(ad.softmax(ad.matmul(c, a)), np.array([0, 3])))), [a, c]
    return (lambda: ad.sum_(ad.log(ad.add(ad.exp(ad.stack([a[0], a[1]], axis=0)), 1.0)))), [a]


rng_w = np.random.default_rng(5).normal(size=(3, 2))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", range(6))
def test_finite_differences_on_random_graphs(seed, kind):
    # 120 random graphs covering matmul, concat, lookup, softmax and losses
    f, params = _composite(kind, np.random.default_rng(seed))
    assert ad.finite_diff_check(f, params) < 1e-3


def test_determinism_same_inputs_same_grads():
    f1, p1 = _composite(1, np.random.default_rng(3))
    g1 = [g.copy() for g in grad_of(f1, *p1)]
    f2, p2 = _composite(1, np.random.default_rng(3))
    g2 = grad_of(f2, *p2)
    for x, y in zip(g1, g2):
        np.testing.assert_array_equal(x, y)
