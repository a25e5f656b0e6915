"""Engine-level checks: op gradients vs central differences, graph mechanics."""

import numpy as np
import pytest

from stgapfill import autodiff as ad
from stgapfill.autodiff import Tensor
from stgapfill.errors import GraphError
from stgapfill.gradcheck import compare_gradients


def _scalarized(op, *leaf_shapes, seed=0, make_consts=None):
    rng = np.random.default_rng(seed)
    leaves = {f"a{i}": Tensor(rng.standard_normal(s), requires_grad=True)
              for i, s in enumerate(leaf_shapes)}
    consts = make_consts(rng) if make_consts else ()
    proj = None

    def forward():
        nonlocal proj
        out = op(*leaves.values(), *consts)
        if proj is None:
            proj = Tensor(np.random.default_rng(99).standard_normal(out.shape))
        return ad.tsum(ad.mul(out, proj))

    return forward, leaves


@pytest.mark.parametrize("name,op,shapes", [
    ("add", ad.add, [(3, 4), (3, 4)]),
    ("add_broadcast", ad.add, [(3, 4), (4,)]),
    ("sub", ad.sub, [(2, 5), (2, 5)]),
    ("mul", ad.mul, [(3, 4), (3, 4)]),
    ("mul_broadcast", ad.mul, [(2, 3, 4), (3, 1)]),
    ("div", ad.div, [(3, 3), (3, 3)]),
    ("matmul", ad.matmul, [(3, 4), (4, 5)]),
    ("matmul_batched", ad.matmul, [(2, 3, 4), (2, 4, 5)]),
    ("matmul_bcast", ad.matmul, [(2, 2, 3, 4), (4, 5)]),
    ("relu", ad.relu, [(4, 4)]),
    ("sqrt", lambda a: ad.sqrt(ad.add(ad.mul(a, a), Tensor(1.0))), [(3, 3)]),
    ("softmax", ad.softmax, [(3, 5)]),
])
def test_op_gradients(name, op, shapes):
    forward, leaves = _scalarized(op, *shapes, seed=hash(name) % 2**31)
    result = compare_gradients(name, forward, leaves, tol=1e-6)
    assert result.passed, f"{name}: {result.max_rel_err}"


def test_reshape_transpose_gradients():
    def op(a):
        return ad.transpose(ad.reshape(a, (2, 3, 4)), (1, 0, 2))
    forward, leaves = _scalarized(op, (6, 4))
    assert compare_gradients("reshape_transpose", forward, leaves, 1e-6).passed


def test_reductions_and_slicing_gradients():
    def op(a):
        part = ad.narrow(a, 1, 1, 2)
        padded = ad.pad(part, ((1, 0), (0, 2)))
        return ad.tmean(padded, axis=0, keepdims=True) + ad.tsum(part, axis=(0, 1))
    forward, leaves = _scalarized(op, (4, 5))
    assert compare_gradients("reduce_slice", forward, leaves, 1e-6).passed


def test_concat_and_take_gradients():
    idx = np.array([[0, 3, 5], [2, 2, 7]])

    def op(a, b):
        joined = ad.concat([a, b], axis=-1)
        return ad.take_flat(joined, idx)
    forward, leaves = _scalarized(op, (2, 2), (2, 2))
    assert compare_gradients("concat_take", forward, leaves, 1e-6).passed


def test_layer_norm_gradient():
    def op(x, gain, bias):
        return ad.layer_norm(x, gain, bias)
    forward, leaves = _scalarized(op, (4, 6), (6,), (6,))
    assert compare_gradients("layer_norm", forward, leaves, 1e-5).passed


def test_mask_fill_values_and_gradient():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    mask = np.array([[True, False, False], [False, True, False]])
    assert np.all(np.isneginf(ad.mask_fill(x, mask, -np.inf).data[mask]))

    ad.tsum(ad.mask_fill(x, mask, 0.0)).backward()
    assert np.all(x.grad[mask] == 0)
    assert np.all(x.grad[~mask] == 1)


def test_softmax_handles_masked_rows():
    scores = Tensor(np.array([[1.0, -np.inf, 2.0],
                              [-np.inf, -np.inf, -np.inf]]), requires_grad=True)
    out = ad.softmax(scores)
    assert out.data[0, 1] == 0.0
    assert np.isclose(out.data[0].sum(), 1.0)
    assert np.all(out.data[1] == 0.0)
    ad.tsum(out).backward()
    assert np.all(np.isfinite(scores.grad))
    assert np.all(scores.grad[1] == 0.0)


def test_gradient_accumulates_over_shared_subgraphs():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), ad.mul(x, Tensor(np.array([3.0]))))
    y.backward()
    assert np.allclose(x.grad, [2 * 2.0 + 3.0])


def test_backward_without_graph_raises():
    with pytest.raises(GraphError):
        Tensor(np.zeros(3)).backward()


def test_constant_graphs_record_nothing():
    out = ad.mul(Tensor(np.ones(4)), Tensor(np.ones(4)))
    assert not out.requires_grad and out._parents == ()


def test_backward_deterministic_accumulation():
    def run():
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((8, 8)), requires_grad=True)
        out = x
        for _ in range(4):
            out = ad.matmul(ad.softmax(out), Tensor(rng.standard_normal((8, 8))))
        ad.tsum(out).backward()
        return x.grad.copy()

    assert np.array_equal(run(), run())
