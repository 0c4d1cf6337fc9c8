import mpmath
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boxguide.numeric_core import (
    DimensionError,
    UnknownVariableError,
    as_tensor,
    central_difference,
    grad,
    matmul,
    relative_error,
    softmax_rows,
)


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def test_matmul_identity():
    x = as_tensor([[1.0, 2.0], [3.0, 4.0]])
    assert torch.equal(matmul(torch.eye(2, dtype=torch.float64), x), x)


def test_matmul_annihilating():
    a = as_tensor([[1.0, 0.0], [0.0, 0.0]])
    b = as_tensor([[0.0, 0.0], [0.0, 1.0]])
    assert torch.equal(matmul(a, b), torch.zeros(2, 2, dtype=torch.float64))


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(as_tensor(a), as_tensor(b)).numpy(), naive_matmul(a, b), rtol=0, atol=1e-14)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(torch.zeros(2, 3), torch.zeros(2, 3))


def test_softmax_uniform():
    out = softmax_rows(as_tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.numpy(), [[1 / 3] * 3], atol=1e-15)


def test_softmax_stabilised():
    out = softmax_rows(as_tensor([[1000.0, 0.0]]))
    assert torch.isfinite(out).all()
    assert out[0, 0].item() == 1.0
    assert out[0, 1].item() < 1e-300 or out[0, 1].item() == 0.0


def test_softmax_high_precision_oracle():
    mpmath.mp.dps = 50
    row = [1, 2, 3]
    den = sum(mpmath.e ** v for v in row)
    expected = [float(mpmath.e ** v / den) for v in row]
    out = softmax_rows(as_tensor([row])).numpy()[0]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_softmax_rows_sum_to_one(x):
    out = softmax_rows(as_tensor(x))
    assert torch.isfinite(out).all()
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(dim=-1).numpy(), 1.0, atol=1e-9)


def test_softmax_deterministic(rng):
    x = as_tensor(rng.normal(size=(16, 7)))
    assert torch.equal(softmax_rows(x), softmax_rows(x.clone()))


def test_grad_of_sum_is_ones():
    x = as_tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    g = grad(x.sum(), x, "x")
    assert g.with_respect_to == "x"
    assert torch.equal(g.value, torch.ones(2, 3, dtype=torch.float64))


def test_grad_of_half_square_is_identity(rng):
    x = as_tensor(rng.normal(size=(4, 5)), requires_grad=True)
    g = grad((x * x).sum() / 2, {"x": x}, "x")
    assert torch.equal(g.value, x.detach())
    assert g.value.shape == x.shape


def test_grad_unknown_variable():
    x = as_tensor([1.0, 2.0], requires_grad=True)
    y = as_tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(UnknownVariableError):
        grad(x.sum(), {"x": x}, "y")
    with pytest.raises(UnknownVariableError):
        grad(x.sum(), y, "y")
    with pytest.raises(UnknownVariableError):
        grad(x.sum(), as_tensor([1.0]), "const")


def test_grad_matches_central_difference(rng):
    w = as_tensor(rng.normal(size=(5, 3)))

    def f(x):
        return softmax_rows(x @ w.T).max(dim=-1).values.sum() + (x ** 3).sum()

    x = as_tensor(rng.normal(size=(4, 3)), requires_grad=True)
    g = grad(f(x), x).value
    fd = central_difference(f, x)
    assert relative_error(g, fd) < 1e-6
