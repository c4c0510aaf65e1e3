"""Finite-difference audits of every tape operation."""
import numpy as np
import pytest

from dacs import autodiff as ad


def fd_check(build, theta0, h=1e-6, tol=1e-6):
    """build(theta) -> scalar Tensor; compares tape grads to central diffs."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    t = ad.parameter(theta0)
    out = build(t)
    out.backward()
    grad = t.grad.copy()
    for i in np.ndindex(theta0.shape):
        step = np.zeros_like(theta0)
        step[i] = h
        up = build(ad.Tensor(theta0 + step)).value
        dn = build(ad.Tensor(theta0 - step)).value
        num = (up - dn) / (2 * h)
        denom = max(abs(grad[i]), abs(num), 1e-8)
        assert abs(grad[i] - num) / denom < tol, f"coord {i}: {grad[i]} vs {num}"


RNG = np.random.default_rng(1234)
X = RNG.normal(size=(3, 4))
Y = RNG.normal(size=(3, 4))
M = RNG.normal(size=(4, 5))
C35 = RNG.normal(size=(3, 5))
C38 = RNG.normal(size=(3, 8))


@pytest.mark.parametrize("build", [
    lambda t: ad.tsum(t * Y),
    lambda t: ad.tsum(t + 2.0 * t),
    lambda t: ad.tsum(t / (Y + 10.0)),
    lambda t: ad.tsum((Y + 10.0) / (t + 10.0)),
    lambda t: ad.tsum(ad.exp(t) * Y),
    lambda t: ad.tsum(ad.log(t + 10.0)),
    lambda t: ad.tsum(ad.relu(t) * Y),
    lambda t: ad.tsum(ad.sigmoid(t) * Y),
    lambda t: ad.tsum((t ** 3.0) * Y),
    lambda t: ad.tsum((t @ M) * C35),
    lambda t: ad.tsum(t.T @ (X + 1.0)),
    lambda t: ad.tsum(ad.softmax(t) * Y),
    lambda t: ad.tsum(ad.cumsum(t) * Y),
    lambda t: ad.tsum(ad.cumprod(t + 3.0) * Y * 1e-2),
    lambda t: ad.tsum(ad.exclusive_cumprod(1.0 - ad.sigmoid(t)) * Y),
    lambda t: ad.tsum(ad.shift(t, 2, 0.5) * Y),
    lambda t: ad.tsum(ad.shift(t, -1, 0.0) * Y),
    lambda t: ad.tsum(ad.flip(t) * Y),
    lambda t: ad.tsum(ad.tmean(t, axis=-1, keepdims=True) * Y),
    lambda t: ad.tsum(t[1:, :2] * Y[1:, :2]),
    lambda t: ad.tsum(ad.concat([t, t * t], axis=1) * C38),
    lambda t: ad.tsum(ad.stack([t[0], t[2]], axis=0) * Y[:2]),
])
def test_op_gradients(build):
    fd_check(build, X)


def test_masked_softmax_gradients():
    mask = np.ones((3, 4))
    mask[0, 1] = 0
    mask[2, :2] = 0
    fd_check(lambda t: ad.tsum(ad.masked_softmax(t, mask) * Y), X)


def test_masked_softmax_matches_neg_inf_energy():
    mask = np.array([[1, 0, 1, 1], [1, 1, 1, 1]], dtype=float)
    e = RNG.normal(size=(2, 4))
    got = ad.masked_softmax(ad.Tensor(e), mask).value
    ref = np.where(mask > 0, e, -np.inf)
    ref = np.exp(ref - ref.max(-1, keepdims=True))
    ref[mask == 0] = 0.0
    ref /= ref.sum(-1, keepdims=True)
    np.testing.assert_allclose(got, ref, atol=1e-15)
    assert got[0, 1] == 0.0


def test_masked_softmax_rejects_empty_row():
    with pytest.raises(ValueError):
        ad.masked_softmax(ad.Tensor(np.zeros((2, 3))), np.array([[1, 1, 1], [0, 0, 0]]))


def test_take_rows_accumulates_repeats():
    w = ad.parameter(np.arange(12.0).reshape(4, 3))
    out = ad.tsum(ad.take_rows(w, [1, 1, 3]))
    out.backward()
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    np.testing.assert_array_equal(w.grad, expected)


def test_cumprod_zero_entry_gradient_is_finite():
    x = ad.parameter(np.array([0.5, 0.0, 0.25]))
    out = ad.tsum(ad.cumprod(x) * np.array([1.0, 2.0, 3.0]))
    out.backward()
    assert np.isfinite(x.grad).all()
    assert x.grad[0] == pytest.approx(1.0)  # only the first term survives


def test_backward_accumulates_through_shared_nodes():
    x = ad.parameter(np.array([2.0]))
    y = x * x
    z = y + y
    z.backward()
    assert x.grad[0] == pytest.approx(8.0)


def test_sigmoid_extreme_inputs_do_not_overflow():
    vals = ad.stable_sigmoid(np.array([-750.0, -40.0, 0.0, 40.0, 750.0]))
    assert np.isfinite(vals).all()
    assert vals[0] == 0.0 and vals[-1] == 1.0 and vals[2] == 0.5
