import numpy as np
import pytest

from morphvae import autodiff as ad
from morphvae.errors import GraphError, ShapeError

STEP = 1e-5
TOL = 1e-4


def fd_grad(f, x, step=STEP):
    """Central finite differences of scalar f() w.r.t. the array x (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


def check_grads(build, arrays):
    """Compare tape gradients of build(*tensors) against finite differences."""
    tensors = [ad.Tensor(a) for a in arrays]
    with ad.Tape() as tape:
        for t in tensors:
            tape.watch(t)
        root = build(*tensors)
        tape.backward(root)
        analytic = [tape.grad(t).copy() for t in tensors]

    for i, a in enumerate(arrays):
        def forward():
            ts = [ad.Tensor(arr) for arr in arrays]
            return build(*ts).item()

        numeric = fd_grad(forward, a)
        err = rel_err(analytic[i], numeric)
        assert err <= TOL, f"arg {i}: rel err {err:.3e}"


def test_dense_identity():
    out = ad.dense(ad.Tensor([[1.0, 2.0]]), ad.Tensor(np.eye(2)), ad.Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_dense_hand_case():
    x = ad.Tensor([[1.0, 0.0], [0.0, 1.0]])
    w = ad.Tensor([[3.0], [5.0]])
    b = ad.Tensor([1.0])
    out = ad.dense(x, w, b)
    assert np.array_equal(out.data, [[4.0], [6.0]])


def test_dense_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_dense_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=2)
    check_grads(lambda xt, wt, bt: ad.tensor_sum(ad.dense(xt, wt, bt)), [x, w, b])


def test_conv_identity_kernel():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 4, 5))
    k = np.ones((1, 1, 1, 1))
    out = ad.conv(ad.Tensor(x), ad.Tensor(k), stride=1)
    assert np.allclose(out.data, x)


def test_conv_all_ones_kernel_sums():
    c = 0.7
    x = np.full((1, 1, 2, 2), c)
    k = np.ones((1, 1, 2, 2))
    out = ad.conv(ad.Tensor(x), ad.Tensor(k), stride=1)
    assert out.data.shape == (1, 1, 1, 1)
    assert np.isclose(out.data[0, 0, 0, 0], 4 * c)


def test_conv_kernel_larger_than_input():
    with pytest.raises(ShapeError):
        ad.conv(ad.Tensor(np.zeros((1, 1, 2, 2))), ad.Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 1, 5, 5))
    k = rng.normal(size=(1, 1, 3, 3))
    check_grads(lambda xt, kt: ad.tensor_sum(ad.conv(xt, kt, stride=1)), [x, k])


def test_conv3d_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 2, 4, 4, 4))
    k = rng.normal(size=(2, 2, 2, 2, 2))
    check_grads(lambda xt, kt: ad.tensor_sum(ad.conv(xt, kt, stride=2)), [x, k])


def test_conv_transpose_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 2, 3, 3))
    k = rng.normal(size=(2, 1, 3, 3))
    check_grads(lambda xt, kt: ad.tensor_sum(ad.conv_transpose(xt, kt, stride=2)), [x, k])


def test_conv_transpose_inverts_conv_shape():
    x = np.zeros((1, 1, 16, 16, 16))
    k = np.zeros((3, 1, 4, 4, 4))
    y = ad.conv(ad.Tensor(x), ad.Tensor(k), stride=2)
    assert y.data.shape == (1, 3, 7, 7, 7)
    back = ad.conv_transpose(ad.Tensor(y.data), ad.Tensor(k.transpose(0, 1, 2, 3, 4)), stride=2)
    assert back.data.shape[1:] == (1, 16, 16, 16)


def test_adjoint_identity():
    # <conv(x, k), y> == <x, conv_transpose(y, k)> for random data
    rng = np.random.default_rng(5)
    for _ in range(10):
        x = rng.normal(size=(2, 2, 6, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        y = rng.normal(size=(2, 3, 2, 2))
        cx = ad._conv_raw(x, k, 2)
        ty = ad._conv_transpose_raw(y, k, 2, in_sp=(6, 6))
        lhs = float(np.sum(cx * y))
        rhs = float(np.sum(x * ty))
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_backward_sum_gives_ones():
    x = ad.Tensor(np.arange(6.0).reshape(2, 3))
    with ad.Tape() as tape:
        tape.watch(x)
        tape.backward(ad.tensor_sum(x))
        assert np.array_equal(tape.grad(x), np.ones((2, 3)))


def test_backward_square_gradient():
    x = ad.Tensor([1.0, -2.0])
    with ad.Tape() as tape:
        tape.watch(x)
        root = ad.tensor_sum(ad.mul(x, x))
        tape.backward(root)
        assert np.allclose(tape.grad(x), [2.0, -4.0])


def test_backward_requires_scalar_root():
    x = ad.Tensor([1.0, 2.0])
    with ad.Tape() as tape:
        tape.watch(x)
        y = ad.mul(x, x)
        with pytest.raises(GraphError):
            tape.backward(y)


def test_backward_unreached_nodes_have_zero_gradient():
    x = ad.Tensor([1.0, 2.0])
    y = ad.Tensor([3.0, 4.0])
    with ad.Tape() as tape:
        tape.watch(x)
        tape.watch(y)
        _ = ad.mul(y, y)  # not part of the root's graph
        root = ad.tensor_sum(x)
        tape.backward(root)
        assert np.array_equal(tape.grad(y), np.zeros(2))


def test_composite_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(3, 4))
    w1 = rng.normal(size=(4, 5))
    b1 = rng.normal(size=5) + 0.3
    w2 = rng.normal(size=(5, 2))
    b2 = rng.normal(size=2)
    target = rng.normal(size=(3, 2))

    def build(w1t, b1t, w2t, b2t):
        h = ad.relu(ad.dense(ad.Tensor(x), w1t, b1t))
        out = ad.dense(h, w2t, b2t)
        err = ad.sub(out, ad.Tensor(target))
        return ad.scale(ad.tensor_sum(ad.mul(err, err)), 1.0 / 3.0)

    check_grads(build, [w1, b1, w2, b2])


def _random_op_cases():
    """(name, build, array factory) triples for the per-op gradient sweep."""
    unary = [
        ("add_scalar", lambda t: ad.tensor_sum(ad.add_scalar(t, 1.7)), None),
        ("scale", lambda t: ad.tensor_sum(ad.scale(t, -2.3)), None),
        ("neg", lambda t: ad.tensor_sum(ad.neg(t)), None),
        ("exp", lambda t: ad.tensor_sum(ad.exp(t)), None),
        ("sqrt", lambda t: ad.tensor_sum(ad.sqrt(t)), "positive"),
        ("abs", lambda t: ad.tensor_sum(ad.absolute(t)), "offset"),
        ("relu", lambda t: ad.tensor_sum(ad.relu(t)), "offset"),
        ("sigmoid", lambda t: ad.tensor_sum(ad.sigmoid(t)), None),
        ("clamp", lambda t: ad.tensor_sum(ad.clamp(t, -0.5, 0.5)), "offset"),
        ("reshape", lambda t: ad.tensor_sum(ad.reshape(t, (-1,))), None),
        ("sum_axis", lambda t: ad.tensor_sum(ad.mul(ad.sum_axis(t, 0), ad.sum_axis(t, 0))), None),
    ]
    binary = [
        ("add", ad.add),
        ("sub", ad.sub),
        ("mul", ad.mul),
        ("div", ad.div),
    ]
    return unary, binary


def _sample(rng, kind, shape):
    x = rng.normal(size=shape)
    if kind == "positive":
        return np.abs(x) + 0.5
    if kind == "offset":
        # keep away from kinks and clamp edges so finite differences are clean
        return np.where(np.abs(x) < 0.15, x + 0.3 * np.sign(x) + 0.15, x)
    return x


def test_gradient_property_sweep_all_ops():
    """Every differentiable op agrees with central differences on random shapes.

    Runs well over 100 randomized cases in total.
    """
    rng = np.random.default_rng(7)
    unary, binary = _random_op_cases()
    cases = 0
    for name, build, kind in unary:
        for _ in range(8):
            shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
            check_grads(build, [_sample(rng, kind, shape)])
            cases += 1
    for name, op in binary:
        for _ in range(8):
            shape = tuple(rng.integers(1, 5, size=2))
            a = _sample(rng, None, shape)
            b = _sample(rng, "positive", shape)  # safe denominator for div
            check_grads(lambda x, y, _op=op: ad.tensor_sum(_op(x, y)), [a, b])
            cases += 1
    # structured ops
    for _ in range(6):
        m, k, n = rng.integers(1, 5, size=3)
        check_grads(lambda a, b: ad.tensor_sum(ad.matmul(a, b)),
                    [rng.normal(size=(m, k)), rng.normal(size=(k, n))])
        cases += 1
    for _ in range(6):
        b, n = rng.integers(1, 5, size=2)
        check_grads(lambda x, bias: ad.tensor_sum(ad.mul(ad.add_bias(x, bias),
                                                         ad.add_bias(x, bias))),
                    [rng.normal(size=(b, n)), rng.normal(size=n)])
        cases += 1
    for _ in range(4):
        b, n, m2 = rng.integers(1, 4, size=3)
        check_grads(lambda x, y: ad.tensor_sum(ad.mul(ad.concat(x, y, axis=1),
                                                      ad.concat(x, y, axis=1))),
                    [rng.normal(size=(b, n)), rng.normal(size=(b, m2))])
        cases += 1
    check_grads(lambda a: ad.tensor_sum(ad.mul(ad.transpose2d(a), ad.transpose2d(a))),
                [rng.normal(size=(3, 2))])
    cases += 1
    assert cases >= 100


def test_forward_bit_identical_across_runs():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 1, 6, 6))
    k = rng.normal(size=(2, 1, 3, 3))

    def run():
        h = ad.relu(ad.conv(ad.Tensor(x), ad.Tensor(k), stride=1))
        return ad.sigmoid(ad.tensor_sum(h)).item()

    assert run() == run()
