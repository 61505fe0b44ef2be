"""Tape mechanics, op gradients against central differences, worked values."""

import numpy as np
import pytest

from gcdshift import autodiff as ad


RNG = np.random.default_rng(704)
BCAST_W = np.random.default_rng(7).normal(size=(3, 4))


def scalarize(t):
    return ad.sum_(ad.mul(t, t))


# every op in the suite appears here as (name, builder); the builder maps a
# leaf tensor of the given shape to a scalar
OP_CASES = [
    ("add", (3, 4), lambda x: ad.sum_(ad.add(x, np.ones((3, 4))))),
    ("add_broadcast", (3, 4), lambda x: ad.sum_(ad.mul(ad.add(x, np.arange(4.0)), ad.add(x, 0.5)))),
    ("sub", (3, 4), lambda x: ad.sum_(ad.mul(ad.sub(x, 0.3), ad.sub(1.7, x)))),
    ("mul", (2, 5), lambda x: ad.sum_(ad.mul(x, ad.add(x, 2.0)))),
    ("div", (2, 5), lambda x: ad.sum_(ad.div(x, ad.add(ad.mul(x, x), 1.5)))),
    ("neg", (6,), lambda x: ad.sum_(ad.mul(ad.neg(x), x))),
    ("matmul_2d", (3, 4), lambda x: ad.sum_(ad.matmul(x, ad.transpose_(x)))),
    ("matmul_batched", (2, 3, 4), lambda x: ad.sum_(ad.matmul(x, ad.transpose_(x, (0, 2, 1))))),
    ("matmul_shared_weight", (2, 3, 4), lambda x: ad.sum_(ad.matmul(x, ad.slice_(ad.reshape_(x, (2, 12)), (0, slice(0, 8))).reshape((4, 2))))),
    ("exp", (3, 3), lambda x: ad.sum_(ad.exp(ad.mul(x, 0.5)))),
    ("log", (3, 3), lambda x: ad.sum_(ad.log(ad.add(ad.mul(x, x), 1.1)))),
    ("tanh", (7,), lambda x: ad.sum_(ad.tanh(x))),
    ("relu", (8,), lambda x: ad.sum_(ad.relu(ad.add(x, 0.05)))),
    ("gelu", (8,), lambda x: ad.sum_(ad.gelu(x))),
    ("softplus", (8,), lambda x: ad.sum_(ad.softplus(ad.mul(x, 3.0)))),
    ("powc", (5,), lambda x: ad.sum_(ad.powc(ad.add(ad.mul(x, x), 0.2), 1.5))),
    ("xlogx", (5,), lambda x: ad.sum_(ad.xlogx(ad.add(ad.mul(x, x), 0.1)))),
    ("softmax_last", (4, 5), lambda x: ad.sum_(ad.mul(ad.softmax_last(x, 0.7), np.arange(5.0)))),
    ("logsumexp_last", (4, 5), lambda x: ad.sum_(ad.logsumexp_last(x))),
    ("logsumexp_keep", (4, 5), lambda x: ad.sum_(ad.sub(x, ad.logsumexp_last(x, keepdims=True)))),
    ("sum_axis", (3, 4), lambda x: ad.sum_(ad.mul(ad.sum_(x, axis=1, keepdims=True), x))),
    ("mean_axis", (3, 4), lambda x: ad.sum_(ad.mul(ad.mean_(x, axis=0), np.arange(4.0)))),
    ("mean_all", (3, 4), lambda x: ad.mean_(ad.mul(x, x))),
    ("concat", (4, 3), lambda x: ad.sum_(scalarize_concat(x))),
    ("slice", (4, 5), lambda x: ad.sum_(ad.mul(ad.slice_(x, (slice(1, 3), slice(None))), 2.0))),
    ("index_rows", (5, 3), lambda x: ad.sum_(ad.mul(ad.index_rows(x, np.array([0, 2, 2, 4])), 1.5))),
    ("transpose", (2, 3, 4), lambda x: ad.sum_(ad.mul(ad.transpose_(x, (2, 0, 1)), 0.7))),
    ("reshape", (3, 4), lambda x: ad.sum_(ad.mul(ad.reshape_(x, (2, 6)), np.arange(6.0)))),
    ("broadcast_to", (1, 4), lambda x: ad.sum_(ad.mul(ad.broadcast_to_(x, (3, 4)), BCAST_W))),
    ("linear", (4, 3), lambda x: ad.sum_(ad.linear(x, np.arange(6.0).reshape(3, 2) / 5.0, np.array([0.1, -0.2])))),
    ("layer_norm", (3, 6), lambda x: ad.sum_(ad.mul(ad.layer_norm(x, np.ones(6), np.zeros(6)), np.arange(6.0)))),
    ("l2_normalize", (3, 6), lambda x: ad.sum_(ad.mul(ad.l2_normalize(x), np.arange(6.0)))),
    ("grad_reverse_identity_fwd", (5,), lambda x: ad.sum_(ad.mul(x, x))),
]


def scalarize_concat(x):
    top = ad.slice_(x, (slice(0, 2), slice(None)))
    bot = ad.slice_(x, (slice(2, 4), slice(None)))
    return ad.mul(ad.concat([top, bot, top], axis=0), 0.5)


@pytest.mark.parametrize("name,shape,builder", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_op_gradients_match_central_differences(name, shape, builder):
    x0 = RNG.normal(size=shape) * 0.8
    err = ad.grad_check(builder, x0, step=1e-5)
    assert err < 1e-5, f"{name}: max relative error {err:.3e}"


def test_forward_worked_values():
    t = ad.l2_normalize(ad.constant([3.0, 4.0]))
    assert np.allclose(t.data, [0.6, 0.8], atol=1e-9)
    s = ad.softmax_last(ad.constant([0.0, 0.0, 0.0, 0.0]))
    assert np.allclose(s.data, 0.25)
    sp = ad.softplus(ad.constant([0.0]))
    assert abs(sp.data[0] - np.log(2.0)) < 1e-15
    # stable at large magnitude: softplus(800) = 800, softplus(-800) = 0
    big = ad.softplus(ad.constant([800.0, -800.0]))
    assert np.isfinite(big.data).all() and abs(big.data[0] - 800.0) < 1e-9 and big.data[1] == 0.0
    assert ad.xlogx(ad.constant([0.0])).data[0] == 0.0


def test_stop_grad_value_and_gradient():
    # y = x * sg(x): dy/dx must equal the value of x
    x0 = np.array([1.0, 2.0, 3.0])
    tape = ad.Tape()
    x = tape.leaf(x0)
    y = ad.sum_(ad.mul(x, ad.stop_grad(x)))
    assert np.allclose(y.data, np.sum(x0 * x0))
    tape.backward(y)
    assert np.array_equal(x.grad, x0)


def test_grad_reverse_flips_gradient():
    tape = ad.Tape()
    x = tape.leaf(np.array([2.0, -1.0]))
    y = ad.sum_(ad.mul(ad.grad_reverse(x), np.array([3.0, 5.0])))
    assert np.allclose(y.data, 2.0 * 3.0 - 5.0)  # forward is the identity
    tape.backward(y)
    assert np.array_equal(x.grad, [-3.0, -5.0])


def test_fanout_accumulates_both_paths():
    tape = ad.Tape()
    x = tape.leaf(np.array([1.5]))
    y = ad.add(ad.mul(x, x), ad.mul(x, 3.0))  # x^2 + 3x -> 2x + 3
    tape.backward(ad.sum_(y))
    assert np.allclose(x.grad, [2 * 1.5 + 3.0])


def test_dead_branch_contributes_nothing():
    tape = ad.Tape()
    x = tape.leaf(np.array([2.0]))
    _ = ad.exp(ad.mul(x, 50.0))  # never consumed
    y = ad.sum_(ad.mul(x, x))
    tape.backward(y)
    assert np.allclose(x.grad, [4.0])


def test_backward_twice_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.array([1.0]))
    y = ad.sum_(x)
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_backward_non_scalar_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(ad.mul(x, 2.0))


def test_mixed_tapes_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(2))
    b = t2.leaf(np.ones(2))
    with pytest.raises(ValueError, match="tapes"):
        ad.add(a, b)


def test_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(2,\)"):
        ad.add(ad.constant(np.ones((3, 4))), ad.constant(np.ones(2)))
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(ad.constant(np.ones((3, 4))), ad.constant(np.ones((3, 4))))


def test_softmax_temperature_validated():
    with pytest.raises(ValueError, match="temperature"):
        ad.softmax_last(ad.constant(np.ones(3)), 0.0)


def test_grad_check_worked_examples():
    # f(x) = sum(x^2) at x = 3*ones: analytic gradient 6 per coordinate
    err = ad.grad_check(lambda x: ad.sum_(ad.mul(x, x)), 3.0 * np.ones(4))
    assert err < 1e-8
    # constant function: both gradients are exactly zero -> defined error 0
    err = ad.grad_check(lambda x: ad.sum_(ad.mul(x, 0.0)), np.ones(3))
    assert err == 0.0
    # 3-way softmax cross-entropy at random logits
    q = np.array([0.2, 0.5, 0.3])

    def ce(x):
        logp = ad.sub(x, ad.logsumexp_last(x, keepdims=True))
        return ad.neg(ad.sum_(ad.mul(logp, q)))

    err = ad.grad_check(ce, RNG.normal(size=3))
    assert err < 1e-6


def test_grad_check_rejects_bad_inputs():
    with pytest.raises(ValueError, match="step"):
        ad.grad_check(lambda x: ad.sum_(x), np.ones(2), step=1.0)
    with pytest.raises(ValueError, match="non-finite"):
        ad.grad_check(lambda x: ad.sum_(ad.log(ad.mul(x, -1.0))), np.ones(2))


def test_determinism_same_graph_same_bits():
    def run():
        tape = ad.Tape()
        x = tape.leaf(np.linspace(-1, 1, 12).reshape(3, 4))
        y = ad.sum_(ad.softmax_last(ad.matmul(x, ad.transpose_(x)), 0.3))
        tape.backward(y)
        return y.data.copy(), x.grad.copy()

    (y1, g1), (y2, g2) = run(), run()
    assert y1.tobytes() == y2.tobytes() and g1.tobytes() == g2.tobytes()


def test_index_rows_accumulates_repeats():
    tape = ad.Tape()
    x = tape.leaf(np.ones((3, 2)))
    y = ad.sum_(ad.index_rows(x, np.array([1, 1, 1])))
    tape.backward(y)
    assert np.array_equal(x.grad, [[0, 0], [3, 3], [0, 0]])


def test_leaf_grads_fully_accumulated_after_backward():
    tape = ad.Tape()
    x = tape.leaf(np.arange(1.0, 5.0))
    w = tape.leaf(np.full(4, 2.0))
    y = ad.sum_(ad.mul(ad.mul(x, w), ad.add(x, w)))  # x*w*(x+w)
    tape.backward(y)
    x0, w0 = np.arange(1.0, 5.0), np.full(4, 2.0)
    assert np.allclose(x.grad, w0 * (2 * x0 + w0))
    assert np.allclose(w.grad, x0 * (x0 + 2 * w0))
