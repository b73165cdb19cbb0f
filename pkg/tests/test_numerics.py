import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avt.numerics import (
    ConfigError,
    ShapeError,
    Tensor,
    attention_counter,
    concat,
    gelu,
    grad_check,
    layer_norm,
    log_softmax,
    matmul,
    multi_head_self_attention,
    no_grad,
    softmax,
    softplus,
    tensor,
)


def rand(rng, *shape, grad=True):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=grad)


def attn_weights(rng, dim):
    out = []
    for _ in range(4):
        out += [rand(rng, dim, dim), rand(rng, dim)]
    return out


class TestMatmul:
    def test_identity(self):
        out = matmul(tensor(np.eye(2)), tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_annihilation(self):
        out = matmul(tensor(np.eye(2)), tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            matmul(tensor(np.ones((3, 4))), tensor(np.ones((3, 2))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        report = grad_check(lambda x, y: matmul(x, y).sum(), [a, b], h=1e-5, tol=1e-6)
        assert report.passed, report

    def test_batched_weight_broadcast_gradient(self):
        rng = np.random.default_rng(1)
        x, w = rand(rng, 2, 3, 4), rand(rng, 4, 5)
        report = grad_check(lambda a, b: (matmul(a, b) ** 2).sum(), [x, w], tol=1e-6)
        assert report.passed, report


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax(tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = softmax(tensor([1000.0, 0.0])).data
        assert abs(out[0] - 1) < 1e-12 and abs(out[1]) < 1e-12

    def test_matches_extended_precision(self):
        mpmath.mp.dps = 50
        exps = [mpmath.exp(v) for v in (1, 2, 3)]
        total = sum(exps)
        expected = [float(e / total) for e in exps]
        np.testing.assert_allclose(softmax(tensor([1.0, 2.0, 3.0])).data, expected, rtol=0, atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e6, 1e6)))
    def test_sums_to_one(self, x):
        out = softmax(Tensor(x)).data
        assert np.all(out >= 0)
        assert abs(out.sum() - 1) <= 1e-12

    def test_log_softmax_consistent(self):
        x = tensor(np.random.default_rng(2).normal(size=(3, 5)))
        np.testing.assert_allclose(np.exp(log_softmax(x, axis=1).data), softmax(x, axis=1).data, atol=1e-15)


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        out = layer_norm(tensor([3.0, 3.0, 3.0, 3.0]), tensor(np.ones(4)), tensor(np.zeros(4)), 1e-5)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_already_normalized(self):
        out = layer_norm(tensor([1.0, -1.0]), tensor(np.ones(2)), tensor(np.zeros(2)), 1e-12)
        np.testing.assert_allclose(out.data, [1.0, -1.0], atol=1e-10)

    def test_zero_mean_unit_variance(self):
        x = tensor(np.random.default_rng(3).normal(size=(4, 16)) * 5 + 2)
        out = layer_norm(x, tensor(np.ones(16)), tensor(np.zeros(16))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ConfigError):
            layer_norm(tensor([1.0, 2.0]), tensor([1.0, 1.0]), tensor([0.0, 0.0]), 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x, g, b = rand(rng, 3, 6), rand(rng, 6), rand(rng, 6)
        w = rng.normal(size=(3, 6))
        report = grad_check(lambda x, g, b: (layer_norm(x, g, b) * w).sum(), [x, g, b], tol=1e-5)
        assert report.passed, report


def naive_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Per-sample, per-head, per-query loops in plain Python floats."""
    T, D = x.shape
    hd = D // heads
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    ctx = np.zeros((T, D))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(T):
            scores = [sum(q[i, sl][c] * k[j, sl][c] for c in range(hd)) / math.sqrt(hd) for j in range(T)]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for j in range(T):
                ctx[i, sl] += (e[j] / z) * v[j, sl]
    return ctx @ wo + bo


class TestAttention:
    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(5)
        x = rand(rng, 3, 4, 8)
        w = attn_weights(rng, 8)
        out = multi_head_self_attention(x, *w, heads=2).data
        for bi in range(3):
            expected = naive_attention(x.data[bi], *(t.data for t in w), heads=2)
            np.testing.assert_allclose(out[bi], expected, rtol=0, atol=1e-10)

    def test_single_token_attends_to_itself(self):
        rng = np.random.default_rng(6)
        _, weights = multi_head_self_attention(rand(rng, 1, 1, 8), *attn_weights(rng, 8), heads=4, return_weights=True)
        np.testing.assert_array_equal(weights.data, np.ones((1, 4, 1, 1)))

    def test_zero_value_projection_gives_output_bias(self):
        rng = np.random.default_rng(7)
        w = attn_weights(rng, 8)
        w[4] = Tensor(np.zeros((8, 8)))  # wv
        w[5] = Tensor(np.zeros(8))       # bv
        out = multi_head_self_attention(rand(rng, 2, 5, 8), *w, heads=2).data
        np.testing.assert_array_equal(out, np.broadcast_to(w[7].data, out.shape))

    def test_indivisible_heads(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ConfigError):
            multi_head_self_attention(rand(rng, 1, 3, 6), *attn_weights(rng, 6), heads=4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 9), st.sampled_from([(4, 1), (4, 2), (8, 4), (6, 3)]), st.integers(0, 2**16))
    def test_preserves_shape(self, batch, tokens, dims, seed):
        dim, heads = dims
        rng = np.random.default_rng(seed)
        out = multi_head_self_attention(rand(rng, batch, tokens, dim), *attn_weights(rng, dim), heads=heads)
        assert out.shape == (batch, tokens, dim)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        x = rand(rng, 2, 4, 8)
        w = attn_weights(rng, 8)
        r = rng.normal(size=(2, 4, 8))
        report = grad_check(lambda *t: (multi_head_self_attention(t[0], *t[1:], heads=2) * r).sum(), [x, *w], tol=1e-4)
        assert report.passed, report

    def test_counter_counts_squared_length(self):
        rng = np.random.default_rng(10)
        w = attn_weights(rng, 4)
        with attention_counter() as c:
            multi_head_self_attention(rand(rng, 3, 5, 4), *w, heads=2)
            multi_head_self_attention(rand(rng, 3, 2, 4), *w, heads=2)
        assert c.pairs == 25 + 4 and c.calls == [5, 2]


PRIMITIVES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
    "div": (lambda a, b: a / (b * b + 1.0), [(2, 3), (3,)]),
    "pow": (lambda a: (a * a + 1.0) ** 1.5, [(5,)]),
    "exp": (lambda a: a.exp(), [(4,)]),
    "log": (lambda a: (a * a + 0.5).log(), [(4,)]),
    "tanh": (lambda a: a.tanh(), [(4,)]),
    "getitem": (lambda a: a[np.array([0, 2, 2])], [(3, 2)]),
    "slice": (lambda a: a[:, 1:], [(2, 4)]),
    "sum_axis": (lambda a: a.sum(axis=1), [(3, 4)]),
    "mean": (lambda a: a.mean(axis=0, keepdims=True), [(3, 4)]),
    "reshape_transpose": (lambda a: a.reshape(2, 3, 2).transpose(2, 0, 1), [(3, 4)]),
    "concat": (lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "softmax": (lambda a: softmax(a, axis=0), [(3, 4)]),
    "log_softmax": (lambda a: log_softmax(a, axis=1), [(3, 4)]),
    "gelu": (lambda a: gelu(a), [(6,)]),
    "softplus": (lambda a: softplus(a * 5.0), [(6,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_backward_matches_finite_differences(name):
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    inputs = [rand(rng, *s) for s in shapes]
    probe = None

    def f(*xs):
        nonlocal probe
        out = fn(*xs)
        if probe is None:
            probe = np.random.default_rng(0).normal(size=out.shape)
        return (out * probe).sum()

    report = grad_check(f, inputs, tol=1e-5)
    assert report.passed, report


class TestGradCheck:
    def test_sum_of_squares(self):
        x = tensor([0.3, -0.7, 1.1])
        assert grad_check(lambda t: (t * t).sum(), [x], tol=1e-6).passed

    def test_rejects_nonscalar(self):
        with pytest.raises(ShapeError):
            grad_check(lambda t: t * 2.0, [tensor([1.0, 2.0])])

    def test_corrupted_backward_fails(self):
        def bad_square(t):
            # correct forward, backward off by a factor of 1.5
            return Tensor.from_op(t.data**2, (t,), lambda g: (g * 3.0 * t.data,))

        report = grad_check(lambda t: bad_square(t).sum(), [tensor([0.5, -1.0, 2.0])], tol=1e-6)
        assert not report.passed
        assert report.max_rel_error > 1e-6


class TestTape:
    def test_shared_leaf_accumulates_once_per_use(self):
        x = tensor([2.0], requires_grad=True)
        y = x * x + x
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [5.0])

    def test_deep_chain_does_not_recurse(self):
        x = tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_no_grad_records_nothing(self):
        x = tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_bit_reproducible(self):
        def run():
            rng = np.random.default_rng(11)
            x = rand(rng, 2, 6, 8)
            w = attn_weights(rng, 8)
            out = (multi_head_self_attention(x, *w, heads=2) ** 2).sum()
            out.backward()
            return out.data.tobytes(), x.grad.tobytes()

        assert run() == run()

    def test_finite_outputs_on_bounded_inputs(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.uniform(-50, 50, size=(2, 7, 8)))
        out = multi_head_self_attention(x, *attn_weights(rng, 8), heads=2)
        assert np.all(np.isfinite(out.data))
