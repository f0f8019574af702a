import math

import numpy as np
import pytest

from scenmoe import numerics as nm
from scenmoe.errors import ContractError, DimensionError, DomainError


def matmul_oracle(a, b):
    """Independent triple-loop product used to check the vectorized path."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def central_difference(f, x, eps=1e-6):
    return (f(x + eps) - f(x - eps)) / (2 * eps)


class TestMatmul:
    def test_identity(self):
        x = nm.tensor([[3.0], [4.0]])
        eye = nm.tensor(np.eye(2))
        out = nm.matmul(eye, x)
        assert np.array_equal(out.values, x.values)

    def test_hand_dot_product(self):
        a = nm.tensor([[1.0, 2.0]])
        b = nm.tensor([[3.0], [4.0]])
        assert nm.matmul(a, b).values.reshape(()) == 11.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = nm.tensor(rng.normal(size=(3, 4)))
        b = nm.tensor(rng.normal(size=(4, 2)))
        got = nm.matmul(a, b).values
        want = matmul_oracle(a.values, b.values)
        assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))

    def test_oracle_agreement_up_to_32(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            m, k, n = rng.integers(1, 33, size=3)
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            got = nm.matmul(nm.tensor(a), nm.tensor(b)).values
            want = matmul_oracle(a, b)
            denom = max(1.0, np.max(np.abs(want)))
            assert np.max(np.abs(got - want)) / denom < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        a = nm.tensor(np.zeros((2, 3)))
        b = nm.tensor(np.zeros((2, 3)))
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nm.matmul(a, b)

    def test_backward_rule(self):
        rng = np.random.default_rng(2)
        a = nm.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = nm.tensor(rng.normal(size=(4, 2)), requires_grad=True)
        out = nm.total(nm.matmul(a, b))
        nm.backward(out)
        g = np.ones((3, 2))
        assert np.allclose(a.grad, g @ b.values.T)
        assert np.allclose(b.grad, a.values.T @ g)


class TestElementwise:
    def test_sigmoid_symmetry_point(self):
        assert nm.sigmoid(nm.tensor([0.0])).values[0] == 0.5

    def test_sigmoid_gradient_matches_central_difference(self):
        x = nm.tensor([0.0], requires_grad=True)
        out = nm.total(nm.sigmoid(x))
        nm.backward(out)
        numeric = central_difference(lambda v: 1 / (1 + math.exp(-v)), 0.0)
        assert abs(x.grad[0] - 0.25) < 1e-12
        assert abs(x.grad[0] - numeric) < 1e-9

    def test_prelu_definition(self):
        slope = nm.tensor([0.25])
        out = nm.prelu(nm.tensor([-2.0]), slope)
        assert out.values[0] == -0.5

    def test_prelu_slope_gradient(self):
        x = nm.tensor([-2.0, 3.0, -1.0], requires_grad=True)
        slope = nm.tensor([0.25], requires_grad=True)
        out = nm.total(nm.prelu(x, slope))
        nm.backward(out)
        assert slope.grad[0] == pytest.approx(-3.0)  # sum of negative-branch inputs
        assert np.allclose(x.grad, [0.25, 1.0, 0.25])

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            nm.log(nm.tensor([0.0]))

    def test_scalar_broadcast(self):
        x = nm.tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        out = nm.total(nm.mul(x, 2.0))
        nm.backward(out)
        assert np.allclose(x.grad, 2.0)

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(DimensionError):
            nm.add(nm.tensor([1.0, 2.0]), nm.tensor([1.0, 2.0, 3.0]))

    def test_softplus_values_and_grad(self):
        x = nm.tensor([0.0, 50.0, -50.0], requires_grad=True)
        out = nm.softplus(x)
        assert out.values[0] == pytest.approx(math.log(2), abs=1e-15)
        assert out.values[1] == pytest.approx(50.0, abs=1e-12)
        assert out.values[2] == pytest.approx(0.0, abs=1e-12)
        nm.backward(nm.total(out))
        assert x.grad[0] == pytest.approx(0.5)

    def test_clip_passes_gradient_only_inside(self):
        x = nm.tensor([-1.0, 0.5, 2.0], requires_grad=True)
        nm.backward(nm.total(nm.clip(x, 0.0, 1.0)))
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])


class TestSoftmax:
    def test_constant_logits_uniform(self):
        for c in (-3.0, 0.0, 17.5):
            out = nm.softmax(nm.tensor([c, c, c])).values
            assert np.array_equal(out, np.full(3, 1 / 3))

    def test_matches_direct_formula(self):
        logits = np.array([10.0, 0.0, 0.0])
        want = np.exp(logits - logits.max())
        want = want / want.sum()
        got = nm.softmax(nm.tensor(logits)).values
        assert np.allclose(got, want, rtol=0, atol=0)

    def test_single_logit(self):
        assert nm.softmax(nm.tensor([4.2])).values[0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            nm.softmax(nm.tensor(np.zeros(0)))

    def test_simplex_for_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            out = nm.softmax(nm.tensor(rng.normal(scale=10, size=rng.integers(1, 9)))).values
            assert np.all(out >= 0)
            assert abs(out.sum() - 1.0) < 1e-12

    def test_shift_invariance_bitwise_on_exact_sums(self):
        # Integer logits plus integer shifts keep every sum exactly
        # representable, so max-subtraction yields identical inputs.
        rng = np.random.default_rng(4)
        logits = rng.integers(-8, 9, size=6).astype(float)
        base = nm.softmax(nm.tensor(logits)).values
        for c in (1.0, -4.0, 64.0):
            shifted = nm.softmax(nm.tensor(logits + c)).values
            assert np.array_equal(base, shifted)


class TestBackward:
    def test_sum_gives_ones(self):
        w = nm.tensor(np.arange(5, dtype=float), requires_grad=True)
        nm.backward(nm.total(w))
        assert np.array_equal(w.grad, np.ones(5))

    def test_quadratic_gives_two_w(self):
        w = nm.tensor([1.0, -2.0, 0.5], requires_grad=True)
        nm.backward(nm.total(nm.mul(w, w)))
        assert np.allclose(w.grad, 2 * w.values)

    def test_accumulates_across_calls(self):
        w = nm.tensor([1.0, 2.0], requires_grad=True)
        nm.backward(nm.total(w))
        nm.backward(nm.total(w))
        assert np.array_equal(w.grad, np.full(2, 2.0))

    def test_shared_leaf_accumulates_both_uses(self):
        w = nm.tensor([3.0], requires_grad=True)
        out = nm.add(nm.total(nm.mul(w, w)), nm.total(nm.mul(w, 2.0)))
        nm.backward(out)
        assert w.grad[0] == pytest.approx(2 * 3.0 + 2.0)

    def test_non_scalar_seed_rejected(self):
        with pytest.raises(ContractError):
            nm.backward(nm.tensor([1.0, 2.0]))

    def test_each_node_visited_once(self):
        w = nm.tensor([1.0, 2.0], requires_grad=True)
        a = nm.mul(w, w)
        b = nm.add(a, a)
        graph = nm.Graph(nm.total(b))
        visits = graph.run_backward()
        assert visits == len(graph.nodes)

    def test_deep_chain_gradient(self):
        x = nm.tensor([0.3], requires_grad=True)
        y = nm.sigmoid(nm.exp(nm.mul(x, x)))
        nm.backward(nm.total(y))
        f = lambda v: 1 / (1 + math.exp(-math.exp(v * v)))
        assert x.grad[0] == pytest.approx(central_difference(f, 0.3), rel=1e-7)


class TestStructuralOps:
    def test_take_rows_scatter_adds_duplicates(self):
        t = nm.tensor(np.arange(12, dtype=float).reshape(4, 3), requires_grad=True)
        out = nm.take_rows(t, [1, 1, 3])
        nm.backward(nm.total(out))
        want = np.zeros((4, 3))
        want[1] = 2.0
        want[3] = 1.0
        assert np.array_equal(t.grad, want)

    def test_take_rows_out_of_range(self):
        t = nm.tensor(np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            nm.take_rows(t, [2])

    def test_concat_axis1_splits_gradient(self):
        a = nm.tensor(np.ones((2, 2)), requires_grad=True)
        b = nm.tensor(np.ones((2, 3)), requires_grad=True)
        out = nm.concat([a, b], axis=1)
        assert out.shape == (2, 5)
        nm.backward(nm.total(nm.mul(out, out)))
        assert np.allclose(a.grad, 2.0)
        assert np.allclose(b.grad, 2.0)

    def test_broadcast_rows_backward_sums(self):
        v = nm.tensor([1.0, 2.0], requires_grad=True)
        nm.backward(nm.total(nm.broadcast_rows(v, 4)))
        assert np.array_equal(v.grad, np.full(2, 4.0))

    def test_scale_rows(self):
        a = nm.tensor(np.ones((3, 2)), requires_grad=True)
        s = nm.tensor([1.0, 2.0, 3.0], requires_grad=True)
        out = nm.scale_rows(a, s)
        assert np.allclose(out.values, [[1, 1], [2, 2], [3, 3]])
        nm.backward(nm.total(out))
        assert np.allclose(s.grad, [2.0, 2.0, 2.0])
        assert np.allclose(a.grad, [[1, 1], [2, 2], [3, 3]])

    def test_mean_rows_and_row_sums(self):
        a = nm.tensor([[1.0, 3.0], [5.0, 7.0]], requires_grad=True)
        assert np.array_equal(nm.mean_rows(a).values, [3.0, 5.0])
        assert np.array_equal(nm.row_sums(a).values, [4.0, 12.0])

    def test_take_col(self):
        a = nm.tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        out = nm.take_col(a, 1)
        assert np.array_equal(out.values, [2.0, 4.0])
        nm.backward(nm.total(out))
        assert np.array_equal(a.grad, [[0, 1], [0, 1]])


class TestGradCheck:
    def test_exact_quadratic(self):
        w = nm.tensor([1.0, 2.0], requires_grad=True, name="w")
        err = nm.grad_check(lambda: nm.total(nm.mul(w, w)), [w])
        assert err < 1e-9

    def test_composite_layers(self):
        rng = np.random.default_rng(5)
        w = nm.tensor(rng.normal(size=(4, 3)), requires_grad=True, name="w")
        x = nm.tensor(rng.normal(size=(3, 2)))

        def f():
            return nm.total(nm.sigmoid(nm.matmul(w, x)))

        assert nm.grad_check(f, [w]) < 1e-6

    def test_reports_offending_parameter(self):
        w = nm.tensor([0.5], requires_grad=True, name="w")

        def f():
            return nm.total(nm.log(nm.sub(w, 0.5 - 1e-9)))

        with pytest.raises((DomainError,)):
            nm.grad_check(f, [w])

    def test_gradient_correctness_sweep(self):
        # Every op family at double precision, ten seeds.
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            w = nm.tensor(rng.normal(size=(3, 4)), requires_grad=True, name="w")
            v = nm.tensor(rng.normal(size=4), requires_grad=True, name="v")
            slope = nm.tensor([0.3], requires_grad=True, name="slope")
            x = nm.tensor(rng.normal(size=(4, 3)))

            def f():
                h = nm.matmul(w, x)
                h = nm.prelu(h, slope)
                h = nm.softmax(h)
                s = nm.total(nm.mul(h, h))
                t = nm.total(nm.softplus(nm.mul(v, v)))
                return nm.add(s, t)

            assert nm.grad_check(f, [w, v, slope]) < 1e-4
