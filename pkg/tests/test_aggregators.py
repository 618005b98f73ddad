"""Aggregation strategy contracts: values, symmetry, gradients."""

import numpy as np
import pytest

from bagforge import aggregators as agg
from bagforge import model as mdl
from bagforge import numcore as nc
from bagforge.errors import ConfigError, DomainError


def make_bag(data, label=0, k=4, core_id="core", dtype=np.float32):
    return agg.Bag(core_id=core_id, label=label, k=k,
                   instances=nc.Tensor(np.asarray(data, dtype=dtype), dtype=dtype))


def rand_bag(rng, n, d, dtype=np.float32, k=4):
    return make_bag(rng.standard_normal((n, d)), k=k, dtype=dtype)


class TestBgap:
    def test_mean_of_constant_rows(self):
        v = [1.0, -2.0, 0.5]
        out = agg.bgap(make_bag([v, v, v]))
        np.testing.assert_allclose(out.vector.data, [v], atol=1e-7)

    def test_column_means(self):
        out = agg.bgap(make_bag([[1.0, 3.0], [3.0, 1.0]]))
        np.testing.assert_allclose(out.vector.data, [[2.0, 2.0]], atol=1e-7)

    def test_empty_bag_rejected(self):
        with pytest.raises(DomainError, match="empty"):
            make_bag(np.zeros((0, 3)))


class TestBgmp:
    def test_column_maxima(self):
        out = agg.bgmp(make_bag([[1.0, 3.0], [3.0, 1.0]]))
        np.testing.assert_array_equal(out.vector.data, [[3.0, 3.0]])

    def test_single_instance_identity(self):
        row = np.array([[0.1, -0.7, 2.0]], dtype=np.float32)
        out = agg.bgmp(make_bag(row))
        np.testing.assert_array_equal(out.vector.data, row)

    def test_duplicate_max_gradient_to_lowest_row(self):
        x = nc.Tensor([[5.0, 1.0], [5.0, 1.0], [0.0, 1.0]], requires_grad=True)
        bag = agg.Bag(core_id="t", label=0, k=2, instances=x)
        with nc.Tape() as tape:
            loss = nc.sum_all(agg.bgmp(bag).vector)
        nc.backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])


class TestAttentionPool:
    def _params(self, d, seed=3, hidden=8):
        rng = np.random.default_rng(seed)
        return agg.init_aggregator(agg.MILATT, d, 4, rng, hidden=hidden)

    def test_singleton_bag(self):
        bag = make_bag([[2.0, -1.0, 0.5]])
        out = agg.attention_pool(bag, self._params(3))
        np.testing.assert_array_equal(out.attention.data, [[1.0]])
        np.testing.assert_allclose(out.vector.data, bag.instances.data, atol=1e-6)

    def test_identical_instances_uniform_weights(self):
        bag = make_bag([[1.0, 2.0]] * 5)
        out = agg.attention_pool(bag, self._params(2))
        np.testing.assert_allclose(out.attention.data, np.full((1, 5), 0.2), atol=1e-6)

    def test_matches_straight_line_oracle(self):
        rng = np.random.default_rng(17)
        bag = rand_bag(rng, 4, 3)
        params = self._params(3)
        out = agg.attention_pool(bag, params)
        # independent recomputation in plain float64 numpy
        x = bag.instances.data.astype(np.float64)
        v = params.milatt.v.data.astype(np.float64)
        w = params.milatt.w.data.astype(np.float64)
        scores = np.tanh(x @ v) @ w
        e = np.exp(scores - scores.max())
        a = (e / e.sum()).reshape(1, -1)
        np.testing.assert_allclose(out.attention.data, a, atol=1e-5)
        np.testing.assert_allclose(out.vector.data, a @ x, atol=1e-5)

    def test_wrong_variant_rejected(self):
        with pytest.raises(ConfigError):
            agg.attention_pool(make_bag([[1.0]]), agg.AggregatorParams(agg.BGAP, 1))

    def test_bad_hidden_size(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError, match="hidden"):
            agg.init_aggregator(agg.MILATT, 4, 2, rng, hidden=0)


class TestSequenceSquaring:
    def test_next_square_values(self):
        # ceil(sqrt(3))^2 = 4; with the class token the sequence length is 5
        assert agg.squared_length(3) == 4
        assert agg.squared_length(1) == 1
        assert agg.squared_length(4) == 4
        assert agg.squared_length(5) == 9
        assert agg.squared_length(121) == 121

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 7, 9])
    def test_forward_works_across_pad_regimes(self, n):
        rng = np.random.default_rng(n)
        params = agg.init_aggregator(agg.TRANSMIL, 6, 3, rng, d_model=8, heads=2)
        bag = rand_bag(rng, n, 6, k=3)
        logits = agg.transmil_forward(bag, params)
        assert logits.shape == (1, 3)
        probs = nc.softmax(logits)
        assert abs(probs.data.sum() - 1.0) < 1e-6


class TestPermutationSymmetry:
    """bgap/bgmp/milatt are order-free; transmil is only deterministic."""

    @pytest.mark.parametrize("variant", [agg.BGAP, agg.BGMP, agg.MILATT])
    def test_invariant_under_100_permutations(self, variant):
        rng = np.random.default_rng(23)
        bag = rand_bag(rng, 12, 6)
        params = agg.init_aggregator(variant, 6, 4, rng, hidden=16)
        if variant == agg.MILATT:
            base = agg.attention_pool(bag, params).vector.data
        else:
            base = mdl.aggregate(bag, params).vector.data
        for _ in range(100):
            perm = rng.permutation(12)
            pbag = make_bag(bag.instances.data[perm])
            if variant == agg.MILATT:
                out = agg.attention_pool(pbag, params)
                w = out.attention.data
                assert (w >= 0).all() and abs(w.sum() - 1.0) < 1e-5
                got = out.vector.data
            else:
                got = mdl.aggregate(pbag, params).vector.data
            np.testing.assert_allclose(got, base, atol=1e-5)

    def test_attention_weights_probability_vector(self):
        rng = np.random.default_rng(7)
        params = agg.init_aggregator(agg.MILATT, 5, 4, rng, hidden=8)
        for _ in range(25):
            bag = rand_bag(rng, int(rng.integers(1, 9)), 5)
            w = agg.attention_pool(bag, params).attention.data
            assert (w >= 0).all()
            assert abs(w.sum() - 1.0) < 1e-5

    def test_transmil_deterministic_not_symmetric(self):
        rng = np.random.default_rng(5)
        params = agg.init_aggregator(agg.TRANSMIL, 6, 3, rng, d_model=8, heads=2)
        bag = rand_bag(rng, 7, 6, k=3)
        a = agg.transmil_forward(bag, params).data
        b = agg.transmil_forward(bag, params).data
        np.testing.assert_array_equal(a, b)  # bitwise repeatable


class TestTrainableCounts:
    def test_parameter_free_variants(self):
        assert agg.AggregatorParams(agg.BGAP, 512).named_tensors() == []
        assert agg.AggregatorParams(agg.BGMP, 512).named_tensors() == []

    def test_transmil_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        params = agg.init_aggregator(agg.TRANSMIL, 8, 3, rng, d_model=8, heads=2)
        from bagforge.errors import ShapeError
        with pytest.raises(ShapeError, match="dimension"):
            agg.transmil_forward(rand_bag(rng, 3, 5, k=3), params)

    def test_head_count_must_divide(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError, match="divisible"):
            agg.init_aggregator(agg.TRANSMIL, 8, 3, rng, d_model=10, heads=4)


class TestAggregatorGradients:
    """Each aggregator composed with the classifier and the weighted loss
    passes a central-difference gradient check."""

    @pytest.mark.parametrize("variant", list(agg.VARIANTS))
    def test_composite_finite_diff(self, variant):
        for seed in range(3):
            rng = np.random.default_rng(900 + seed)
            d = 6
            params = mdl.init_model(variant, d, 3, seed, d_model=8, heads=2,
                                    hidden=8, dtype=np.float64)
            # zero-initialized heads have structurally zero gradients at the
            # origin for some inputs; nudge all weights off zero
            tensors = [t for _, t in params.named_tensors()]
            for t in tensors:
                t.data += rng.standard_normal(t.shape) * 0.05
            bag = rand_bag(rng, int(rng.integers(1, 7)), d, dtype=np.float64, k=3)
            weights = mdl.ClassWeights(np.array([0.5, 1.5, 1.0]))

            def f():
                s = mdl.forward_classify(bag, params)
                return mdl.weighted_ce(s, mdl.one_hot(bag.label, 3), weights)

            assert nc.finite_diff_check(f, tensors, h=1e-5) < 1e-2
