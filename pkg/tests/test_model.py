"""Network forward/backward correctness against hand arithmetic and finite
differences, plus optimizer and serialization contracts."""

import math

import numpy as np
import pytest

from oracles import max_relative_error, random_bundle

from enrollnet.features import FeatureBundle
from enrollnet.model import (
    AdamWConfig,
    AdamWState,
    DimensionMismatch,
    EmptySentence,
    LengthMismatch,
    ModelDims,
    adamw_step,
    backward,
    batch_gradients,
    batch_loss,
    bce_loss,
    bce_with_logits,
    cross_layer,
    finite_diff,
    forward,
    init_params,
    load_model,
    save_model,
    sentence_attention,
    sigmoid,
    word_attention,
)

SMALL_DIMS = ModelDims(word_dim=3, hidden=2, attn=2, cross_width=4, cross_layers=2)


def zero_params(dims):
    params = init_params(dims, seed=0)
    for _, arr in params.param_items():
        arr[...] = 0.0
    return params


class TestCrossLayer:
    def test_identity_when_w_and_b_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x0 = rng.normal(size=6)
            xl = rng.normal(size=6)
            np.testing.assert_array_equal(cross_layer(x0, xl, np.zeros(6), np.zeros(6)), xl)

    def test_hand_example_one(self):
        out = cross_layer(np.array([1.0, 2.0]), np.array([1.0, 2.0]),
                          np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        np.testing.assert_array_equal(out, [2.0, 4.0])

    def test_hand_example_two(self):
        out = cross_layer(np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                          np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [2.0, 2.0])

    def test_outer_product_equivalence(self):
        """x0 (xl . w) equals the rank-one matrix form (x0 xl^T) w."""
        rng = np.random.default_rng(1)
        for _ in range(1000):
            d = int(rng.integers(2, 10))
            x0, xl, w, b = (rng.normal(size=d) for _ in range(4))
            via_dot = cross_layer(x0, xl, w, b)
            via_outer = np.outer(x0, xl) @ w + b + xl
            np.testing.assert_allclose(via_dot, via_outer, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            cross_layer(np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3))


class TestWordAttention:
    def test_singleton_softmax(self):
        params = init_params(SMALL_DIMS, seed=3)
        trace = word_attention(np.array([[0.1, -0.2, 0.3]]), params)
        np.testing.assert_array_equal(trace.alpha, [1.0])
        np.testing.assert_allclose(trace.summary, trace.hidden[0], atol=1e-15)

    def test_identical_words_split_evenly(self):
        params = init_params(SMALL_DIMS, seed=4)
        word = np.array([0.4, 0.0, -0.7])
        trace = word_attention(np.stack([word, word]), params)
        np.testing.assert_allclose(trace.alpha, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(trace.summary, trace.hidden[0], atol=1e-15)

    def test_engineered_logits(self):
        """Saturated tanh units pin the logits to (0, ln 3), so the weights
        must come out as softmax([0, ln 3]) = [1/4, 3/4]."""
        dims = ModelDims(word_dim=1, hidden=1, attn=1, cross_width=1, cross_layers=1)
        params = zero_params(dims)
        params.word_enc_w[...] = 100.0
        params.word_attn_w[...] = 20.0
        params.word_ctx[...] = math.log(3.0)
        trace = word_attention(np.array([[0.0], [1.0]]), params)
        np.testing.assert_allclose(trace.alpha, [0.25, 0.75], atol=1e-12)

    def test_normalization_and_nonnegativity(self):
        rng = np.random.default_rng(5)
        params = init_params(SMALL_DIMS, seed=5)
        for _ in range(200):
            words = rng.uniform(-2, 2, size=(int(rng.integers(1, 7)), 3))
            alpha = word_attention(words, params).alpha
            assert abs(alpha.sum() - 1.0) <= 1e-9
            assert np.all(alpha >= 0.0)

    def test_permutation_equivariance(self):
        """Permuting the words permutes alpha identically and keeps u_i."""
        rng = np.random.default_rng(6)
        params = init_params(SMALL_DIMS, seed=6)
        for _ in range(200):
            words = rng.uniform(-2, 2, size=(int(rng.integers(2, 7)), 3))
            perm = rng.permutation(words.shape[0])
            base = word_attention(words, params)
            shuffled = word_attention(words[perm], params)
            np.testing.assert_allclose(shuffled.alpha, base.alpha[perm], atol=1e-9)
            np.testing.assert_allclose(shuffled.summary, base.summary, atol=1e-9)

    def test_empty_sentence_rejected(self):
        params = init_params(SMALL_DIMS, seed=7)
        with pytest.raises(EmptySentence):
            word_attention(np.zeros((0, 3)), params)


class TestSentenceAttention:
    def test_single_sentence(self):
        params = init_params(SMALL_DIMS, seed=8)
        u1 = np.array([0.3, -0.4])
        vector, beta, _ = sentence_attention([u1], params.sent_ctx_inclusion, params)
        np.testing.assert_array_equal(beta, [1.0])
        np.testing.assert_allclose(vector, u1, atol=1e-15)

    def test_empty_group(self):
        params = init_params(SMALL_DIMS, seed=9)
        vector, beta, scorer = sentence_attention([], params.sent_ctx_exclusion, params)
        np.testing.assert_array_equal(vector, np.zeros(2))
        assert beta.size == 0 and scorer is None

    def test_identical_sentences_split_evenly(self):
        params = init_params(SMALL_DIMS, seed=10)
        u = np.array([0.7, 0.1])
        _, beta, _ = sentence_attention([u, u], params.sent_ctx_inclusion, params)
        np.testing.assert_allclose(beta, [0.5, 0.5], atol=1e-15)


class TestForward:
    def test_zero_params_predict_half(self):
        rng = np.random.default_rng(11)
        params = zero_params(SMALL_DIMS)
        trace = forward(random_bundle(rng, SMALL_DIMS), params)
        assert trace.logit == 0.0
        assert trace.y_hat == 0.5

    def test_empty_criteria_uses_cross_path_only(self):
        """With no sentences the deep contribution is a zero vector, so the
        logit must equal the manually composed cross path plus bias."""
        rng = np.random.default_rng(12)
        params = init_params(SMALL_DIMS, seed=12)
        bundle = random_bundle(rng, SMALL_DIMS, n_inclusion=0, n_exclusion=0)
        trace = forward(bundle, params)
        x = bundle.cross_input
        for w, b in zip(params.cross_w, params.cross_b):
            x = cross_layer(bundle.cross_input, x, w, b)
        expected = float(x @ params.head_w[4:]) + params.head_b[0]
        np.testing.assert_allclose(trace.logit, expected, atol=1e-12)

    def test_forward_composes_per_op_oracles(self):
        """L=1 forward equals the manual composition of the public ops."""
        dims = ModelDims(word_dim=2, hidden=2, attn=2, cross_width=3, cross_layers=1)
        params = init_params(dims, seed=13)
        rng = np.random.default_rng(13)
        bundle = random_bundle(rng, dims, n_inclusion=2, n_exclusion=1, max_words=3)
        trace = forward(bundle, params)

        inc_sums = [word_attention(m, params).summary for m in bundle.inclusion_words]
        exc_sums = [word_attention(m, params).summary for m in bundle.exclusion_words]
        u_inc, _, _ = sentence_attention(inc_sums, params.sent_ctx_inclusion, params)
        u_exc, _, _ = sentence_attention(exc_sums, params.sent_ctx_exclusion, params)
        x1 = cross_layer(bundle.cross_input, bundle.cross_input, params.cross_w[0], params.cross_b[0])
        logit = float(np.concatenate([u_inc, u_exc, x1]) @ params.head_w) + params.head_b[0]
        np.testing.assert_allclose(trace.logit, logit, atol=1e-12)
        np.testing.assert_allclose(trace.y_hat, sigmoid(logit), atol=1e-15)

    def test_output_strictly_inside_unit_interval(self):
        params = zero_params(SMALL_DIMS)
        params.head_b[...] = 1000.0  # saturates the sigmoid
        rng = np.random.default_rng(14)
        trace = forward(random_bundle(rng, SMALL_DIMS), params)
        assert 0.0 < trace.y_hat < 1.0

    def test_wrong_cross_width_rejected(self):
        params = init_params(SMALL_DIMS, seed=15)
        bundle = FeatureBundle(
            nct_id="NCT00000000",
            cross_input=np.zeros(5),
            inclusion_words=[],
            exclusion_words=[],
        )
        with pytest.raises(DimensionMismatch):
            forward(bundle, params)


class TestLoss:
    def test_perfect_prediction(self):
        assert bce_loss([1.0], [1.0]) < 1e-9

    def test_half_is_ln2(self):
        np.testing.assert_allclose(bce_loss([0.5], [1.0]), math.log(2.0), atol=1e-12)

    def test_mean_of_two_identical_terms(self):
        np.testing.assert_allclose(bce_loss([0.5, 0.5], [1.0, 0.0]), math.log(2.0), atol=1e-12)

    def test_logit_form_matches_probability_form(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            z = float(rng.uniform(-10, 10))
            y = float(rng.integers(0, 2))
            np.testing.assert_allclose(bce_with_logits(z, y), bce_loss([sigmoid(z)], [y]), atol=1e-9)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(17)
        probs = rng.uniform(0, 1, size=100)
        labels = rng.integers(0, 2, size=100)
        assert bce_loss(probs, labels) >= 0.0


class TestBackward:
    def test_zero_params_head_bias_gradient(self):
        """With every parameter zero and y=1, dLoss/db_p = sigmoid(0) - 1."""
        rng = np.random.default_rng(18)
        params = zero_params(SMALL_DIMS)
        trace = forward(random_bundle(rng, SMALL_DIMS), params)
        grads = backward(trace, params, y=1.0)
        np.testing.assert_allclose(grads["head_b"], [-0.5], atol=1e-15)

    def test_fixed_point_has_zero_head_gradient(self):
        rng = np.random.default_rng(19)
        params = init_params(SMALL_DIMS, seed=19)
        trace = forward(random_bundle(rng, SMALL_DIMS), params)
        grads = backward(trace, params, y=trace.y_hat)
        np.testing.assert_allclose(grads["head_b"], [0.0], atol=1e-15)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        """Spot checks at d=3, h=2, a=2, d_c=4: analytic vs central FD."""
        rng = np.random.default_rng(seed)
        params = init_params(SMALL_DIMS, seed=seed)
        bundles = [random_bundle(rng, SMALL_DIMS) for _ in range(2)]
        labels = [float(rng.integers(0, 2)) for _ in bundles]
        _, analytic = batch_gradients(params, bundles, labels)
        numeric = finite_diff(params, bundles, labels, step=1e-5)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(20)
        params = init_params(SMALL_DIMS, seed=20)
        bundle = random_bundle(rng, SMALL_DIMS)
        trace = forward(bundle, params)
        grads = backward(trace, params, y=1.0, want_input_grad=True)
        numeric = np.zeros(SMALL_DIMS.cross_width)
        for i in range(SMALL_DIMS.cross_width):
            original = bundle.cross_input[i]
            bundle.cross_input[i] = original + 1e-6
            above = bce_with_logits(forward(bundle, params).logit, 1.0)
            bundle.cross_input[i] = original - 1e-6
            below = bce_with_logits(forward(bundle, params).logit, 1.0)
            bundle.cross_input[i] = original
            numeric[i] = (above - below) / 2e-6
        np.testing.assert_allclose(grads["cross_input"], numeric, atol=1e-7)

    def test_batch_gradients_deterministic(self):
        rng = np.random.default_rng(21)
        params = init_params(SMALL_DIMS, seed=21)
        bundles = [random_bundle(rng, SMALL_DIMS) for _ in range(3)]
        labels = [1.0, 0.0, 1.0]
        loss_a, grads_a = batch_gradients(params, bundles, labels)
        loss_b, grads_b = batch_gradients(params, bundles, labels)
        assert loss_a == loss_b
        for name in grads_a:
            np.testing.assert_array_equal(grads_a[name], grads_b[name])


class TestAdamW:
    def test_first_step_hand_algebra(self):
        """Scalar param 1.0, grad 0.5, lr 0.001, no decay: m-hat 0.5,
        v-hat 0.25, so the step is ~0.001 and the param lands at 0.99900."""
        dims = ModelDims(word_dim=1, hidden=1, attn=1, cross_width=1, cross_layers=1)
        params = zero_params(dims)
        params.word_ctx[...] = 1.0
        grads = params.zero_grads()
        grads["word_ctx"][...] = 0.5
        state = AdamWState.for_params(params)
        adamw_step(params, grads, state, AdamWConfig(lr=0.001, weight_decay=0.0))
        np.testing.assert_allclose(params.word_ctx, [0.999], atol=1e-9)

    def test_zero_gradient_no_decay_is_identity(self):
        params = init_params(SMALL_DIMS, seed=22)
        reference = params.copy()
        state = AdamWState.for_params(params)
        adamw_step(params, params.zero_grads(), state, AdamWConfig(weight_decay=0.0))
        for (_, a), (_, b) in zip(params.param_items(), reference.param_items()):
            np.testing.assert_array_equal(a, b)

    def test_pure_decay_shrinks_by_exact_factor(self):
        cfg = AdamWConfig(lr=0.001, weight_decay=0.01)
        params = init_params(SMALL_DIMS, seed=23)
        expected = {name: arr * (1.0 - cfg.lr * cfg.weight_decay)
                    for name, arr in params.param_items()}
        state = AdamWState.for_params(params)
        adamw_step(params, params.zero_grads(), state, cfg)
        for name, arr in params.param_items():
            np.testing.assert_array_equal(arr, expected[name])

    def test_bias_correction_across_steps(self):
        """Constant gradient: after many steps the update approaches lr."""
        dims = ModelDims(word_dim=1, hidden=1, attn=1, cross_width=1, cross_layers=1)
        params = zero_params(dims)
        params.word_ctx[...] = 10.0
        state = AdamWState.for_params(params)
        cfg = AdamWConfig(lr=0.001, weight_decay=0.0)
        previous = 10.0
        for _ in range(50):
            grads = params.zero_grads()
            grads["word_ctx"][...] = 2.0
            adamw_step(params, grads, state, cfg)
            step = previous - float(params.word_ctx[0])
            previous = float(params.word_ctx[0])
        np.testing.assert_allclose(step, cfg.lr, rtol=1e-6)


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        params = init_params(SMALL_DIMS, seed=24)
        path = str(tmp_path / "model.json")
        save_model(params, path, feature_schema={"marker": 1})
        loaded, state, schema = load_model(path)
        assert state is None and schema == {"marker": 1}
        for (_, a), (_, b) in zip(params.param_items(), loaded.param_items()):
            np.testing.assert_array_equal(a, b)

    def test_optimizer_state_round_trip(self, tmp_path):
        params = init_params(SMALL_DIMS, seed=25)
        state = AdamWState.for_params(params)
        grads = params.zero_grads()
        grads["head_b"][...] = 1.0
        adamw_step(params, grads, state, AdamWConfig())
        path = str(tmp_path / "model.json")
        save_model(params, path, state=state)
        _, loaded_state, _ = load_model(path)
        assert loaded_state.step == 1
        np.testing.assert_array_equal(loaded_state.m["head_b"], state.m["head_b"])

    def test_dimension_mismatch_rejected(self, tmp_path):
        import json

        params = init_params(SMALL_DIMS, seed=26)
        path = str(tmp_path / "model.json")
        save_model(params, path)
        with open(path) as fh:
            doc = json.load(fh)
        doc["dims"]["hidden"] = 3
        with open(path, "w") as fh:
            json.dump(doc, fh)
        with pytest.raises(DimensionMismatch):
            load_model(path)

    def test_init_is_seed_deterministic(self):
        a = init_params(SMALL_DIMS, seed=27)
        b = init_params(SMALL_DIMS, seed=27)
        for (_, x), (_, y) in zip(a.param_items(), b.param_items()):
            np.testing.assert_array_equal(x, y)
        c = init_params(SMALL_DIMS, seed=28)
        assert not np.array_equal(a.head_w, c.head_w)
