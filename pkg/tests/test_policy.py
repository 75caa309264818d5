"""Value network, greedy and pointwise inference, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from marketrank import policy
from marketrank.policy import ParamVector, PolicyConfig
from marketrank.rngutil import derive_rng

from conftest import make_doc


def random_docs(rng, n, feature_dim, leaves=("cat_a", "cat_b")):
    return [
        make_doc(
            f"d{j:03d}",
            features=rng.standard_normal(feature_dim),
            leaf=leaves[int(rng.integers(0, len(leaves)))],
        )
        for j in range(n)
    ]


class TestInitParams:
    def test_static_layout_size(self):
        config = PolicyConfig(feature_dim=20, hidden_dims=(20,))
        assert policy.param_count(config) == 20 * 20 + 20 + 20 * 1 + 1  # 441

    def test_stochastic_input_gets_noise_column(self):
        config = PolicyConfig(value_fn="stochastic", feature_dim=19, hidden_dims=(20,))
        assert config.input_width == 20
        assert policy.param_count(config) == 441

    def test_deterministic_per_seed(self):
        config = PolicyConfig(feature_dim=6, hidden_dims=(4,))
        a = policy.init_params(config, seed=3)
        b = policy.init_params(config, seed=3)
        assert np.array_equal(a.values, b.values)
        c = policy.init_params(config, seed=4)
        assert not np.array_equal(a.values, c.values)

    def test_biases_zero_and_weights_scaled(self):
        config = PolicyConfig(feature_dim=50, hidden_dims=(40,))
        params = policy.init_params(config, seed=0)
        segments = params.segments()
        assert np.all(segments[1] == 0.0) and np.all(segments[3] == 0.0)
        assert segments[0].std() == pytest.approx(1 / np.sqrt(50), rel=0.15)


class TestMlpForward:
    def test_zero_parameters_give_zero(self):
        config = PolicyConfig(feature_dim=3, hidden_dims=(4,))
        params = ParamVector(np.zeros(policy.param_count(config)), policy.layout_for(config))
        assert policy.mlp_forward(params, np.ones(3)) == 0.0

    def test_rectifier_clamps_negative_preactivation(self):
        config = PolicyConfig(feature_dim=1, hidden_dims=(1,))
        # One hidden unit: h = relu(w1*x + b1); out = w2*h + b2
        params = ParamVector(np.array([1.0, 0.0, 1.0, 0.0]), policy.layout_for(config))
        assert policy.mlp_forward(params, np.array([2.0])) == pytest.approx(2.0)
        assert policy.mlp_forward(params, np.array([-2.0])) == 0.0

    def test_matches_independent_matrix_oracle(self):
        rng = np.random.default_rng(5)
        config = PolicyConfig(feature_dim=7, hidden_dims=(5, 3))
        params = policy.init_params(config, seed=1)
        x = rng.standard_normal(7)

        w1, b1, w2, b2, w3, b3 = params.segments()
        h1 = np.maximum(w1.T @ x + b1, 0.0)
        h2 = np.maximum(w2.T @ h1 + b2, 0.0)
        expected = float((w3.T @ h2 + b3)[0])
        assert policy.mlp_forward(params, x) == pytest.approx(expected, abs=1e-12)

    def test_width_mismatch_rejected(self):
        config = PolicyConfig(feature_dim=3, hidden_dims=(2,))
        params = policy.init_params(config, seed=0)
        with pytest.raises(ValueError, match="width"):
            policy.mlp_forward(params, np.ones(4))

    def test_batch_rows_match_single_calls(self):
        config = PolicyConfig(feature_dim=4, hidden_dims=(6,))
        params = policy.init_params(config, seed=2)
        rng = np.random.default_rng(0)
        xs = rng.standard_normal((5, 4))
        batch = policy.mlp_forward(params, xs)
        singles = [policy.mlp_forward(params, x) for x in xs]
        assert np.allclose(batch, singles, atol=1e-12)


class TestAggregateState:
    def test_empty_selection_is_zero_vector(self):
        out = policy.aggregate_state([], 3)
        assert np.array_equal(out, np.zeros(3))

    def test_single_doc_is_its_features(self):
        doc = make_doc("d", features=(1.5, -2.0))
        assert np.array_equal(policy.aggregate_state([doc], 2), [1.5, -2.0])

    def test_elementwise_mean(self):
        docs = [make_doc("a", (0.0, 2.0)), make_doc("b", (2.0, 0.0))]
        assert np.array_equal(policy.aggregate_state(docs, 2), [1.0, 1.0])


class TestValue:
    def test_static_zero_parameters(self):
        config = PolicyConfig(feature_dim=2)
        params = ParamVector(np.zeros(policy.param_count(config)), policy.layout_for(config))
        doc = make_doc("d", (1.0, 2.0))
        assert policy.value(params, config, doc, np.zeros(2)) == 0.0

    def test_stochastic_with_zero_noise_weight_equals_static(self):
        static_cfg = PolicyConfig(feature_dim=3, hidden_dims=(4,))
        stoch_cfg = PolicyConfig(value_fn="stochastic", feature_dim=3, hidden_dims=(4,))
        static = policy.init_params(static_cfg, seed=7)

        # Embed the static weights and zero the noise-input row.
        sw1, sb1, sw2, sb2 = static.segments()
        w1 = np.zeros((4, 4))
        w1[:3] = sw1
        stoch = ParamVector(
            np.concatenate([w1.ravel(), sb1, sw2.ravel(), sb2]),
            policy.layout_for(stoch_cfg),
        )
        doc = make_doc("d", (0.3, -0.2, 1.0))
        state = np.array([0.1, 0.0, -0.5])
        s_val = policy.value(static, static_cfg, doc, state)
        for seed in range(5):
            z_val = policy.value(stoch, stoch_cfg, doc, state, rng=derive_rng(seed))
            assert z_val == pytest.approx(s_val, abs=1e-12)

    def test_stochastic_reproducible_per_stream(self):
        config = PolicyConfig(value_fn="stochastic", feature_dim=2, hidden_dims=(3,))
        params = policy.init_params(config, seed=1)
        doc = make_doc("d", (0.5, 0.5))
        a = policy.value(params, config, doc, np.zeros(2), rng=derive_rng(42))
        b = policy.value(params, config, doc, np.zeros(2), rng=derive_rng(42))
        assert a == b


def linear_params(config: PolicyConfig, w: np.ndarray, b: float = 0.0) -> ParamVector:
    """A purely affine value network (no hidden layers)."""
    assert config.hidden_dims == ()
    return ParamVector(np.concatenate([w, [b]]), policy.layout_for(config))


class TestGreedyRank:
    def test_state_independent_scorer_equals_sort(self):
        rng = np.random.default_rng(3)
        config = PolicyConfig(feature_dim=4, hidden_dims=(), k_rank=6)
        w = rng.standard_normal(4)
        params = linear_params(config, w)
        docs = random_docs(rng, 6, 4)
        ranking = policy.greedy_rank(params, config, docs, query_id="q")
        # Affine value of (state - feats) shifts all docs by the same state
        # term, so greedy selection reduces to sorting by -w @ feats.
        expected = sorted(
            docs, key=lambda d: (float(w @ np.array(d.features)), d.doc_id)
        )
        assert [d.doc_id for d in ranking.ordered_docs] == [d.doc_id for d in expected]

    def test_k_one_picks_argmax(self):
        rng = np.random.default_rng(4)
        config = PolicyConfig(feature_dim=3, hidden_dims=(), k_rank=1)
        w = np.array([1.0, 0.0, 0.0])
        params = linear_params(config, w)
        docs = random_docs(rng, 5, 3)
        ranking = policy.greedy_rank(params, config, docs)
        best = min(docs, key=lambda d: (d.features[0], d.doc_id))
        assert ranking.ordered_docs == (best,)
        assert len(ranking.ordered_docs) == 1

    def test_matches_step_by_step_replay(self):
        """Independent oracle: replay selection one value() call at a time."""
        rng = np.random.default_rng(8)
        config = PolicyConfig(feature_dim=5, hidden_dims=(6,), k_rank=6)
        params = policy.init_params(config, seed=11)
        docs = random_docs(rng, 6, 5)

        remaining = sorted(docs, key=lambda d: d.doc_id)
        picked = []
        while remaining and len(picked) < config.k_rank:
            state = policy.aggregate_state(picked, config.feature_dim)
            values = [policy.value(params, config, d, state) for d in remaining]
            best = int(np.argmax(values))
            picked.append(remaining.pop(best))

        ranking = policy.greedy_rank(params, config, docs, query_id="q")
        assert [d.doc_id for d in ranking.ordered_docs] == [d.doc_id for d in picked]

    def test_zero_parameters_rank_by_doc_id(self):
        config = PolicyConfig(feature_dim=2, hidden_dims=(3,), k_rank=4)
        params = ParamVector(np.zeros(policy.param_count(config)), policy.layout_for(config))
        docs = [make_doc(i, (0.5, 0.5)) for i in ("dc", "da", "db")]
        ranking = policy.greedy_rank(params, config, docs)
        assert [d.doc_id for d in ranking.ordered_docs] == ["da", "db", "dc"]

    def test_emits_valid_ranking(self):
        rng = np.random.default_rng(13)
        config = PolicyConfig(feature_dim=3, hidden_dims=(4,), k_rank=10)
        params = policy.init_params(config, seed=5)
        docs = random_docs(rng, 7, 3)
        ranking = policy.greedy_rank(params, config, docs)
        ids = [d.doc_id for d in ranking.ordered_docs]
        assert len(ids) == 7 and len(set(ids)) == 7

    def test_truncates_to_k_rank(self):
        rng = np.random.default_rng(14)
        config = PolicyConfig(feature_dim=3, hidden_dims=(4,), k_rank=3)
        params = policy.init_params(config, seed=5)
        ranking = policy.greedy_rank(params, config, random_docs(rng, 7, 3))
        assert len(ranking.ordered_docs) == 3


class TestPointwiseRank:
    def test_zero_parameters_rank_by_doc_id(self):
        config = PolicyConfig(kind="pointwise", feature_dim=2, hidden_dims=(3,))
        params = ParamVector(np.zeros(policy.param_count(config)), policy.layout_for(config))
        docs = [make_doc(i, (1.0, 1.0)) for i in ("dz", "dm", "da")]
        ranking = policy.pointwise_rank(params, config, docs)
        assert [d.doc_id for d in ranking.ordered_docs] == ["da", "dm", "dz"]

    def test_first_feature_scorer_sorts_descending(self):
        config = PolicyConfig(kind="pointwise", feature_dim=2, hidden_dims=())
        # score = -(0 - x) @ w with w = (-1, 0) -> equals first feature
        params = linear_params(config, np.array([-1.0, 0.0]))
        docs = [
            make_doc("d0", (0.3, 0.0)),
            make_doc("d1", (0.9, 0.0)),
            make_doc("d2", (-0.5, 0.0)),
        ]
        ranking = policy.pointwise_rank(params, config, docs)
        firsts = [d.features[0] for d in ranking.ordered_docs]
        assert firsts == sorted(firsts, reverse=True)

    def test_stochastic_orderings_vary_across_seeds(self):
        rng = np.random.default_rng(21)
        config = PolicyConfig(
            kind="pointwise", value_fn="stochastic", feature_dim=3, hidden_dims=(8,)
        )
        params = policy.init_params(config, seed=9)
        docs = random_docs(rng, 8, 3)
        orders = {
            tuple(
                d.doc_id
                for d in policy.pointwise_rank(params, config, docs, rng=derive_rng(s)).ordered_docs
            )
            for s in range(5)
        }
        assert len(orders) > 1

    def test_greedy_equals_pointwise_for_affine_nets(self):
        rng = np.random.default_rng(30)
        for trial in range(50):
            F = int(rng.integers(2, 6))
            config_g = PolicyConfig(kind="greedy", feature_dim=F, hidden_dims=(), k_rank=8)
            config_p = PolicyConfig(kind="pointwise", feature_dim=F, hidden_dims=(), k_rank=8)
            params = linear_params(config_g, rng.standard_normal(F), float(rng.standard_normal()))
            docs = random_docs(rng, int(rng.integers(2, 9)), F)
            g = policy.greedy_rank(params, config_g, docs)
            p = policy.pointwise_rank(params, config_p, docs)
            assert [d.doc_id for d in g.ordered_docs] == [d.doc_id for d in p.ordered_docs]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        config = PolicyConfig(value_fn="stochastic", feature_dim=4, hidden_dims=(5,))
        params = policy.init_params(config, seed=3)
        path = tmp_path / "ckpt.json"
        policy.save_checkpoint(params, config, path)
        loaded, loaded_cfg = policy.load_checkpoint(path)
        assert loaded_cfg == config
        assert np.array_equal(loaded.values, params.values)

    def test_layout_mismatch_names_dims(self, tmp_path):
        import json

        config = PolicyConfig(feature_dim=4, hidden_dims=(5,))
        params = policy.init_params(config, seed=3)
        path = tmp_path / "ckpt.json"
        policy.save_checkpoint(params, config, path)
        payload = json.loads(path.read_text())
        payload["policy"]["feature_dim"] = 6
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError, match="layout"):
            policy.load_checkpoint(path)
