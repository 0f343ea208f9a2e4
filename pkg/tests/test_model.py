"""Model forward/backward behavior and the checkpoint format."""

import numpy as np
import pytest

from reentry import corpus, model, numerics as nm, synth
from reentry.model import ModelConfig, ModelParams


def tiny_config(**overrides):
    defaults = dict(vocab_size=30, embed_dim=5, hidden_dim=4, dropout=0.2,
                    history_cap=5)
    defaults.update(overrides)
    return ModelConfig(**defaults)


def make_dataset(seed=0, n_conversations=6):
    cfg = synth.SynthConfig(
        pattern_weights={"ABA": 0.5, "ABC": 0.5},
        reentry_rates={"ABA": 1.0, "ABC": 0.0},
        n_conversations=n_conversations, vocab_size=10,
        turn_len_range=(1, 3), user_pool_size=12, seed=seed)
    convs = synth.generate_corpus(cfg)
    instances = corpus.extract_instances(convs)
    corpus.build_histories(instances, convs, cap=3)
    vocab = corpus.build_vocab(convs)
    return model.encode_dataset(instances, vocab), vocab


@pytest.fixture(scope="module")
def dataset():
    return make_dataset()


def zero_params(config):
    params = ModelParams(config, seed=0)
    for p in params.all_params():
        p.value[:] = 0.0
    return params


class TestForward:
    def test_all_zero_params_give_half_probabilities(self, dataset):
        enc_all, _ = dataset
        params = zero_params(tiny_config())
        out = model.forward(params, enc_all[0])
        assert out.y_main.item() == pytest.approx(0.5)
        assert out.y_spread.item() == pytest.approx(0.5)
        assert out.y_repeat.item() == pytest.approx(0.5)
        for y in out.y_authorship:
            assert y.item() == pytest.approx(0.5)

    def test_authorship_scores_cover_all_but_final_turn(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(), seed=1)
        for enc in enc_all[:8]:
            out = model.forward(params, enc)
            assert len(out.y_authorship) == len(enc.context_ids) - 1

    def test_probabilities_in_open_interval_and_attention_sums_to_one(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(), seed=2)
        for enc in enc_all[:8]:
            out = model.forward(params, enc)
            for y in [out.y_main, out.y_spread, out.y_repeat, *out.y_authorship]:
                assert 0.0 < y.item() < 1.0
            assert (out.attention > 0).all()
            assert out.attention.sum() == pytest.approx(1.0, abs=1e-9)

    def test_eval_forward_is_deterministic(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(), seed=3)
        a = model.forward(params, enc_all[0]).y_main.item()
        b = model.forward(params, enc_all[0]).y_main.item()
        assert a == b

    def test_train_forward_deterministic_given_seed(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(), seed=3)
        a = model.forward(params, enc_all[0], train_mode=True,
                          rng=np.random.default_rng(11)).y_main.item()
        b = model.forward(params, enc_all[0], train_mode=True,
                          rng=np.random.default_rng(11)).y_main.item()
        c = model.forward(params, enc_all[0], train_mode=True,
                          rng=np.random.default_rng(12)).y_main.item()
        assert a == b
        assert a != c

    def test_train_mode_requires_rng(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(), seed=3)
        with pytest.raises(ValueError):
            model.forward(params, enc_all[0], train_mode=True)

    def test_single_turn_context_rejected(self):
        params = ModelParams(tiny_config(), seed=0)
        enc = model.EncodedInstance(
            context_ids=[np.array([2, 3])], history_ids=[],
            label_reentry=0, label_focused=1, label_repeated=0,
            label_authorship=(), pattern="A", conv_id="c", position=1)
        with pytest.raises(ValueError):
            model.forward(params, enc)


class TestEncoders:
    def test_encode_turn_zero_weights_zero_init(self):
        params = zero_params(tiny_config())
        out = model.encode_turn(params, np.array([2, 3, 4]))
        np.testing.assert_allclose(out.value, np.zeros(8))

    def test_encode_turn_empty_errors(self):
        params = ModelParams(tiny_config(), seed=0)
        with pytest.raises(ValueError):
            model.encode_turn(params, np.array([], dtype=np.intp))

    def test_encode_turn_init_decays_by_half_per_word(self):
        # Zero weights leave the update gate at 0.5 and the candidate at 0,
        # so each direction's final state is 0.5^k times its init.
        params = zero_params(tiny_config())
        init = nm.constant(np.array([1.0, -2.0, 0.5, 4.0]))
        k = 3
        out = model.encode_turn(params, np.array([2, 3, 4]), init=(init, init))
        expected = np.concatenate([init.value * 0.5 ** k, init.value * 0.5 ** k])
        np.testing.assert_allclose(out.value, expected)

    def test_empty_history_is_zero_vector(self):
        params = ModelParams(tiny_config(), seed=5)
        out = model.encode_history(params, [])
        np.testing.assert_allclose(out.value, np.zeros(8))

    def test_single_history_turn_runs(self):
        params = ModelParams(tiny_config(), seed=5)
        out = model.encode_history(params, [np.array([2, 3])])
        assert out.value.shape == (8,)
        assert np.isfinite(out.value).all()

    def test_history_order_sensitivity(self):
        params = ModelParams(tiny_config(), seed=5)
        a, b = np.array([2, 3, 4]), np.array([5, 6])
        fwd = model.encode_history(params, [a, b]).value
        rev = model.encode_history(params, [b, a]).value
        assert not np.allclose(fwd, rev)

    def test_init_target_turn_range_and_zero_case(self):
        params = ModelParams(tiny_config(), seed=6)
        zero = model.init_target_turn(params, nm.constant(np.zeros(8)))
        np.testing.assert_allclose(zero.value, np.zeros(4))  # b is zero-initialized
        rand = model.init_target_turn(params, nm.constant(np.random.default_rng(0).normal(size=8)))
        assert (np.abs(rand.value) < 1.0).all()

    def test_attention_single_turn_is_identity(self):
        params = ModelParams(tiny_config(), seed=7)
        src = nm.constant(np.random.default_rng(1).normal(size=(1, 8)))
        pooled, weights = model.attention_pool(params, src)
        np.testing.assert_allclose(weights.value, [1.0])
        np.testing.assert_allclose(pooled.value, src.value[0])

    def test_attention_uniform_for_identical_rows(self):
        params = ModelParams(tiny_config(), seed=7)
        row_vec = np.random.default_rng(2).normal(size=8)
        src = nm.constant(np.tile(row_vec, (4, 1)))
        pooled, weights = model.attention_pool(params, src)
        np.testing.assert_allclose(weights.value, np.full(4, 0.25))
        np.testing.assert_allclose(pooled.value, row_vec)

    def test_conversation_encoder_zero_weights(self):
        params = zero_params(tiny_config())
        out = model.encode_conversation(params, nm.constant(np.ones((3, 8))))
        np.testing.assert_allclose(out.value, np.zeros((3, 8)))


class TestSharedTurnEncoder:
    def test_history_and_context_share_word_gru(self, dataset):
        # Single parameter home: the word-level GRU gradient collects
        # contributions from both the context and history paths.
        enc_all, _ = dataset
        enc = next(e for e in enc_all if e.history_ids)
        params = ModelParams(tiny_config(dropout=0.0), seed=8)
        params.zero_grads()
        out = model.forward(params, enc)
        out.y_main.backward()
        assert np.abs(params.turn_fwd.w_z.grad).max() > 0
        # The same parameter object is used for both paths.
        assert params.named()["turn_fwd.w_z"] is params.turn_fwd.w_z

    def test_history_gradient_reaches_projection(self, dataset):
        enc_all, _ = dataset
        enc = next(e for e in enc_all if e.history_ids)
        params = ModelParams(tiny_config(dropout=0.0), seed=9)
        params.zero_grads()
        model.forward(params, enc).y_main.backward()
        assert np.abs(params.hist_proj_w.grad).max() > 0


class TestAblations:
    def test_no_history_ignores_history_content(self, dataset):
        enc_all, _ = dataset
        enc = next(e for e in enc_all if e.history_ids)
        params = ModelParams(tiny_config(use_history=False), seed=10)
        stripped = model.EncodedInstance(**{**enc.__dict__, "history_ids": []})
        a = model.forward(params, enc).y_main.item()
        b = model.forward(params, stripped).y_main.item()
        assert a == b

    def test_no_attention_uses_mean_pooling(self, dataset):
        enc_all, _ = dataset
        params = ModelParams(tiny_config(use_attention=False), seed=11)
        out = model.forward(params, enc_all[0])
        m = len(enc_all[0].context_ids)
        np.testing.assert_allclose(out.attention, np.full(m, 1.0 / m))

    def test_ablations_keep_parameter_shapes(self):
        base = ModelParams(tiny_config(), seed=0)
        no_hist = ModelParams(tiny_config(use_history=False), seed=0)
        no_att = ModelParams(tiny_config(use_attention=False), seed=0)
        for variant in (no_hist, no_att):
            assert {n: p.value.shape for n, p in base.named().items()} == \
                {n: p.value.shape for n, p in variant.named().items()}

    def test_attention_over_turn_vectors_differs(self, dataset):
        enc_all, _ = dataset
        conv_att = ModelParams(tiny_config(attention_over="conv"), seed=12)
        turn_att = ModelParams(tiny_config(attention_over="turn"), seed=12)
        a = model.forward(conv_att, enc_all[0]).y_main.item()
        b = model.forward(turn_att, enc_all[0]).y_main.item()
        assert a != b


class TestGradients:
    def test_full_model_gradient_check(self, dataset):
        # End-to-end: a combined loss over every head, checked against
        # central finite differences on a tiny instance.
        enc_all, _ = dataset
        enc = next(e for e in enc_all if e.history_ids and len(e.context_ids) >= 3)
        params = ModelParams(tiny_config(dropout=0.0), seed=13)

        def loss():
            out = model.forward(params, enc)
            terms = [out.y_main, out.y_spread, out.y_repeat, *out.y_authorship]
            acc = terms[0]
            for t in terms[1:]:
                acc = nm.add(acc, t)
            return nm.mul(acc, acc)

        report = nm.grad_check(loss, params.all_params(), eps=1e-5, tol=1e-4,
                               max_entries=300, rng=np.random.default_rng(0))
        assert report.passed, report.violations[:5]

    def test_gradient_flows_through_history_init_path(self, dataset):
        enc_all, _ = dataset
        enc = next(e for e in enc_all if e.history_ids)
        params = ModelParams(tiny_config(dropout=0.0), seed=14)

        def loss():
            return model.forward(params, enc).y_main

        report = nm.grad_check(
            loss, [params.hist_proj_w, params.hist_proj_b] + params.hist_fwd.all(),
            eps=1e-5, tol=1e-4, max_entries=120, rng=np.random.default_rng(1))
        assert report.passed, report.violations[:5]


class TestCheckpoint:
    def test_roundtrip_preserves_values_and_outputs(self, tmp_path, dataset):
        enc_all, vocab = dataset
        params = ModelParams(tiny_config(), seed=15)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, vocab.content_hash(), step=42,
                              extra={"valid_f1": 0.5})
        loaded, header = model.load_checkpoint(path)
        assert header["step"] == 42
        assert header["vocab_hash"] == vocab.content_hash()
        for name, p in params.named().items():
            np.testing.assert_array_equal(p.value, loaded.named()[name].value)
        a = model.forward(params, enc_all[0]).y_main.item()
        b = model.forward(loaded, enc_all[0]).y_main.item()
        assert a == b

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        params = ModelParams(tiny_config(), seed=16)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save_checkpoint(p1, params, "hash", step=1)
        model.save_checkpoint(p2, params, "hash", step=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError):
            model.load_checkpoint(path)

    def test_rejects_truncated_file(self, tmp_path):
        params = ModelParams(tiny_config(), seed=17)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, "hash", step=1)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 16])
        with pytest.raises(ValueError, match="truncated"):
            model.load_checkpoint(path)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=0).validate()
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=10, dropout=1.0).validate()
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=10, attention_over="both").validate()

    def test_dict_roundtrip(self):
        cfg = tiny_config(attention_over="turn", use_history=False)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_pretrained_embedding_shape_check(self):
        cfg = tiny_config()
        with pytest.raises(ValueError):
            ModelParams(cfg, embeddings=np.zeros((3, 3)))
        table = np.random.default_rng(0).normal(size=(cfg.vocab_size, cfg.embed_dim))
        params = ModelParams(cfg, embeddings=table)
        np.testing.assert_array_equal(params.embedding.value, table)
