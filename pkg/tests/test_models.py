import logging

import numpy as np
import pytest

from ordengage.data import FeatureLayout, FeatureSequence
from ordengage.diffcore import Tape, Tensor, backward, grad_check, tsum
from ordengage.errors import CheckpointError, NumericError, ShapeError
from ordengage.models import (
    ClassifierHead,
    FeatureStage,
    FusionConfig,
    FusionNet,
    HeadConfig,
    LstmConfig,
    LstmEncoder,
    ProjectionHead,
    TcnConfig,
    TcnEncoder,
    build_model,
    fusion_forward,
    load_checkpoint,
    load_ensemble,
    save_checkpoint,
    save_ensemble,
    stack_sequences,
)

from oracles import lstm_single_step_reference

RNG = np.random.default_rng(2024)


def small_fusion(rng=None):
    return FusionNet(FusionConfig(latent_dims=6, hidden=5, out_dims=3),
                     rng or np.random.default_rng(0))


class TestFusion:
    def test_zero_weights_give_bias_image(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(0))
        fusion.fc1.w.data[:] = 0.0
        fusion.fc2.w.data[:] = 0.0
        latent = Tensor(RNG.normal(size=(5, 256)))
        rest = Tensor(RNG.normal(size=(5, 14)))
        out = fusion_forward(fusion, latent, rest)
        assert out.data.shape == (5, 46)
        fused_block = out.data[:, 2:34]
        assert np.abs(fused_block - fused_block[0]).max() == 0.0
        np.testing.assert_allclose(fused_block[0], fusion.fc2.b.data)

    def test_single_frame(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(1))
        out = fusion_forward(
            fusion, Tensor(RNG.normal(size=(1, 256))), Tensor(RNG.normal(size=(1, 14)))
        )
        assert out.data.shape == (1, 46)

    def test_concat_order_is_affect_fused_behavioral(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(2))
        latent = Tensor(RNG.normal(size=(3, 256)))
        rest_arr = RNG.normal(size=(3, 14))
        out = fusion_forward(fusion, latent, Tensor(rest_arr))
        np.testing.assert_array_equal(out.data[:, :2], rest_arr[:, :2])
        np.testing.assert_array_equal(out.data[:, 34:], rest_arr[:, 2:])

    def test_width_mismatch(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(3))
        with pytest.raises(ShapeError):
            fusion(Tensor(RNG.normal(size=(3, 100))))

    def test_gradients(self):
        fusion = small_fusion()
        latent = Tensor(RNG.normal(size=(4, 6)))

        def f():
            return tsum(fusion(latent))

        assert grad_check(f, fusion.parameters()) < 1e-4


class TestLstm:
    def test_zero_network_zero_embedding(self):
        enc = LstmEncoder(LstmConfig(input_dim=3, hidden=4, layers=2),
                          np.random.default_rng(0))
        for p in enc.parameters():
            p.data[:] = 0.0
        out = enc.forward(Tensor(np.zeros((2, 5, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_single_step_matches_closed_form(self):
        enc = LstmEncoder(LstmConfig(input_dim=2, hidden=3, layers=1),
                          np.random.default_rng(4))
        x = RNG.normal(size=(1, 1, 2))
        out = enc.forward(Tensor(x))
        _, h1 = lstm_single_step_reference(
            x[0, 0], enc.wx[0].data, enc.wh[0].data, enc.b[0].data
        )
        np.testing.assert_allclose(out.data[0], h1, atol=1e-12)

    def test_order_sensitivity(self):
        enc = LstmEncoder(LstmConfig(input_dim=3, hidden=5, layers=2),
                          np.random.default_rng(5))
        x = RNG.normal(size=(1, 6, 3))
        base = enc.forward(Tensor(x)).data
        permuted = enc.forward(Tensor(x[:, ::-1, :].copy())).data
        assert not np.allclose(base, permuted)

    def test_non_finite_input(self):
        enc = LstmEncoder(LstmConfig(input_dim=2, hidden=2, layers=1),
                          np.random.default_rng(6))
        bad = np.zeros((1, 3, 2))
        bad[0, 1, 0] = np.inf
        with pytest.raises(NumericError):
            enc.forward(Tensor(bad))

    def test_stack_gradients(self):
        enc = LstmEncoder(LstmConfig(input_dim=2, hidden=3, layers=2),
                          np.random.default_rng(7))
        x = Tensor(RNG.normal(size=(2, 3, 2)))

        def f():
            return tsum(enc.forward(x))

        assert grad_check(f, enc.parameters()) < 1e-4


class TestTcn:
    def test_residual_passthrough(self):
        # zero conv branches and an identity 1x1 downsample reduce each block
        # to relu(residual); positive input then survives unchanged
        cfg = TcnConfig(input_dim=3, levels=1, hidden=3, kernel=2, dropout=0.0)
        enc = TcnEncoder(cfg, np.random.default_rng(0))
        block = enc.blocks[0]
        block["w1"].data[:] = 0.0
        block["w2"].data[:] = 0.0
        block["b1"].data[:] = 0.0
        block["b2"].data[:] = 0.0
        x = np.abs(RNG.normal(size=(2, 4, 3))) + 0.1
        out = enc.forward(Tensor(x))
        np.testing.assert_allclose(out.data, x[:, -1, :])

    def test_receptive_field_formula(self):
        assert TcnConfig(input_dim=46).receptive_field() == 7651
        assert TcnConfig(input_dim=4, levels=1, kernel=2).receptive_field() == 3

    def test_receptive_field_probe(self):
        # levels=1, kernel=2, dilation=1 -> last output sees 3 trailing frames
        cfg = TcnConfig(input_dim=2, levels=1, hidden=3, kernel=2, dropout=0.0)
        enc = TcnEncoder(cfg, np.random.default_rng(1))
        x = RNG.normal(size=(1, 8, 2))
        base = enc.forward(Tensor(x)).data
        inside = x.copy()
        inside[0, -1, :] += 3.0
        assert not np.allclose(enc.forward(Tensor(inside)).data, base)
        outside = x.copy()
        outside[0, 0, :] += 3.0  # frame 0 is beyond the 3-frame receptive field
        np.testing.assert_allclose(enc.forward(Tensor(outside)).data, base)

    def test_mean_pool_option(self):
        cfg = TcnConfig(input_dim=2, levels=1, hidden=3, kernel=2, dropout=0.0,
                        pool="mean")
        enc = TcnEncoder(cfg, np.random.default_rng(2))
        out = enc.forward(Tensor(RNG.normal(size=(2, 5, 2))))
        assert out.data.shape == (2, 3)

    def test_eval_mode_deterministic_and_batch_invariant(self):
        cfg = TcnConfig(input_dim=3, levels=2, hidden=4, kernel=2, dropout=0.5)
        enc = TcnEncoder(cfg, np.random.default_rng(3))
        x = RNG.normal(size=(3, 6, 3))
        a = enc.forward(Tensor(x)).data
        b = enc.forward(Tensor(x)).data
        assert np.array_equal(a, b)
        # duplicating the batch leaves per-sample embeddings untouched
        doubled = enc.forward(Tensor(np.concatenate([x, x]))).data
        np.testing.assert_array_equal(doubled[:3], a)
        np.testing.assert_array_equal(doubled[3:], a)

    def test_dropout_active_in_training_mode(self):
        cfg = TcnConfig(input_dim=3, levels=1, hidden=4, kernel=2, dropout=0.5)
        enc = TcnEncoder(cfg, np.random.default_rng(4))
        x = Tensor(RNG.normal(size=(2, 6, 3)))
        a = enc.forward(x, rng=np.random.default_rng(0)).data
        b = enc.forward(x, rng=np.random.default_rng(1)).data
        assert not np.allclose(a, b)

    def test_block_gradients(self):
        cfg = TcnConfig(input_dim=2, levels=2, hidden=3, kernel=2, dropout=0.0)
        enc = TcnEncoder(cfg, np.random.default_rng(5))
        x = Tensor(RNG.normal(size=(1, 4, 2)))

        def f():
            return tsum(enc.forward(x))

        assert grad_check(f, enc.parameters()) < 1e-4


class TestProjection:
    def test_unit_norm(self):
        proj = ProjectionHead(6, 4, np.random.default_rng(0))
        z = proj.forward(Tensor(RNG.normal(size=(10, 6))))
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-12)

    def test_scale_invariance_with_zero_bias(self):
        proj = ProjectionHead(6, 4, np.random.default_rng(1))
        proj.fc.b.data[:] = 0.0
        e = RNG.normal(size=(3, 6))
        z1 = proj.forward(Tensor(e)).data
        z2 = proj.forward(Tensor(10.0 * e)).data
        np.testing.assert_allclose(z1, z2, atol=1e-12)

    def test_zero_vector_guard(self, caplog):
        proj = ProjectionHead(4, 3, np.random.default_rng(2))
        proj.fc.w.data[:] = 0.0
        proj.fc.b.data[:] = 0.0
        with caplog.at_level(logging.WARNING):
            z = proj.forward(Tensor(RNG.normal(size=(2, 4))))
        assert "zero-norm" in caplog.text
        np.testing.assert_array_equal(z.data, [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    def test_gradients_through_normalization(self):
        proj = ProjectionHead(5, 3, np.random.default_rng(3))
        e = Tensor(RNG.normal(size=(4, 5)))
        w = np.random.default_rng(9).normal(size=(4, 3))

        def f():
            from ordengage.diffcore import weighted_sum

            return weighted_sum(proj.forward(e), w)

        assert grad_check(f, proj.parameters()) < 1e-4


class TestClassifierHead:
    def test_zero_weights_uniform_softmax(self):
        head = ClassifierHead(HeadConfig(embed_dim=8, hidden=4, num_classes=4),
                              np.random.default_rng(0))
        for p in head.parameters():
            p.data[:] = 0.0
        logits = head.forward(Tensor(RNG.normal(size=(3, 8))))
        from ordengage.diffcore import softmax

        np.testing.assert_allclose(softmax(logits).data, 0.25)

    def test_binary_head_scalar_logit(self):
        head = ClassifierHead(HeadConfig(embed_dim=8, hidden=4, num_classes=1),
                              np.random.default_rng(1))
        logits = head.forward(Tensor(RNG.normal(size=(5, 8))))
        assert logits.data.shape == (5, 1)

    def test_head_gradients(self):
        head = ClassifierHead(HeadConfig(embed_dim=5, hidden=4, num_classes=3),
                              np.random.default_rng(2))
        e = Tensor(RNG.normal(size=(2, 5)))

        def f():
            return tsum(head.forward(e))

        assert grad_check(f, head.parameters()) < 1e-4


class TestFeatureStage:
    def test_direct_passthrough(self):
        stage = FeatureStage("direct", FeatureLayout(), None)
        x = Tensor(RNG.normal(size=(2, 3, 7)))
        assert stage.forward(x) is x

    def test_affect_behavioral_slices_270(self):
        stage = FeatureStage("affect_behavioral", FeatureLayout(), None)
        x = RNG.normal(size=(2, 3, 270))
        out = stage.forward(Tensor(x))
        assert out.data.shape == (2, 3, 14)
        np.testing.assert_array_equal(out.data[..., :2], x[..., :2])
        np.testing.assert_array_equal(out.data[..., 2:], x[..., 258:])

    def test_latent_mode_fuses_to_46(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(0))
        stage = FeatureStage("affect_behavioral_latent", FeatureLayout(), fusion)
        out = stage.forward(Tensor(RNG.normal(size=(2, 3, 270))))
        assert out.data.shape == (2, 3, 46)

    def test_latent_mode_rejects_narrow_input(self):
        fusion = FusionNet(FusionConfig(), np.random.default_rng(0))
        stage = FeatureStage("affect_behavioral_latent", FeatureLayout(), fusion)
        with pytest.raises(ShapeError):
            stage.forward(Tensor(RNG.normal(size=(2, 3, 46))))


class TestModelAssembly:
    def test_encoder_width_is_256_under_paper_configs(self):
        x = Tensor(RNG.normal(size=(2, 5, 46)))
        tcn = build_model({"encoder": "tcn", "feature_mode": "direct",
                           "input_dim": 46, "num_classes": 4}, np.random.default_rng(0))
        lstm = build_model({"encoder": "lstm", "feature_mode": "direct",
                            "input_dim": 46, "num_classes": 4}, np.random.default_rng(1))
        assert tcn.embed(x).data.shape == (2, 256)
        assert lstm.embed(x).data.shape == (2, 256)

    def test_parameter_count_regression(self):
        rng = np.random.default_rng(0)
        meta = {"encoder": "tcn", "feature_mode": "direct", "input_dim": 46,
                "num_classes": 4}
        assert build_model(meta, rng).parameter_count() == 15_966_596
        meta = {"encoder": "lstm", "feature_mode": "direct", "input_dim": 46,
                "num_classes": 4}
        assert build_model(meta, rng).parameter_count() == 868_996
        meta = {"encoder": "tcn", "feature_mode": "affect_behavioral_latent",
                "input_dim": 270, "num_classes": 4,
                "tcn": {"levels": 2, "hidden": 32, "kernel": 4, "dropout": 0.1,
                        "pool": "last"}}
        assert build_model(meta, rng).parameter_count() == 61_572

    def test_phase2_gradients_do_not_reach_encoder(self):
        meta = {"encoder": "tcn", "feature_mode": "direct", "input_dim": 3,
                "num_classes": 4,
                "tcn": {"levels": 1, "hidden": 4, "kernel": 2, "dropout": 0.0,
                        "pool": "last"}}
        model = build_model(meta, np.random.default_rng(0))
        # frozen-representation training: embeddings computed outside the tape
        emb = model.embed(Tensor(RNG.normal(size=(3, 5, 3)))).data
        with Tape() as tape:
            logits = model.head.forward(Tensor(emb))
            grads = backward(tape, tsum(logits))
        encoder_params = set(model.encoder_parameters().values())
        assert not encoder_params & set(grads)
        assert set(model.head.parameters()) <= set(grads)


def small_model(num_classes=4, seed=0):
    meta = {"encoder": "tcn", "feature_mode": "direct", "input_dim": 3,
            "num_classes": num_classes,
            "tcn": {"levels": 1, "hidden": 4, "kernel": 2, "dropout": 0.1,
                    "pool": "last"}}
    return build_model(meta, np.random.default_rng(seed))


class TestCheckpoints:
    def test_roundtrip_bit_exact_and_idempotent(self):
        model = small_model()
        blob = save_checkpoint(model, seed=7)
        loaded, seed = load_checkpoint(blob)
        assert seed == 7
        for name, p in model.parameters().items():
            assert np.array_equal(loaded.parameters()[name].data, p.data)
        assert save_checkpoint(loaded, seed=7) == blob

    def test_byte_flip_detected(self):
        blob = bytearray(save_checkpoint(small_model(), seed=1))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CheckpointError, match="checksum|corrupt"):
            load_checkpoint(bytes(blob))

    def test_truncation_detected(self):
        blob = save_checkpoint(small_model(), seed=1)
        with pytest.raises(CheckpointError):
            load_checkpoint(blob[: len(blob) - 40])

    def test_config_fingerprint_mismatch_rejected(self):
        from ordengage.models import meta_fingerprint

        tcn = small_model()
        lstm_meta = {"encoder": "lstm", "feature_mode": "direct", "input_dim": 3,
                     "num_classes": 4, "lstm": {"hidden": 4, "layers": 1}}
        blob = save_checkpoint(tcn)
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_checkpoint(blob, expected_fingerprint=meta_fingerprint(
                build_model(lstm_meta, np.random.default_rng(0)).meta))

    def test_ensemble_roundtrip(self):
        members = [small_model(num_classes=1, seed=i) for i in range(3)]
        blob = save_ensemble(members, num_classes=4, clamp_policy="clamp_renormalize",
                             seed=3)
        loaded, c, policy, seed = load_ensemble(blob)
        assert (c, policy, seed) == (4, "clamp_renormalize", 3)
        assert len(loaded) == 3
        for orig, back in zip(members, loaded):
            for name, p in orig.parameters().items():
                assert np.array_equal(back.parameters()[name].data, p.data)


def test_stack_sequences_requires_uniform_shape():
    a = FeatureSequence("a", np.zeros((3, 2)), 0)
    b = FeatureSequence("b", np.zeros((4, 2)), 0)
    with pytest.raises(ShapeError):
        stack_sequences([a, b])
    out = stack_sequences([a, a])
    assert out.shape == (2, 3, 2)
