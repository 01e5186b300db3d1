"""Mask predictor: shapes, fusion, streaming equivalence, training rules."""

import numpy as np
import pytest

from avse import nn
from avse.errors import AlignmentError, ShapeError, StreamProtocolError, UsageError
from avse.model import (
    LipEmbeddingSequence,
    MaskStreamer,
    ModelConfig,
    PlateauScheduler,
    audio_features,
    config_from_store,
    init_weights,
    lr_schedule,
    predict_masks,
    predict_step,
    train,
    upsample_visual,
)


@pytest.fixture(scope="module")
def cfg():
    return ModelConfig.toy()


@pytest.fixture(scope="module")
def weights(cfg):
    return init_weights(cfg, seed=7)


class TestConfig:
    def test_full_scale_fusion_width(self):
        full = ModelConfig()
        assert full.conv_filters == (64, 64, 64, 64, 4)
        assert full.fused_width == 622 * 4 + 512 == 3000
        assert full.lstm_units == 622

    def test_lookahead_is_two_frames(self, cfg):
        assert cfg.lookahead_frames == 2
        assert ModelConfig().lookahead_frames == 2

    def test_store_round_trips_config(self, cfg, weights):
        assert config_from_store(weights) == cfg
        audio_only = ModelConfig.toy(audio_only=True)
        assert config_from_store(init_weights(audio_only, seed=1)) == audio_only


class TestAudioFeatures:
    def test_zero_weights_zero_features(self, cfg, rng):
        w = init_weights(cfg, seed=0)
        for t in w.tensors():
            t.data = np.zeros_like(t.data)
        out = audio_features(np.abs(rng.standard_normal((30, 622))), w, cfg)
        np.testing.assert_array_equal(out, 0)

    def test_output_shape(self, cfg, weights, rng):
        out = audio_features(np.abs(rng.standard_normal((225, 622))), weights, cfg)
        assert out.shape == (225, 622 * cfg.conv_filters[-1])

    def test_receptive_field_two_ahead(self, cfg, weights, rng):
        """Future context is exactly +2 frames (layer 1's centered window);
        past context reaches 14 frames through the causal layers."""
        mag = np.abs(rng.standard_normal((60, 622)))
        base = audio_features(mag, weights, cfg)
        probe = 30
        bumped = mag.copy()
        bumped[probe] += 5.0
        moved = np.abs(audio_features(bumped, weights, cfg) - base).max(axis=1) > 1e-12
        first, last = np.where(moved)[0].min(), np.where(moved)[0].max()
        assert first == probe - cfg.lookahead_frames
        assert last <= probe + 14

    def test_wrong_width_rejected(self, cfg, weights, rng):
        with pytest.raises(ShapeError):
            audio_features(np.abs(rng.standard_normal((30, 100))), weights, cfg)


class TestUpsampleVisual:
    def test_rows_repeat_three_times(self, rng):
        emb = rng.standard_normal((2, 512))
        up = upsample_visual(emb)
        assert up.shape == (6, 512)
        for j in range(3):
            np.testing.assert_array_equal(up[j], emb[0])
            np.testing.assert_array_equal(up[3 + j], emb[1])

    def test_75_becomes_225(self, rng):
        assert upsample_visual(rng.standard_normal((75, 512))).shape == (225, 512)

    def test_downsample_inverts(self, rng):
        emb = rng.standard_normal((75, 512))
        np.testing.assert_array_equal(upsample_visual(emb)[::3], emb)

    def test_embedding_sequence_validation(self, rng):
        with pytest.raises(ShapeError):
            LipEmbeddingSequence(rng.standard_normal((10, 300)))
        seq = LipEmbeddingSequence(rng.standard_normal((10, 512)))
        assert len(seq) == 10 and seq.fps == 25


class TestPredictMasks:
    def test_output_soft_and_shaped(self, cfg, weights, rng):
        mag = np.abs(rng.standard_normal((225, 622))) * 2
        emb = rng.standard_normal((75, 512))
        mask = predict_masks(mag, emb, weights, cfg)
        assert mask.values.shape == (225, 622)
        assert mask.kind == "soft"
        assert mask.values.min() > 0.0 and mask.values.max() < 1.0

    def test_deterministic(self, cfg, weights, rng):
        mag = np.abs(rng.standard_normal((45, 622)))
        emb = rng.standard_normal((15, 512))
        a = predict_masks(mag, emb, weights, cfg).values
        b = predict_masks(mag, emb, weights, cfg).values
        np.testing.assert_array_equal(a, b)

    def test_alignment_enforced(self, cfg, weights, rng):
        with pytest.raises(AlignmentError):
            predict_masks(np.abs(rng.standard_normal((225, 622))), rng.standard_normal((74, 512)), weights, cfg)

    def test_audio_only_ignores_embeddings(self, rng):
        cfg_a = ModelConfig.toy(audio_only=True)
        w = init_weights(cfg_a, seed=3)
        mag = np.abs(rng.standard_normal((45, 622)))
        mask = predict_masks(mag, None, w, cfg_a)
        assert mask.values.shape == (45, 622)

    def test_gradient_reaches_every_parameter(self, cfg, rng):
        w = init_weights(cfg, seed=5)
        from avse.model import forward_batch

        mags = np.abs(rng.standard_normal((2, 45, 622)))
        embs = rng.standard_normal((2, 15, 512))
        ibms = (rng.uniform(0, 1, (2, 45, 622)) > 0.9).astype(float)
        loss = nn.bce(forward_batch(mags, embs, w, cfg), nn.Tensor(ibms))
        grads = nn.gradients(loss, w.tensors())
        for name, g in zip(w.names(), grads):
            assert np.any(g != 0), f"no gradient for {name}"


class TestStreaming:
    def test_step_matches_batch(self, cfg, weights, rng):
        mag = np.abs(rng.standard_normal((225, 622))) * 3
        emb = rng.standard_normal((75, 512))
        batch = predict_masks(mag, emb, weights, cfg).values
        streamer = MaskStreamer(weights, cfg)
        rows = []
        for t in range(225):
            row = predict_step(mag[t], emb[t // 3] if t % 3 == 0 else None, streamer)
            if row is not None:
                rows.append(row)
        rows.extend(streamer.flush())
        assert len(rows) == 225
        assert np.abs(np.stack(rows) - batch).max() < 1e-5

    def test_first_rows_delayed_by_lookahead(self, cfg, weights, rng):
        streamer = MaskStreamer(weights, cfg)
        streamer.push_embedding(rng.standard_normal(512))
        assert streamer.push_frame(np.abs(rng.standard_normal(622))) is None
        assert streamer.push_frame(np.abs(rng.standard_normal(622))) is None
        assert streamer.push_frame(np.abs(rng.standard_normal(622))) is not None

    def test_zero_stream_constant_outputs(self, cfg, weights):
        streamer = MaskStreamer(weights, cfg)
        streamer.push_embedding(np.zeros(512))
        streamer.push_embedding(np.zeros(512))
        rows = []
        for t in range(6):
            row = streamer.push_frame(np.zeros(622))
            if row is not None:
                rows.append(row)
        assert len(rows) == 4
        assert np.isfinite(np.stack(rows)).all()

    def test_missing_embedding_is_protocol_error(self, cfg, weights, rng):
        streamer = MaskStreamer(weights, cfg)
        streamer.push_frame(np.abs(rng.standard_normal(622)))
        streamer.push_frame(np.abs(rng.standard_normal(622)))
        with pytest.raises(StreamProtocolError):
            streamer.push_frame(np.abs(rng.standard_normal(622)))

    def test_final_state_matches_batch_frame_count(self, cfg, weights, rng):
        mag = np.abs(rng.standard_normal((45, 622)))
        emb = rng.standard_normal((15, 512))
        streamer = MaskStreamer(weights, cfg)
        for t in range(45):
            if t % 3 == 0:
                streamer.push_embedding(emb[t // 3])
            streamer.push_frame(mag[t])
        streamer.flush()
        assert streamer.state.rows_out == 45


class TestLrSchedule:
    def test_halves_after_three_non_improving(self):
        losses = [1.0, 0.9, 0.91, 0.92, 0.93]
        assert lr_schedule(losses, 3e-4) == pytest.approx(1.5e-4)

    def test_strictly_decreasing_keeps_lr(self):
        losses = list(np.linspace(1.0, 0.1, 50))
        lr = 3e-4
        for i in range(1, len(losses) + 1):
            lr = lr_schedule(losses[:i], lr)
        assert lr == 3e-4

    def test_two_plateaus_then_improvement_no_halving(self):
        assert lr_schedule([1.0, 1.1, 1.05, 0.9], 3e-4) == 3e-4

    def test_counter_resets_after_halving(self):
        sched = PlateauScheduler(4e-4)
        for loss in (1.0, 1.1, 1.2, 1.3):
            lr = sched.update(loss)
        assert lr == pytest.approx(2e-4)
        # two more plateaus: still the halved rate; the third halves again
        assert sched.update(1.4) == pytest.approx(2e-4)
        assert sched.update(1.5) == pytest.approx(2e-4)
        assert sched.update(1.6) == pytest.approx(1e-4)

    def test_empty_losses_rejected(self):
        with pytest.raises(UsageError):
            lr_schedule([], 1e-3)


class TestTrain:
    def test_empty_dataset_rejected(self):
        with pytest.raises(UsageError):
            train([], epochs=1)

    def test_history_and_determinism(self, small_items, cfg):
        a = train(small_items, epochs=2, cfg=cfg, seed=4)
        b = train(small_items, epochs=2, cfg=cfg, seed=4)
        assert len(a.history) == 2
        for ha, hb in zip(a.history, b.history):
            assert ha == hb
        for name in a.weights.names():
            np.testing.assert_array_equal(a.weights[name].data, b.weights[name].data)

    def test_loss_decreases(self, small_items, cfg):
        res = train(small_items, epochs=4, cfg=cfg, seed=0)
        assert res.history[-1].train_bce < res.history[0].train_bce

    def test_plateau_sequence_halves_lr_in_training(self, small_items, cfg, monkeypatch):
        """A constructed non-improving validation sequence must halve the lr
        inside train() itself, visible in the recorded history."""
        from avse import model as model_mod

        vals = iter([1.0, 1.1, 1.2, 1.3, 0.5, 0.4])
        real = model_mod.PlateauScheduler.update

        def fed_update(self, _val_loss):
            return real(self, next(vals))

        monkeypatch.setattr(model_mod.PlateauScheduler, "update", fed_update)
        res = train(small_items, epochs=6, cfg=cfg, seed=0, lr=3e-4)
        lrs = [h.lr for h in res.history]
        assert lrs[:4] == [3e-4] * 4
        assert lrs[4] == pytest.approx(1.5e-4)
        assert lrs[5] == pytest.approx(1.5e-4)
