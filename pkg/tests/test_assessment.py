"""Assessment-stage tests: BLSTM attention pooling, task heads, model."""

import numpy as np
import pytest

from fidonet import assessment as am
from fidonet.config import tiny_model_config
from fidonet.dsp import WaveContext, Waveform
from fidonet.errors import ShapeError
from fidonet.numerics import Parameter, grad_check, tensor


def blstm_params(rng, d_in=6, hidden=4, dense=5, dtype=np.float64):
    return am.BlstmParams.init(rng, d_in, hidden, dense, "b", dtype)


def head_params(rng, dense=5, dtype=np.float64):
    return am.HeadParams.init(rng, dense, "h", dtype)


def make_bundle(cfg, rng, t=350, seed=0):
    wave = rng.uniform(-0.5, 0.5, t * 320)
    ctx = WaveContext.from_waveform(
        Waveform(wave, 16000, "left"), cfg.kernel_len, dtype=cfg.np_dtype
    )
    mk = lambda d: rng.normal(size=(t, d)).astype(cfg.np_dtype)
    return am.FeatureBundle(
        mk(cfg.d_ps), mk(cfg.d_ps), ctx, ctx, mk(cfg.d_ws), mk(cfg.d_ws)
    )


class TestBlstmAttention:
    def test_attention_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        p = blstm_params(rng)
        x = tensor(rng.normal(size=(12, 6)), np.float64)
        _, _, alpha = am.blstm_attention_forward(x, p)
        assert alpha.shape == (12, 1)
        assert abs(alpha.sum() - 1.0) < 1e-6

    def test_single_frame_pooled_equals_frame(self):
        rng = np.random.default_rng(1)
        p = blstm_params(rng)
        x = tensor(rng.normal(size=(1, 6)), np.float64)
        frames, pooled, _ = am.blstm_attention_forward(x, p)
        np.testing.assert_allclose(pooled.data[0], frames.data[0], rtol=1e-12)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(2)
        p = blstm_params(rng)
        with pytest.raises(ShapeError):
            am.blstm_attention_forward(tensor(np.zeros((0, 6)), np.float64), p)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        p = blstm_params(rng, d_in=4, hidden=3, dense=4)
        x = tensor(rng.normal(size=(3, 4)), np.float64)
        r = tensor(rng.normal(size=(1, 4)), np.float64)

        def loss():
            frames, pooled, _ = am.blstm_attention_forward(x, p)
            return (pooled * r).sum() + frames.mean()

        err = grad_check(loss, p.parameters(), eps=1e-5, coords=16, seed=4)
        assert err < 1e-4


class TestTaskHeads:
    def test_zero_weights_give_midpoint_outputs(self):
        p = am.HeadParams(
            Parameter(np.zeros((5, 1)), "i.w"), Parameter(np.zeros(1), "i.b"),
            Parameter(np.zeros((5, 1)), "h.w"), Parameter(np.zeros(1), "h.b"),
            Parameter(np.zeros((5, 10)), "c.w"), Parameter(np.zeros(10), "c.b"),
        )
        rng = np.random.default_rng(4)
        frames = tensor(rng.normal(size=(8, 5)), np.float64)
        pooled = tensor(rng.normal(size=(1, 5)), np.float64)
        pred = am.task_forward(frames, pooled, p, np.full((8, 1), 1 / 8)).prediction()
        assert pred.intelligibility == 50.0
        assert pred.haspi == 0.5
        np.testing.assert_allclose(pred.class_probs, 0.1, atol=1e-12)

    def test_utterance_score_is_mean_of_frames(self):
        rng = np.random.default_rng(5)
        p = head_params(rng)
        frames = tensor(rng.normal(size=(11, 5)), np.float64)
        pooled = tensor(rng.normal(size=(1, 5)), np.float64)
        pred = am.task_forward(frames, pooled, p, np.zeros((11, 1))).prediction()
        assert abs(pred.intelligibility - pred.frame_int.mean()) < 1e-6
        assert abs(pred.haspi - pred.frame_haspi.mean()) < 1e-6

    def test_bias_shift_strictly_increases_utterance_score(self):
        rng = np.random.default_rng(6)
        p = head_params(rng)
        frames = tensor(rng.normal(size=(9, 5)), np.float64)
        pooled = tensor(rng.normal(size=(1, 5)), np.float64)
        base = am.task_forward(frames, pooled, p, np.zeros((9, 1))).prediction()
        p.int_b.data = p.int_b.data + 0.375
        shifted = am.task_forward(frames, pooled, p, np.zeros((9, 1))).prediction()
        assert shifted.intelligibility > base.intelligibility

    def test_output_ranges_over_random_draws(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            p = head_params(rng)
            scale = rng.choice([0.1, 1.0, 10.0])
            frames = tensor(rng.normal(size=(6, 5)) * scale, np.float64)
            pooled = tensor(rng.normal(size=(1, 5)) * scale, np.float64)
            pred = am.task_forward(frames, pooled, p, np.zeros((6, 1))).prediction()
            assert 0.0 <= pred.intelligibility <= 100.0
            assert 0.0 <= pred.haspi <= 1.0
            assert abs(pred.class_probs.sum() - 1.0) < 1e-6
            assert np.all(pred.frame_int >= 0.0) and np.all(pred.frame_int <= 100.0)
            assert np.all(pred.frame_haspi >= 0.0) and np.all(pred.frame_haspi <= 1.0)


class TestModelForward:
    def test_bit_identical_reruns(self):
        cfg = tiny_model_config()
        model = am.MbiNetPlus(cfg, seed=9)
        bundle = make_bundle(cfg, np.random.default_rng(10), t=20)
        a = model.predict(bundle)
        b = model.predict(bundle)
        assert a.intelligibility == b.intelligibility
        assert a.haspi == b.haspi
        assert np.array_equal(a.class_probs, b.class_probs)
        assert np.array_equal(a.frame_int, b.frame_int)

    def test_prediction_shapes_and_ranges(self):
        cfg = tiny_model_config()
        model = am.MbiNetPlus(cfg, seed=11)
        pred = model.predict(make_bundle(cfg, np.random.default_rng(12), t=15))
        assert pred.frame_int.shape == (15,)
        assert pred.frame_haspi.shape == (15,)
        assert 0.0 <= pred.intelligibility <= 100.0
        assert 0.0 <= pred.haspi <= 1.0

    def test_temporal_mode_frame_count(self):
        cfg = tiny_model_config(concat_mode="temporal")
        model = am.MbiNetPlus(cfg, seed=13)
        pred = model.predict(make_bundle(cfg, np.random.default_rng(14), t=10))
        assert pred.frame_int.shape == (30,)

    def test_left_right_parameters_disjoint(self):
        cfg = tiny_model_config()
        model = am.MbiNetPlus(cfg, seed=15)
        right_before = {
            n: p.data.copy() for n, p in model.parameters().items() if n.startswith("right.")
        }
        for n, p in model.parameters().items():
            if n.startswith("left."):
                p.data += 1.0
        for n, p in model.parameters().items():
            if n.startswith("right."):
                assert p.data.tobytes() == right_before[n].tobytes()

    def test_parameter_names_unique_and_prefixed(self):
        cfg = tiny_model_config()
        model = am.MbiNetPlus(cfg, seed=16)
        names = list(model.parameters())
        assert len(names) == len(set(names))
        assert any(n.startswith("left.fido.ps.mhsa.") for n in names)
        assert any(n.startswith("assess.blstm.") for n in names)
