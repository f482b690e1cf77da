"""Loss function, trainer, and checkpoint tests."""

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from fidonet import training
from fidonet.assessment import MbiNetPlus, Prediction
from fidonet.config import LossWeights, TrainConfig, tiny_model_config
from fidonet.data import UtteranceRecord, synth_corpus
from fidonet.dsp import WaveContext, Waveform
from fidonet.errors import CheckpointError, DataError
from fidonet.numerics import grad_check
from fidonet.providers import ProviderConfig

from test_assessment import make_bundle


def record(intel=80.0, haspi=0.8, ha_class=3):
    return UtteranceRecord("u0", Path("u0.wav"), intel, haspi, ha_class, 1, "train")


def prediction(intel, haspi, probs, t=4):
    return Prediction(
        intelligibility=intel,
        haspi=haspi,
        class_probs=np.asarray(probs, dtype=np.float64),
        frame_int=np.full(t, intel),
        frame_haspi=np.full(t, haspi),
    )


class TestMultitaskLoss:
    def test_perfect_prediction_zero_loss(self):
        probs = np.zeros(10)
        probs[3] = 1.0
        br = training.multitask_loss(prediction(80.0, 0.8, probs), record())
        assert br.total == 0.0
        assert br.l_int == br.l_haspi == br.l_ce == 0.0

    def test_unit_components_weighted_sum(self):
        # L_int = 1 (pred 0 vs label 100), L_haspi = 1, L_CE = 1 via p = 1/e.
        probs = np.full(10, (1.0 - 1.0 / math.e) / 9.0)
        probs[5] = 1.0 / math.e
        br = training.multitask_loss(
            prediction(0.0, 0.0, probs),
            record(intel=100.0, haspi=1.0, ha_class=5),
            LossWeights(),
            frame_loss_weight=0.0,
        )
        assert abs(br.l_int - 1.0) < 1e-12
        assert abs(br.l_haspi - 1.0) < 1e-12
        assert abs(br.l_ce - 1.0) < 1e-12
        assert abs(br.total - 1.6) < 1e-12

    def test_uniform_probs_ce_is_ln10(self):
        br = training.multitask_loss(prediction(80.0, 0.8, np.full(10, 0.1)), record())
        assert abs(br.l_ce - math.log(10.0)) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            training.multitask_loss(
                prediction(50.0, 0.5, np.full(10, 0.1)), record(intel=101.0)
            )

    def test_gamma2_linearity(self):
        probs = np.full(10, 0.1)
        pred = prediction(30.0, 0.2, probs)
        rec = record()
        base = training.multitask_loss(pred, rec, LossWeights(1.0, 0.4, 0.2))
        double = training.multitask_loss(pred, rec, LossWeights(1.0, 0.8, 0.2))
        assert base.l_int == double.l_int and base.l_ce == double.l_ce
        assert abs(
            (double.total - base.total) - 0.4 * base.l_haspi
        ) < 1e-12

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            probs = rng.dirichlet(np.ones(10))
            br = training.multitask_loss(
                prediction(float(rng.uniform(0, 100)), float(rng.uniform(0, 1)), probs),
                record(),
            )
            assert br.total >= 0.0

    def test_graph_and_pure_versions_agree(self):
        cfg = tiny_model_config()
        model = MbiNetPlus(cfg, seed=2)
        bundle = make_bundle(cfg, np.random.default_rng(3), t=12)
        rec = record()
        fwd = model.forward(bundle)
        total, br_graph = training.loss_graph(fwd, rec)
        br_pure = training.multitask_loss(fwd.prediction(), rec)
        assert abs(br_graph.total - br_pure.total) < 1e-5
        assert abs(float(total.data) - br_graph.total) < 1e-12

    def test_full_loss_gradients_tiny_config(self):
        cfg = tiny_model_config(dtype="f64")
        model = MbiNetPlus(cfg, seed=4)
        bundle = make_bundle(cfg, np.random.default_rng(5), t=4)
        rec = record()
        params = list(model.parameters().values())

        def loss():
            total, _ = training.loss_graph(model.forward(bundle), rec)
            return total

        err = grad_check(loss, params, eps=1e-5, coords=3, seed=6)
        assert err < 1e-4


def tiny_train_config(**over):
    base = dict(
        lr=1e-3,
        epochs=3,
        batch_size=1,
        seed=5,
        provider=ProviderConfig(kind="surrogate", d_ws=16, seed=0),
    )
    base.update(over)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return synth_corpus(seed=21, n=4, out_dir=out)


class TestTrainLoop:
    def test_deterministic_traces_and_checkpoints(self, corpus, tmp_path):
        runs = []
        for name in ("a", "b"):
            result = training.train(
                tiny_model_config(), tiny_train_config(), corpus, corpus, tmp_path / name
            )
            runs.append(result)
        trace_a = (tmp_path / "a" / "loss_trace.csv").read_bytes()
        trace_b = (tmp_path / "b" / "loss_trace.csv").read_bytes()
        assert trace_a == trace_b
        ck_a = (tmp_path / "a" / "checkpoint.ckpt").read_bytes()
        ck_b = (tmp_path / "b" / "checkpoint.ckpt").read_bytes()
        assert ck_a == ck_b

    def test_zero_lr_keeps_initial_parameters(self, corpus, tmp_path):
        cfg = tiny_model_config()
        result = training.train(
            cfg, tiny_train_config(lr=0.0, epochs=1), corpus, corpus, tmp_path / "z"
        )
        fresh = MbiNetPlus(cfg, seed=5)
        for name, p in result.model.parameters().items():
            assert p.data.tobytes() == fresh.parameters()[name].data.tobytes()

    def test_best_checkpoint_dev_rmse_minimal(self, corpus, tmp_path):
        result = training.train(
            tiny_model_config(), tiny_train_config(epochs=4), corpus, corpus, tmp_path / "best"
        )
        logged = [e["dev_rmse"] for e in result.epoch_log]
        assert result.best_dev_rmse <= min(logged) + 1e-12

    def test_loss_decreases_when_overfitting(self, corpus, tmp_path):
        result = training.train(
            tiny_model_config(),
            tiny_train_config(epochs=12, lr=2e-3),
            corpus,
            corpus,
            tmp_path / "fit",
        )
        first = result.epoch_log[0]["train_loss"]
        last = result.epoch_log[-1]["train_loss"]
        assert last < 0.6 * first

    def test_empty_train_manifest_rejected(self, corpus, tmp_path):
        empty = dataclasses.replace(corpus, records=[])
        with pytest.raises(DataError, match="no records"):
            training.train(
                tiny_model_config(), tiny_train_config(), empty, corpus, tmp_path / "e"
            )

    def test_missing_audio_lists_offending_ids(self, corpus, tmp_path):
        broken = dataclasses.replace(
            corpus,
            records=[
                dataclasses.replace(corpus.records[0], id="bad-1", audio_path=Path("nope1.wav")),
                dataclasses.replace(corpus.records[1], id="bad-2", audio_path=Path("nope2.wav")),
            ],
        )
        with pytest.raises(DataError) as err:
            training.train(
                tiny_model_config(), tiny_train_config(), broken, broken, tmp_path / "m"
            )
        assert "bad-1" in str(err.value) and "bad-2" in str(err.value)


class TestCheckpoints:
    def test_round_trip_bit_exact_predictions(self, tmp_path):
        cfg = tiny_model_config()
        model = MbiNetPlus(cfg, seed=7)
        bundle = make_bundle(cfg, np.random.default_rng(8), t=10)
        before = model.predict(bundle)
        path = training.save_checkpoint(model, tmp_path / "m.ckpt")
        loaded, _, _, _ = training.load_checkpoint(path)
        after = loaded.predict(bundle)
        assert before.intelligibility == after.intelligibility
        assert np.array_equal(before.class_probs, after.class_probs)
        assert np.array_equal(before.frame_int, after.frame_int)

    def test_truncated_file_structured_error(self, tmp_path):
        cfg = tiny_model_config()
        path = training.save_checkpoint(MbiNetPlus(cfg, seed=9), tmp_path / "t.ckpt")
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(CheckpointError, match="truncated"):
            training.load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTAMODL" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            training.load_checkpoint(p)

    def test_d_ws_mismatch_names_field(self, tmp_path):
        small = tiny_model_config(d_ws=16)
        path = training.save_checkpoint(MbiNetPlus(small, seed=10), tmp_path / "s.ckpt")
        with pytest.raises(CheckpointError, match="d_ws"):
            training.load_checkpoint(path, expected_model=tiny_model_config(d_ws=64))

    def test_version_mismatch_rejected(self, tmp_path):
        cfg = tiny_model_config()
        path = training.save_checkpoint(MbiNetPlus(cfg, seed=11), tmp_path / "v.ckpt")
        raw = bytearray(path.read_bytes())
        # Bump the version integer inside the JSON header.
        idx = raw.find(b'"format_version": 1')
        raw[idx : idx + len(b'"format_version": 1')] = b'"format_version": 9'
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            training.load_checkpoint(path)
