"""Frontend tests: ingestion, padding, spectrogram, learnable filterbank."""

import numpy as np
import pytest
from scipy.io import wavfile

from fidonet import dsp
from fidonet.errors import AudioError, ConfigError
from fidonet.numerics import grad_check


def tone(freq, seconds, rate, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def write_wav(path, rate, data):
    wavfile.write(path, rate, data)
    return path


class TestIngest:
    def test_stereo_32k_three_seconds(self, tmp_path):
        rng = np.random.default_rng(0)
        data = (rng.uniform(-0.3, 0.3, size=(96000, 2)) * 32767).astype(np.int16)
        path = write_wav(tmp_path / "s.wav", 32000, data)
        left, right = dsp.ingest(path)
        assert len(left) == 48000 and len(right) == 48000
        assert left.sample_rate == right.sample_rate == 16000
        assert left.channel == "left" and right.channel == "right"

    def test_mono_duplicated(self, tmp_path):
        data = (tone(440, 1.0, 16000) * 32767).astype(np.int16)
        path = write_wav(tmp_path / "m.wav", 16000, data)
        left, right = dsp.ingest(path)
        np.testing.assert_array_equal(left.samples, right.samples)

    def test_resampled_tone_matches_direct_generation(self, tmp_path):
        path = write_wav(tmp_path / "t.wav", 32000, tone(1000, 2.0, 32000).astype(np.float32))
        left, _ = dsp.ingest(path)
        ref = tone(1000, 2.0, 16000)
        r = np.dot(left.samples, ref) / (
            np.linalg.norm(left.samples) * np.linalg.norm(ref)
        )
        assert r > 0.999

    def test_float32_wav_supported(self, tmp_path):
        path = write_wav(tmp_path / "f.wav", 48000, tone(500, 0.5, 48000).astype(np.float32))
        left, _ = dsp.ingest(path)
        assert len(left) == 8000

    def test_peak_normalization_only_when_needed(self, tmp_path):
        loud = tone(300, 0.25, 16000, amp=1.7).astype(np.float32)
        path = write_wav(tmp_path / "loud.wav", 16000, loud)
        left, _ = dsp.ingest(path)
        assert np.abs(left.samples).max() <= 1.0 + 1e-9

        quiet = tone(250, 0.25, 16000, amp=0.1).astype(np.float32)
        path = write_wav(tmp_path / "quiet.wav", 16000, quiet)
        left, _ = dsp.ingest(path)
        assert abs(np.abs(left.samples).max() - 0.1) < 1e-4

    def test_errors(self, tmp_path):
        with pytest.raises(AudioError):
            dsp.ingest(tmp_path / "missing.wav")
        bad_rate = write_wav(
            tmp_path / "r.wav", 8000, (tone(100, 0.1, 8000) * 32767).astype(np.int16)
        )
        with pytest.raises(AudioError, match="sample rate"):
            dsp.ingest(bad_rate)
        bad_enc = write_wav(
            tmp_path / "e.wav", 16000, (tone(100, 0.1, 16000) * 1e9).astype(np.int32)
        )
        with pytest.raises(AudioError, match="encoding"):
            dsp.ingest(bad_enc)
        empty = write_wav(tmp_path / "z.wav", 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(AudioError, match="zero-length"):
            dsp.ingest(empty)


class TestPad:
    def test_three_second_input(self):
        w = dsp.Waveform(np.ones(48000), 16000, "left")
        out = dsp.pad_to_7s(w)
        assert len(out) == 112000
        assert np.all(out.samples[48000:] == 0.0)
        assert np.all(out.samples[:48000] == 1.0)

    def test_exact_seven_seconds_unchanged(self):
        x = np.random.default_rng(1).normal(size=112000)
        out = dsp.pad_to_7s(dsp.Waveform(x, 16000, "left"))
        np.testing.assert_array_equal(out.samples, x)

    def test_nine_second_input_truncated(self):
        x = np.random.default_rng(2).normal(size=9 * 16000)
        out = dsp.pad_to_7s(dsp.Waveform(x, 16000, "right"))
        np.testing.assert_array_equal(out.samples, x[:112000])


class TestStftPower:
    def test_zero_waveform(self):
        w = dsp.Waveform(np.zeros(112000), 16000, "left")
        ft = dsp.stft_power(w)
        assert ft.data.shape == (350, 256)
        assert ft.domain == "ps"
        assert np.all(ft.data.data == 0.0)

    def test_frame_count_350(self):
        x = np.random.default_rng(3).uniform(-0.5, 0.5, size=112000)
        ft = dsp.stft_power(dsp.Waveform(x, 16000, "left"))
        assert ft.frames == 350

    def test_tone_bin_argmax(self):
        # 1 kHz at n_fft=512/16 kHz lands on bin 1000*512/16000 = 32.
        w = dsp.Waveform(tone(1000, 7.0, 16000, amp=1.0), 16000, "left")
        ft = dsp.stft_power(w)
        peaks = ft.data.data[2:-2].argmax(axis=1)
        assert np.all(peaks == 32)

    def test_power_nonnegative_before_log(self):
        x = np.random.default_rng(4).uniform(-1, 1, size=112000)
        power = dsp.power_spectrogram(dsp.Waveform(x, 16000, "left"))
        assert np.all(power >= 0.0)

    def test_bad_hop_rejected(self):
        with pytest.raises(ConfigError):
            dsp.StftConfig(hop=321)
        with pytest.raises(ConfigError):
            dsp.StftConfig(hop=160)  # 100 fps breaks alignment


class TestLfb:
    def test_init_deterministic_and_monotone(self):
        a = dsp.init_lfb(5, n_filters=32)
        b = dsp.init_lfb(5, n_filters=32)
        np.testing.assert_array_equal(a.low_hz.data, b.low_hz.data)
        np.testing.assert_array_equal(a.band_hz.data, b.band_hz.data)
        low, high = a.cutoffs()
        assert np.all(np.diff(low) > 0) and np.all(np.diff(high) > 0)
        assert np.all(low > 0) and np.all(high > low) and np.all(high < 8000)

    def test_lowest_cutoff_30hz(self):
        p = dsp.init_lfb(0, n_filters=128)
        low, _ = p.cutoffs()
        assert abs(low[0] - 30.0) < 1e-6

    def test_zero_waveform_constant_rows(self):
        p = dsp.init_lfb(0, n_filters=8, dtype=np.float64)
        w = dsp.Waveform(np.zeros(112000), 16000, "left")
        out = dsp.lfb_forward(w, p, dtype=np.float64).data.data
        assert out.shape == (350, 8)
        np.testing.assert_allclose(out - out[0][None, :], 0.0, atol=1e-12)
        np.testing.assert_allclose(out, 0.0, atol=1e-6)

    def test_tone_response_matches_direct_convolution(self):
        p = dsp.init_lfb(0, n_filters=128, dtype=np.float64)
        low, high = p.cutoffs()
        in_band = int(np.argmax((low <= 1000) & (high >= 1000)))
        off_band = int(np.argmax(low >= 6000))
        w = dsp.Waveform(tone(1000, 7.0, 16000), 16000, "left")
        out = dsp.lfb_forward(w, p, dtype=np.float64).data.data

        kern = dsp.build_sinc_kernels(low, high, p.kernel_len)
        for idx in (in_band, off_band):
            y = np.convolve(w.samples, kern[idx], mode="same")
            e = (y.reshape(350, 320) ** 2).mean(axis=1)
            expect = np.log1p((e + dsp._ENERGY_FLOOR) * dsp._ENERGY_GAIN)
            np.testing.assert_allclose(out[:, idx], expect, atol=1e-8)
        assert out[:, in_band].mean() > out[:, off_band].mean()

    def test_cutoff_gradient_matches_finite_differences(self):
        p = dsp.init_lfb(0, n_filters=8, dtype=np.float64)
        x = np.random.default_rng(5).uniform(-0.4, 0.4, size=4 * 320)
        ctx = dsp.WaveContext.from_waveform(
            dsp.Waveform(x, 16000, "left"), p.kernel_len, dtype=np.float64
        )
        err = grad_check(
            lambda: dsp.lfb_forward(ctx, p, dtype=np.float64).data.mean(),
            p.parameters(),
            eps=1e-5,
            coords=8,
            seed=2,
        )
        assert err < 1e-4

    def test_translation_covariance_by_one_hop(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-0.5, 0.5, size=112000)
        shifted = np.concatenate([np.zeros(320), x[:-320]])
        p = dsp.init_lfb(0, n_filters=8, dtype=np.float64)
        a = dsp.lfb_forward(dsp.Waveform(x, 16000, "left"), p, dtype=np.float64).data.data
        b = dsp.lfb_forward(
            dsp.Waveform(shifted, 16000, "left"), p, dtype=np.float64
        ).data.data
        np.testing.assert_allclose(b[2:349], a[1:348], atol=1e-4)

    def test_deterministic(self):
        x = np.random.default_rng(7).uniform(-0.5, 0.5, size=112000)
        w = dsp.Waveform(x, 16000, "left")
        p = dsp.init_lfb(0, n_filters=8)
        a = dsp.lfb_forward(w, p).data.data.tobytes()
        b = dsp.lfb_forward(w, p).data.data.tobytes()
        assert a == b
