import logging
import wave

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_base.audio import (CHUNK, HOP, AudioSignal, ChunkSet, chunk, generate_audio, hann, load_wav,
                               overlap_add, save_wav, spectrogram, write_spectrogram_csv)
from latent_base.conv_autoencoder import Conv1dAutoencoder
from latent_base.errors import SampleRateMismatch, TooShort, UnsupportedFormat
from latent_base.hmm import GaussianHMM
from latent_base.likelihood import ImplicitModel
from latent_base.numerics import make_rng


def write_pcm(path, samples, rate=8000, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype="<i2" if width == 2 else "u1").tobytes())


def snr_db(ref, est):
    return 10 * np.log10(np.sum(ref**2) / np.sum((ref - est) ** 2))


def small_audio_model(scale=1.0, n_states=3):
    rng = make_rng(0, "audio-model")
    ae = Conv1dAutoencoder(latent_dim=80, channels=(2, 2), rng=rng)
    hmm = GaussianHMM(np.full(n_states, 1.0 / n_states), np.full((n_states, n_states), 1.0 / n_states),
                      rng.standard_normal((n_states, 80)) * scale, np.full((n_states, 80), 0.01))
    return ImplicitModel(ae, hmm)


class TestWav:
    def test_zeros(self, tmp_path):
        write_pcm(tmp_path / "z.wav", np.zeros(8000, dtype=np.int16))
        sig = load_wav(tmp_path / "z.wav")
        assert len(sig) == 8000 and sig.sample_rate == 8000
        assert np.all(sig.samples == 0.0)

    def test_full_scale_square(self, tmp_path):
        write_pcm(tmp_path / "sq.wav", np.tile([32767, -32767], 100).astype(np.int16))
        sig = load_wav(tmp_path / "sq.wav")
        np.testing.assert_allclose(np.abs(sig.samples), 32767 / 32768)
        assert sig.samples[0] == pytest.approx(0.99997, abs=1e-5)

    def test_wrong_rate(self, tmp_path):
        write_pcm(tmp_path / "hi.wav", np.zeros(100, dtype=np.int16), rate=44100)
        with pytest.raises(SampleRateMismatch):
            load_wav(tmp_path / "hi.wav")

    def test_stereo_and_8bit_rejected(self, tmp_path):
        write_pcm(tmp_path / "st.wav", np.zeros(100, dtype=np.int16), channels=2)
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "st.wav")
        write_pcm(tmp_path / "u8.wav", np.zeros(100, dtype=np.uint8), width=1)
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "u8.wav")

    def test_not_a_wav(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"not audio at all")
        with pytest.raises(UnsupportedFormat):
            load_wav(tmp_path / "x.wav")

    def test_round_trip(self, tmp_path):
        x = make_rng(0, "wav").uniform(-1, 1, 4000)
        save_wav(AudioSignal(x), tmp_path / "r.wav")
        assert np.max(np.abs(load_wav(tmp_path / "r.wav").samples - x)) <= 1 / 32768

    def test_zeros_round_trip(self, tmp_path):
        save_wav(AudioSignal(np.zeros(10)), tmp_path / "z.wav")
        assert np.all(load_wav(tmp_path / "z.wav").samples == 0.0)

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_wav(AudioSignal(np.array([0.0, 1.5])), tmp_path / "bad.wav")

    def test_signal_validation(self):
        with pytest.raises(SampleRateMismatch):
            AudioSignal(np.zeros(4), sample_rate=16000)
        with pytest.raises(ValueError):
            AudioSignal(np.array([np.nan]))


class TestChunking:
    def test_one_second(self):
        cs = chunk(AudioSignal(np.zeros(8000)))
        assert cs.chunks.shape == (19, CHUNK) and cs.hop == HOP

    def test_minimum_length(self):
        assert chunk(AudioSignal(np.zeros(800))).chunks.shape == (1, 800)
        with pytest.raises(TooShort):
            chunk(AudioSignal(np.zeros(799)))

    def test_constant_signal_gives_window(self):
        cs = chunk(AudioSignal(np.ones(1600)))
        for frame in cs.chunks:
            np.testing.assert_array_equal(frame, hann(800))

    @settings(max_examples=100, deadline=None)
    @given(n=st.integers(800, 20_000))
    def test_count_arithmetic(self, n):
        assert len(chunk(AudioSignal(np.zeros(n))).chunks) == (n - 800) // 400 + 1

    def test_hann_is_cola(self):
        w = hann(800)
        np.testing.assert_allclose(w[:400] + w[400:], 1.0, atol=1e-15)
        assert w[0] == 0.0 and w[400] == 1.0


class TestOverlapAdd:
    def test_single_chunk(self, rng):
        frame = rng.standard_normal(800)
        np.testing.assert_array_equal(overlap_add(ChunkSet(frame[None])).samples, frame)

    def test_two_raw_frames(self):
        out = overlap_add(np.ones((2, 800))).samples
        assert len(out) == 1200
        np.testing.assert_array_equal(out[400:800], 2.0)
        np.testing.assert_array_equal(out[:400], 1.0)

    def test_length(self):
        assert len(overlap_add(np.zeros((19, 800)))) == 8000

    def test_cola_reconstruction(self):
        for seed in range(10):
            rng = make_rng(seed, "cola")
            x = rng.uniform(-1, 1, int(rng.integers(2000, 12000)))
            y = overlap_add(chunk(AudioSignal(x))).samples
            end = len(y) - 400
            assert snr_db(x[400:end], y[400:end]) > 60

    def test_empty(self):
        with pytest.raises(ValueError):
            overlap_add(np.zeros((0, 800)))


class TestSpectrogram:
    def test_one_khz_peak(self):
        t = np.arange(8000) / 8000
        grid = spectrogram(AudioSignal(np.sin(2 * np.pi * 1000 * t)))
        assert grid.shape[0] == 129
        assert abs(int(np.argmax(grid.mean(axis=1))) - 32) <= 1

    @pytest.mark.parametrize("freq", [250, 500, 700, 1000, 1300, 1700, 2100, 2600, 3100, 3700])
    def test_peak_bin_for_tones(self, freq):
        t = np.arange(4000) / 8000
        grid = spectrogram(np.sin(2 * np.pi * freq * t))
        assert abs(int(np.argmax(grid.mean(axis=1))) - round(freq / 8000 * 256)) <= 1

    def test_silence(self):
        np.testing.assert_array_equal(spectrogram(np.zeros(1000)), 0.0)

    def test_four_point_impulse(self):
        # periodic Hann of length 4 is (0, .5, 1, .5); an impulse at index 2 survives unscaled
        grid = spectrogram(np.array([0.0, 0.0, 1.0, 0.0]), fft_size=4, hop=4)
        np.testing.assert_allclose(grid[:, 0], [1.0, 1.0, 1.0], atol=1e-15)

    def test_matches_direct_dft(self, rng):
        x = rng.standard_normal(64)
        n = 16
        k = np.arange(n // 2 + 1)[:, None]
        basis = np.exp(-2j * np.pi * k * np.arange(n) / n)
        frames = [x[s:s + n] * hann(n) for s in range(0, 64 - n + 1, 8)]
        direct = np.abs(np.array([basis @ f for f in frames])).T
        np.testing.assert_allclose(spectrogram(x, fft_size=n, hop=8), direct, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(TooShort):
            spectrogram(np.zeros(100))

    def test_csv(self, tmp_path):
        grid = spectrogram(np.ones(512), 256, 128)
        write_spectrogram_csv(grid, tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert len(lines) == grid.shape[0] + 1
        assert len(lines[1].split(",")) == grid.shape[1]


class TestGenerateAudio:
    @pytest.mark.parametrize("frames,length", [(1, 800), (19, 8000)])
    def test_length(self, frames, length):
        gen = generate_audio(small_audio_model(), make_rng(0), frames)
        assert len(gen.signal) == length
        assert len(gen.states) == frames

    def test_reproducible(self):
        a = generate_audio(small_audio_model(), make_rng(4), 5)
        b = generate_audio(small_audio_model(), make_rng(4), 5)
        np.testing.assert_array_equal(a.signal.samples, b.signal.samples)

    def test_clipping_warns(self, caplog):
        model = small_audio_model(scale=1e4)
        with caplog.at_level(logging.WARNING):
            gen = generate_audio(model, make_rng(1), 3)
        assert gen.clip_fraction > 0.01
        assert "clipped" in caplog.text
        assert np.max(np.abs(gen.signal.samples)) <= 1.0
