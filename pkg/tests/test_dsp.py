import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from attentive_ser import dsp
from attentive_ser.dsp import DspConfig, DspError, MelSpectrogram, Utterance


def naive_power_spectrum(frame, n_fft):
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    n = np.arange(n_fft)
    out = []
    for k in range(n_fft // 2 + 1):
        s = np.sum(x * np.exp(-2j * np.pi * k * n / n_fft))
        out.append(abs(s) ** 2)
    return np.array(out)


def count_frames_by_offsets(n_samples, frame, hop):
    count, start = 0, 0
    while start + frame <= n_samples:
        count += 1
        start += hop
    return count


CFG = DspConfig()


def test_default_frame_and_hop_lengths():
    assert CFG.frame_length == 400
    assert CFG.hop_length == 160


def test_seven_seconds_gives_698_frames():
    assert count_frames_by_offsets(112000, 400, 160) == 698
    frames = dsp.frame_signal(np.zeros(112000), CFG)
    assert frames.shape == (698, 400)


def test_exactly_one_frame():
    assert dsp.frame_signal(np.ones(400), CFG).shape == (1, 400)


def test_too_short_raises():
    with pytest.raises(DspError, match="utterance too short"):
        dsp.frame_signal(np.ones(399), CFG)


@settings(max_examples=200, deadline=None)
@given(frame=st.integers(1, 64), hop=st.integers(1, 64), extra=st.integers(0, 500))
def test_frame_count_formula(frame, hop, extra):
    n = frame + extra
    assert dsp.num_frames(n, frame, hop) == count_frames_by_offsets(n, frame, hop)
    assert dsp.num_frames(n, frame, hop) == (n - frame) // hop + 1


def test_frames_are_hann_windowed_slices():
    x = np.random.default_rng(0).uniform(-1, 1, 2000)
    frames = dsp.frame_signal(x, CFG)
    w = dsp.hann_window(400)
    np.testing.assert_allclose(frames[3], x[480:880] * w)


def test_power_spectrum_of_zeros():
    assert np.all(dsp.power_spectrum(np.zeros(400), 512) == 0)


def test_power_spectrum_of_impulse_is_flat():
    frame = np.zeros(8)
    frame[0] = 1.0
    np.testing.assert_allclose(naive_power_spectrum(frame, 8), np.ones(5))
    np.testing.assert_allclose(dsp.power_spectrum(frame, 8), np.ones(5))


@pytest.mark.parametrize("n_fft,length", [(8, 5), (64, 64), (256, 200), (512, 400)])
def test_power_spectrum_matches_naive_dft(n_fft, length):
    rng = np.random.default_rng(n_fft)
    for _ in range(5):
        frame = rng.uniform(-1, 1, length)
        expected = naive_power_spectrum(frame, n_fft)
        got = dsp.power_spectrum(frame, n_fft)
        assert got.shape == (n_fft // 2 + 1,)
        np.testing.assert_allclose(got, expected, rtol=1e-9, atol=1e-9 * expected.max())


def test_mel_of_700hz():
    assert dsp.hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))
    assert dsp.hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)
    assert dsp.mel_to_hz(dsp.hz_to_mel(1234.5)) == pytest.approx(1234.5)


def test_filterbank_shape_and_rows():
    fb = dsp.mel_filterbank(CFG)
    assert fb.shape == (64, 257)
    assert np.all(fb >= 0)
    assert np.all(fb.max(axis=1) > 0)
    for row in fb:
        support = np.flatnonzero(row > 0)
        assert np.all(np.diff(support) == 1), "support must be contiguous"
    peaks = fb.argmax(axis=1)
    assert np.all(np.diff(peaks) >= 0)
    assert np.all(np.diff(dsp.mel_centres_hz(CFG)) > 0)


def test_filterbank_rejects_empty_filters():
    with pytest.raises(DspError, match="covers no FFT bin"):
        dsp.mel_filterbank(DspConfig(n_mels=200, n_fft=64, frame_ms=4))


def test_silence_gives_log_floor():
    u = Utterance("s", "x", np.zeros(16000), 16000)
    spec = dsp.mel_spectrogram(u, CFG)
    assert np.all(spec.values == math.log(CFG.log_floor))


@pytest.mark.parametrize("m", [0, 5, 20, 40, 63])
def test_sine_at_filter_centre_peaks_in_that_row(m):
    f = dsp.mel_centres_hz(CFG)[m]
    t = np.arange(16000) / 16000
    u = Utterance("sine", "x", 0.5 * np.sin(2 * np.pi * f * t), 16000)
    values = dsp.mel_spectrogram(u, CFG).values
    assert np.all(values.argmax(axis=0) == m)


def test_mel_spectrogram_matches_naive_pipeline():
    cfg = DspConfig(n_mels=16)
    x = np.random.default_rng(1).uniform(-0.5, 0.5, 1200)
    u = Utterance("r", "x", x, 16000)
    fb = dsp.mel_filterbank(cfg)
    w = dsp.hann_window(400)
    cols = []
    for start in range(0, 1200 - 400 + 1, 160):
        p = naive_power_spectrum(x[start : start + 400] * w, 512)
        cols.append(np.log(fb @ p + cfg.log_floor))
    np.testing.assert_allclose(dsp.mel_spectrogram(u, cfg).values, np.array(cols).T, rtol=1e-9)


def test_seven_second_grid_shape():
    u = Utterance("a", "x", np.random.default_rng(0).uniform(-0.1, 0.1, 112000), 16000)
    assert dsp.mel_spectrogram(u, CFG).values.shape == (64, 698)


def test_trailing_silence_shorter_than_hop_is_invisible():
    # signal ends on a frame boundary, so no padding below one hop adds a frame
    x = np.random.default_rng(2).uniform(-0.5, 0.5, 400 + 160 * 29)
    a = dsp.mel_spectrogram(Utterance("a", "x", x, 16000), CFG).values
    for pad in (1, 50, 159):
        padded = np.concatenate([x, np.zeros(pad)])
        b = dsp.mel_spectrogram(Utterance("b", "x", padded, 16000), CFG).values
        assert b.shape == a.shape
        np.testing.assert_array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(400, 3000), pad=st.integers(1, 159))
def test_padding_that_adds_no_frame_changes_nothing(n, pad):
    x = np.random.default_rng(n).uniform(-0.5, 0.5, n)
    a = dsp.mel_spectrogram(Utterance("a", "x", x, 16000), CFG).values
    b = dsp.mel_spectrogram(Utterance("b", "x", np.concatenate([x, np.zeros(pad)]), 16000), CFG).values
    if dsp.num_frames(n + pad, 400, 160) == a.shape[1]:
        np.testing.assert_array_equal(a, b)
    else:
        np.testing.assert_allclose(a, b[:, : a.shape[1]], rtol=1e-12)


def test_wrong_sample_rate_rejected():
    with pytest.raises(DspError, match="resample"):
        dsp.mel_spectrogram(Utterance("a", "x", np.zeros(8000), 8000), CFG)


def _spec(frames):
    values = np.random.default_rng(frames).normal(size=(64, frames))
    return MelSpectrogram(values, CFG.fingerprint(), frames)


def test_pad_short_input():
    s = _spec(698)
    out = dsp.pad_or_truncate(s, 1280, CFG.log_floor)
    assert out.values.shape == (64, 1280)
    np.testing.assert_array_equal(out.values[:, :698], s.values)
    assert np.all(out.values[:, 698:] == math.log(1e-10))


def test_truncate_keeps_head_bit_identical():
    s = _spec(1500)
    out = dsp.pad_or_truncate(s, 1280, CFG.log_floor)
    assert out.values.shape == (64, 1280)
    assert np.array_equal(out.values, s.values[:, :1280])


def test_pad_identity_and_idempotence():
    s = _spec(1280)
    once = dsp.pad_or_truncate(s, 1280, CFG.log_floor)
    assert np.array_equal(once.values, s.values)
    for n in (10, 1280, 2000):
        f = dsp.pad_or_truncate(_spec(n), 1280, CFG.log_floor)
        ff = dsp.pad_or_truncate(f, 1280, CFG.log_floor)
        assert np.array_equal(f.values, ff.values)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=400, max_size=1200))
def test_outputs_always_finite(samples):
    spec = dsp.extract(Utterance("h", "x", np.array(samples), 16000), CFG)
    assert np.all(np.isfinite(spec.values))
    assert np.all(spec.values >= math.log(CFG.log_floor) - 1e-12)


def test_config_validation():
    with pytest.raises(DspError):
        DspConfig(n_fft=256).validate()  # 400-sample frame > 256
    with pytest.raises(DspError):
        DspConfig(n_mels=1).validate()
    assert DspConfig().fingerprint() == DspConfig().fingerprint()
    assert DspConfig().fingerprint() != DspConfig(n_mels=32).fingerprint()


def test_read_wav_int16_stereo_and_resample(tmp_path):
    sr = 8000
    t = np.arange(sr) / sr
    left = (0.5 * np.sin(2 * np.pi * 440 * t) * 32767).astype(np.int16)
    path = tmp_path / "s.wav"
    wavfile.write(path, sr, np.stack([left, left], axis=1))
    x, rate = dsp.read_wav(path)
    assert rate == sr and x.ndim == 1
    np.testing.assert_allclose(x, left / 32768.0)
    u = dsp.load_utterance(path, "u", "spk", CFG)
    assert u.sample_rate == 16000
    assert abs(len(u.samples) - 16000) <= 1
    assert u.duration == pytest.approx(1.0, abs=1 / 16000)
    assert np.all(np.abs(u.samples) <= 1)


def test_read_wav_float32(tmp_path):
    x = np.linspace(-1, 1, 1000).astype(np.float32)
    wavfile.write(tmp_path / "f.wav", 16000, x)
    y, _ = dsp.read_wav(tmp_path / "f.wav")
    np.testing.assert_allclose(y, x, rtol=1e-6)


def test_feature_cache_round_trip(tmp_path):
    spec = _spec(1280)
    dsp.save_features(tmp_path / "a.npz", spec, CFG, "a", "NI", 7.5, "a.wav")
    back, header = dsp.load_features(tmp_path / "a.npz")
    assert np.array_equal(back.values, spec.values)
    assert header["dsp_fingerprint"] == CFG.fingerprint()
    assert header["speaker"] == "NI" and header["duration"] == 7.5
