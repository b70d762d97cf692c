import numpy as np
import pytest
import soundfile as sf
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.audio import (
    ChannelMismatchError,
    EmptyWaveformError,
    SAMPLE_RATE,
    StereoDialogue,
    UnsupportedChannelCountError,
    UnsupportedEncodingError,
    UnsupportedSampleRateError,
    VadTrack,
    Waveform,
    apply_hangover,
    energy_activity,
    load_wav,
    rms_power,
    save_wav,
    to_pcm16,
    vad_from_energy,
)


# ------------------ WAV I/O ------------------ #

def test_load_wav_silence(tmp_path):
    path = tmp_path / "silence.wav"
    sf.write(str(path), np.zeros(16000, dtype=np.int16), SAMPLE_RATE, subtype="PCM_16")

    w = load_wav(path)

    assert len(w) == 16000
    assert w.duration_s == 1.0
    assert not np.any(w.samples)


def test_load_wav_normalizes_by_32768(tmp_path):
    path = tmp_path / "peak.wav"
    sf.write(str(path), np.array([32767, -32768, 0], dtype=np.int16), SAMPLE_RATE, subtype="PCM_16")

    w = load_wav(path)

    assert w.samples[0] == pytest.approx(32767 / 32768)
    assert w.samples[1] == -1.0


def test_save_and_load_round_trip_within_one_step(tmp_path, rng):
    for i in range(100):
        original = Waveform(rng.uniform(-1.0, 1.0, size=int(rng.integers(1, 400))))
        path = tmp_path / f"rt{i}.wav"
        save_wav(original, path)
        assert np.max(np.abs(load_wav(path).samples - original.samples)) <= 1.0 / 32768


def test_save_wav_saturates_full_scale(tmp_path):
    path = tmp_path / "full.wav"
    save_wav(Waveform(np.array([1.0, -1.0, 0.0])), path)

    pcm, _ = sf.read(str(path), dtype="int16")

    assert pcm.tolist() == [32767, -32768, 0]
    assert to_pcm16(Waveform(np.zeros(4))).tolist() == [0, 0, 0, 0]


def test_save_wav_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_wav(Waveform(np.zeros(10)), tmp_path / "missing" / "dir" / "x.wav")


def test_load_wav_errors_are_distinct(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")

    low_rate = tmp_path / "8k.wav"
    sf.write(str(low_rate), np.zeros(800, dtype=np.int16), 8000, subtype="PCM_16")
    with pytest.raises(UnsupportedSampleRateError):
        load_wav(low_rate)

    stereo = tmp_path / "stereo.wav"
    sf.write(str(stereo), np.zeros((800, 2), dtype=np.int16), SAMPLE_RATE, subtype="PCM_16")
    with pytest.raises(UnsupportedChannelCountError):
        load_wav(stereo)

    floating = tmp_path / "float.wav"
    sf.write(str(floating), np.zeros(800, dtype=np.float32), SAMPLE_RATE, subtype="FLOAT")
    with pytest.raises(UnsupportedEncodingError):
        load_wav(floating)


# ------------------ WAVEFORM ------------------ #

def test_waveform_rejects_out_of_range_and_clipped_reports():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, 1.5]))

    w, n_clipped = Waveform.clipped(np.array([0.0, 1.5, -2.0, 0.3]))

    assert n_clipped == 2
    assert w.samples.tolist() == [0.0, 1.0, -1.0, 0.3]


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_waveform_rejects_non_finite_samples(bad):
    with pytest.raises(ValueError, match="finite"):
        Waveform(np.array([0.0, bad, 0.5]))
    with pytest.raises(ValueError, match="finite"):
        Waveform.clipped(np.array([0.0, bad]))


def test_waveform_wrong_rate():
    with pytest.raises(UnsupportedSampleRateError):
        Waveform(np.zeros(10), sample_rate=8000)


def test_stereo_dialogue_length_mismatch():
    with pytest.raises(ChannelMismatchError):
        StereoDialogue(
            Waveform(np.zeros(1600)), Waveform(np.zeros(1500)), VadTrack(np.zeros(10)), VadTrack(np.zeros(10))
        )


# ------------------ POWER ------------------ #

def test_rms_power_examples():
    assert rms_power(Waveform(np.full(100, 0.5))) == 0.25
    assert rms_power(Waveform(np.zeros(100))) == 0.0

    t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
    assert rms_power(Waveform(np.sin(2 * np.pi * 100 * t))) == pytest.approx(0.5, abs=1e-6)


def test_rms_power_empty():
    with pytest.raises(EmptyWaveformError):
        rms_power(Waveform(np.zeros(0)))


@settings(max_examples=50, deadline=None)
@given(
    samples=arrays(np.float64, st.integers(1, 300), elements=st.floats(-0.5, 0.5)),
    scale=st.floats(0.0, 2.0),
)
def test_rms_power_scales_quadratically(samples, scale):
    base = rms_power(Waveform(samples))
    assert rms_power(Waveform(samples * scale)) == pytest.approx(scale ** 2 * base, rel=1e-9, abs=1e-15)


# ------------------ ENERGY VAD ------------------ #

def _burst(rng) -> Waveform:
    samples = np.zeros(2 * SAMPLE_RATE)
    samples[SAMPLE_RATE // 2:SAMPLE_RATE] = rng.uniform(-1.0, 1.0, SAMPLE_RATE // 2)
    return Waveform(samples)


def test_vad_silence_is_inactive():
    track = vad_from_energy(Waveform(np.zeros(SAMPLE_RATE)))
    assert len(track) == 100
    assert not np.any(track.frames)


def test_vad_burst_without_hangover(rng):
    track = vad_from_energy(_burst(rng), hangover_ms=0)
    assert np.flatnonzero(track.frames).tolist() == list(range(50, 100))
    assert track.segments() == [(50, 100)]


def test_vad_burst_with_hangover(rng):
    track = vad_from_energy(_burst(rng), hangover_ms=100)
    assert np.flatnonzero(track.frames).tolist() == list(range(50, 110))


def test_vad_empty_and_negative_hangover(rng):
    with pytest.raises(EmptyWaveformError):
        vad_from_energy(Waveform(np.zeros(0)))
    with pytest.raises(ValueError):
        vad_from_energy(_burst(rng), hangover_ms=-10)


@settings(max_examples=50, deadline=None)
@given(raw=arrays(bool, st.integers(1, 200)), hangover=st.integers(0, 30))
def test_hangover_is_idempotent(raw, hangover):
    once = apply_hangover(raw, raw, hangover)
    assert np.array_equal(apply_hangover(once, raw, hangover), once)
    assert np.all(once[raw])


def test_energy_activity_threshold(rng):
    w = _burst(rng)
    assert np.count_nonzero(energy_activity(w, -40.0)) == 50
    assert np.count_nonzero(energy_activity(w, 10.0)) == 0
