"""Deterministic log-mel frontend, one vector per 100 ms prediction hop."""
from functools import lru_cache

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from app.audio import SAMPLE_RATE, Waveform


FEATURE_BANDS = 40
HOP_SAMPLES = SAMPLE_RATE // 10
WINDOW_SAMPLES = 4 * HOP_SAMPLES
LOG_FLOOR = 1e-10


@lru_cache(maxsize=4)
def mel_filterbank(n_bands: int = FEATURE_BANDS) -> np.ndarray:
    """(n_bands, WINDOW_SAMPLES // 2 + 1) triangular filters, unit peak."""
    return librosa.filters.mel(
        sr=SAMPLE_RATE,
        n_fft=WINDOW_SAMPLES,
        n_mels=n_bands,
        fmin=0.0,
        fmax=SAMPLE_RATE / 2,
        norm=None,
    ).astype(np.float64)


@lru_cache(maxsize=1)
def analysis_window() -> np.ndarray:
    return get_window("hann", WINDOW_SAMPLES)


def n_feature_frames(n_samples: int) -> int:
    return n_samples // HOP_SAMPLES


def extract_features(w: Waveform, n_bands: int = FEATURE_BANDS) -> np.ndarray:
    """Frame t summarizes the 400 ms of audio ending at (t + 1) * 100 ms."""
    n_frames = n_feature_frames(len(w))
    if n_frames == 0:
        return np.zeros((0, n_bands))

    padded = np.concatenate((np.zeros(WINDOW_SAMPLES - HOP_SAMPLES), w.samples[: n_frames * HOP_SAMPLES]))
    frames = sliding_window_view(padded, WINDOW_SAMPLES)[::HOP_SAMPLES][:n_frames]
    magnitude = np.abs(np.fft.rfft(frames * analysis_window(), axis=1))
    mel = magnitude @ mel_filterbank(n_bands).T
    return np.log(np.maximum(mel, LOG_FLOOR))


def silent_features(n_frames: int, n_bands: int = FEATURE_BANDS) -> np.ndarray:
    return np.full((n_frames, n_bands), np.log(LOG_FLOOR))
