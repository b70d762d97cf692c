import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import soundfile as sf


logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
LABEL_FRAME_RATE = 100
LABEL_HOP = SAMPLE_RATE // LABEL_FRAME_RATE
PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    pass


class UnsupportedEncodingError(AudioFormatError):
    pass


class UnsupportedSampleRateError(AudioFormatError):
    pass


class UnsupportedChannelCountError(AudioFormatError):
    pass


class EmptyWaveformError(ValueError):
    pass


class ChannelMismatchError(ValueError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


#------------------------ TYPES

@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise UnsupportedSampleRateError(
                f"Waveform must be {SAMPLE_RATE} Hz, got {self.sample_rate} Hz"
            )
        samples = np.array(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("Waveform samples must lie in [-1.0, 1.0]; use Waveform.clipped()")
        object.__setattr__(self, "samples", _frozen(samples))

    @classmethod
    def clipped(cls, samples: np.ndarray) -> tuple["Waveform", int]:
        """Clip to [-1, 1] and report how many samples were touched."""
        samples = np.asarray(samples, dtype=np.float64)
        if not np.all(np.isfinite(samples)):
            raise ValueError("Waveform samples must be finite")
        n_clipped = int(np.count_nonzero(np.abs(samples) > 1.0))
        if n_clipped:
            logger.warning("Clipped %d of %d samples", n_clipped, samples.size)
        return cls(np.clip(samples, -1.0, 1.0)), n_clipped

    @classmethod
    def silence(cls, n_samples: int) -> "Waveform":
        return cls(np.zeros(n_samples))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def slice(self, start: int, stop: int) -> "Waveform":
        return Waveform(self.samples[start:stop])


def label_frames_for(n_samples: int) -> int:
    return math.ceil(n_samples / LABEL_HOP)


@dataclass(frozen=True, eq=False)
class VadTrack:
    frames: np.ndarray
    frame_rate: int = LABEL_FRAME_RATE

    def __post_init__(self):
        object.__setattr__(self, "frames", _frozen(np.array(self.frames, dtype=bool).reshape(-1)))

    def __len__(self) -> int:
        return self.frames.size

    @property
    def duration_s(self) -> float:
        return self.frames.size / self.frame_rate

    def segments(self) -> list[tuple[int, int]]:
        """Active runs as half-open ``(start, stop)`` label-frame ranges."""
        padded = np.concatenate(([False], self.frames, [False])).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        return [(int(start), int(stop)) for start, stop in zip(edges[::2], edges[1::2])]


class TurnSpan(NamedTuple):
    speaker: int
    start_s: float
    end_s: float


@dataclass(frozen=True, eq=False)
class StereoDialogue:
    """Channel A is always the user, channel B the robot."""
    channel_a: Waveform
    channel_b: Waveform
    vad_a: VadTrack
    vad_b: VadTrack
    turns: tuple[TurnSpan, ...] = field(default=())

    def __post_init__(self):
        if len(self.channel_a) != len(self.channel_b):
            raise ChannelMismatchError(
                f"Channel lengths differ: {len(self.channel_a)} vs {len(self.channel_b)} samples"
            )
        expected = label_frames_for(len(self.channel_a))
        if len(self.vad_a) != expected or len(self.vad_b) != expected:
            raise ChannelMismatchError(
                f"VAD tracks must have {expected} frames, got {len(self.vad_a)} and {len(self.vad_b)}"
            )

    @property
    def duration_s(self) -> float:
        return self.channel_a.duration_s

    def turns_of(self, speaker: int) -> list[TurnSpan]:
        return [turn for turn in self.turns if turn.speaker == speaker]

    def with_user(self, channel_a: Waveform) -> "StereoDialogue":
        return StereoDialogue(channel_a, self.channel_b, self.vad_a, self.vad_b, self.turns)

    def with_silent_robot(self) -> "StereoDialogue":
        return StereoDialogue(
            self.channel_a, Waveform.silence(len(self.channel_b)), self.vad_a, self.vad_b, self.turns
        )


#------------------------ WAV I/O

def load_wav(path: str | Path) -> Waveform:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"WAV file not found: {path}")

    info = sf.info(str(path))
    if info.format != "WAV" or info.subtype != "PCM_16":
        raise UnsupportedEncodingError(f"{path}: expected PCM_16 WAV, got {info.format}/{info.subtype}")
    if info.samplerate != SAMPLE_RATE:
        raise UnsupportedSampleRateError(f"{path}: expected {SAMPLE_RATE} Hz, got {info.samplerate} Hz")
    if info.channels != 1:
        raise UnsupportedChannelCountError(f"{path}: expected mono, got {info.channels} channels")

    pcm, _ = sf.read(str(path), dtype="int16", always_2d=False)
    return Waveform(pcm.astype(np.float64) / PCM_SCALE)


def to_pcm16(w: Waveform) -> np.ndarray:
    return np.clip(np.round(w.samples * PCM_SCALE), -32768, 32767).astype(np.int16)


def save_wav(w: Waveform, path: str | Path) -> None:
    path = Path(path)
    try:
        sf.write(str(path), to_pcm16(w), SAMPLE_RATE, subtype="PCM_16", format="WAV")
    except RuntimeError as exc:
        raise OSError(f"Cannot write WAV file {path}: {exc}") from exc


#------------------------ POWER & VAD

def rms_power(w: Waveform) -> float:
    if len(w) == 0:
        raise EmptyWaveformError("rms_power of an empty waveform is undefined")
    return float(np.mean(np.square(w.samples)))


def power_db(power: float) -> float:
    return 10.0 * math.log10(max(power, 1e-20))


def frame_energy_db(w: Waveform) -> np.ndarray:
    """Mean-square energy of every 10 ms label frame in dB full scale."""
    n_frames = label_frames_for(len(w))
    padded = np.zeros(n_frames * LABEL_HOP)
    padded[: len(w)] = w.samples
    energy = np.mean(np.square(padded.reshape(n_frames, LABEL_HOP)), axis=1)
    return 10.0 * np.log10(np.maximum(energy, 1e-20))


def energy_activity(w: Waveform, threshold_db: float) -> np.ndarray:
    if len(w) == 0:
        raise EmptyWaveformError("vad_from_energy of an empty waveform is undefined")
    return frame_energy_db(w) > threshold_db


def apply_hangover(frames: np.ndarray, anchors: np.ndarray, hangover_frames: int) -> np.ndarray:
    """Keep ``frames`` active for ``hangover_frames`` after every anchor frame.

    Anchored on the raw energy decisions, so re-applying with the same anchors
    changes nothing.
    """
    frames = np.asarray(frames, dtype=bool)
    if hangover_frames <= 0:
        return frames.copy()
    kernel = np.ones(hangover_frames + 1)
    extended = np.convolve(np.asarray(anchors, dtype=float), kernel)[: frames.size] > 0.5
    return frames | extended


def vad_from_energy(w: Waveform, threshold_db: float = -40.0, hangover_ms: float = 0.0) -> VadTrack:
    if hangover_ms < 0:
        raise ValueError(f"hangover_ms must be >= 0, got {hangover_ms}")
    raw = energy_activity(w, threshold_db)
    hangover_frames = int(round(hangover_ms * LABEL_FRAME_RATE / 1000.0))
    return VadTrack(apply_hangover(raw, raw, hangover_frames))
