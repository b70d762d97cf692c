import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel

from app.audio import SAMPLE_RATE, StereoDialogue, Waveform, load_wav, rms_power, save_wav
from app.schemas import Condition


logger = logging.getLogger(__name__)

CLEAN = Condition()
MIN_NOISE_CLIP_S = 1.0


class SilentInputError(ValueError):
    pass


class DatasetTooSmallError(ValueError):
    pass


#------------------------ NOISE BANK

@dataclass(frozen=True, eq=False)
class NoiseBank:
    entries: tuple[tuple[str, Waveform], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for name, clip in self.entries:
            if clip.duration_s < MIN_NOISE_CLIP_S:
                raise ValueError(
                    f"Noise clip '{name}' is {clip.duration_s:.2f} s long; at least {MIN_NOISE_CLIP_S} s required"
                )

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def get(self, name: str) -> Waveform:
        for entry_name, clip in self.entries:
            if entry_name == name:
                return clip
        raise KeyError(f"Noise '{name}' not in bank {self.names}")


def load_noise_bank(directory: str | Path) -> NoiseBank:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Noise directory not found: {directory}")
    entries = [(path.stem, load_wav(path)) for path in sorted(directory.glob("*.wav"))]
    logger.info("Loaded %d noise clips from %s", len(entries), directory)
    return NoiseBank(tuple(entries))


def write_noise_bank(bank: NoiseBank, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, clip in bank.entries:
        path = directory / f"{name}.wav"
        save_wav(clip, path)
        paths.append(path)
    return paths


def _shaped_noise(rng: np.random.Generator, n: int, exponent: float) -> np.ndarray:
    """Gaussian noise whose power spectrum falls as 1/f**exponent."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    freqs[0] = freqs[1]
    spectrum *= freqs ** (-exponent / 2.0)
    return np.fft.irfft(spectrum, n)


def _normalize(samples: np.ndarray, peak: float = 0.5) -> Waveform:
    samples = samples - np.mean(samples)
    return Waveform(samples * (peak / np.max(np.abs(samples))))


def _babble(rng: np.random.Generator, n: int, talkers: int = 6) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    mixture = np.zeros(n)
    for _ in range(talkers):
        voice = _shaped_noise(rng, n, 1.0)
        rate = rng.uniform(3.0, 5.0)
        envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        mixture += voice * envelope ** 2
    return mixture


def _hum(rng: np.random.Generator, n: int) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    hum = sum(np.sin(2 * np.pi * 50.0 * k * t) / k for k in range(1, 8))
    return hum + 0.05 * rng.standard_normal(n)


def synthetic_noise_bank(seed: int = 0, duration_s: float = 10.0) -> NoiseBank:
    """Stationary, ambient, crowd and machine noise stand-ins."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * SAMPLE_RATE)
    return NoiseBank((
        ("white", _normalize(rng.standard_normal(n))),
        ("pink", _normalize(_shaped_noise(rng, n, 1.0))),
        ("brown", _normalize(_shaped_noise(rng, n, 2.0))),
        ("babble", _normalize(_babble(rng, n))),
        ("hum", _normalize(_hum(rng, n))),
    ))


#------------------------ MIXING

@dataclass(frozen=True, eq=False)
class MixResult:
    waveform: Waveform
    scaled_noise: np.ndarray
    gain: float
    n_clipped: int


def fit_noise(noise: Waveform, n_samples: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile or truncate ``noise`` to ``n_samples`` starting at a seeded offset."""
    offset = int(rng.integers(len(noise))) if rng is not None else 0
    return np.take(noise.samples, (offset + np.arange(n_samples)) % len(noise))


def noise_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    return math.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def mix_with_report(
        signal: Waveform,
        noise: Waveform,
        snr_db: float | None,
        *,
        rng: np.random.Generator | None = None,
) -> MixResult:
    if snr_db is None or math.isinf(snr_db):
        return MixResult(signal, np.zeros(len(signal)), 0.0, 0)

    signal_power = rms_power(signal)
    if signal_power == 0.0:
        raise SilentInputError("Signal is silent; SNR is undefined")
    if len(noise) == 0:
        raise SilentInputError("Noise clip is empty; SNR is undefined")
    segment = fit_noise(noise, len(signal), rng)
    noise_power = float(np.mean(np.square(segment)))
    if noise_power == 0.0:
        raise SilentInputError("Noise segment is silent; SNR is undefined")

    gain = noise_gain(signal_power, noise_power, snr_db)
    scaled = gain * segment
    waveform, n_clipped = Waveform.clipped(signal.samples + scaled)
    logger.debug("Mixed at %.1f dB, gain=%.4f, clipped=%d", snr_db, gain, n_clipped)
    return MixResult(waveform, scaled, gain, n_clipped)


def mix_at_snr(
        signal: Waveform,
        noise: Waveform,
        snr_db: float | None,
        *,
        rng: np.random.Generator | None = None,
) -> Waveform:
    return mix_with_report(signal, noise, snr_db, rng=rng).waveform


#------------------------ CONDITIONS

def item_rng(seed: int, item_id: str | int) -> np.random.Generator:
    """Independent generator per item, derived from (global seed, item id)."""
    return np.random.default_rng([seed, zlib.crc32(str(item_id).encode("utf-8"))])


def sample_condition(
        rng: np.random.Generator,
        bank: NoiseBank,
        snr_set: Sequence[float],
        *,
        clean_prob: float = 0.0,
) -> Condition:
    if len(bank) == 0:
        raise ValueError("Cannot sample a condition from an empty noise bank")
    if len(snr_set) == 0:
        raise ValueError("Cannot sample a condition from an empty SNR set")
    if clean_prob > 0.0 and rng.random() < clean_prob:
        return CLEAN
    name = bank.names[int(rng.integers(len(bank)))]
    snr_db = float(snr_set[int(rng.integers(len(snr_set)))])
    return Condition(noise_name=name, snr_db=snr_db)


@dataclass(frozen=True, eq=False)
class AugmentedDialogue:
    dialogue: StereoDialogue
    condition: Condition
    n_clipped: int


def apply_condition(
        dialogue: StereoDialogue,
        bank: NoiseBank | None,
        condition: Condition,
        rng: np.random.Generator | None = None,
) -> AugmentedDialogue:
    """Noise goes on the user channel only; labels stay untouched."""
    if condition.is_clean or len(dialogue.channel_a) == 0:
        return AugmentedDialogue(dialogue, CLEAN, 0)
    if bank is None:
        raise ValueError(f"Condition {condition.label} dB needs a noise bank")
    if rms_power(dialogue.channel_a) == 0.0:
        return AugmentedDialogue(dialogue, CLEAN, 0)
    mixed = mix_with_report(dialogue.channel_a, bank.get(condition.noise_name), condition.snr_db, rng=rng)
    return AugmentedDialogue(dialogue.with_user(mixed.waveform), condition, mixed.n_clipped)


def augment_user_channel(
        dialogue: StereoDialogue,
        bank: NoiseBank,
        rng: np.random.Generator,
        *,
        snr_set: Sequence[float],
        clean_prob: float = 0.0,
) -> AugmentedDialogue:
    condition = sample_condition(rng, bank, snr_set, clean_prob=clean_prob)
    return apply_condition(dialogue, bank, condition, rng)


#------------------------ SPLITS & MANIFEST

def split_dataset(items: Sequence[str], seed: int) -> tuple[list[str], list[str], list[str]]:
    """8:1:1 train/valid/test partition, deterministic under ``seed``."""
    n = len(items)
    if n < 10:
        raise DatasetTooSmallError(f"split_dataset needs at least 10 items, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    n_train = math.floor(0.8 * n + 0.5)
    n_valid = math.floor(0.1 * n + 0.5)
    return shuffled[:n_train], shuffled[n_train:n_train + n_valid], shuffled[n_train + n_valid:]


class ConditionRecord(BaseModel):
    item_id: str
    noise_name: str | None
    snr_db: float | None
    seed: int


def write_condition_manifest(records: Sequence[ConditionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.model_dump_json() + "\n")
