"""Discrete projection states: 2 speakers x 4 future bins -> 256 classes.

Speaker 0 (user) occupies the low nibble, bin 0 is the least significant bit.
"""
from dataclasses import dataclass

import numpy as np

from app.audio import LABEL_FRAME_RATE
from app.schemas import BinConfig


N_SPEAKERS = 2
N_BINS = 4
N_STATES = 2 ** (N_SPEAKERS * N_BINS)
NOW_BINS = (0, 1)
NO_TARGET = -1

StateIndex = int
# 256 probabilities summing to 1
VapDistribution = np.ndarray


class StateIndexError(ValueError):
    pass


class HorizonTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProjectionWindow:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.shape != (N_SPEAKERS, N_BINS):
            raise ValueError(f"ProjectionWindow needs a 2x4 bit matrix, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, ProjectionWindow) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return encode_state(self)


_SHIFTS = (N_BINS * np.arange(N_SPEAKERS)[:, None] + np.arange(N_BINS)[None, :])
STATE_BITS = ((np.arange(N_STATES)[:, None, None] >> _SHIFTS[None]) & 1).astype(bool)
NOW_WEIGHTS = STATE_BITS[:, :, list(NOW_BINS)].mean(axis=2)


def encode_state(window: ProjectionWindow) -> StateIndex:
    return int(np.sum(window.bits.astype(np.int64) << _SHIFTS))


def decode_state(idx: StateIndex) -> ProjectionWindow:
    if not 0 <= int(idx) < N_STATES:
        raise StateIndexError(f"State index must be in 0..{N_STATES - 1}, got {idx}")
    return ProjectionWindow(STATE_BITS[int(idx)])


def swap_speakers(idx: StateIndex) -> StateIndex:
    return ((idx & 0x0F) << N_BINS) | (idx >> N_BINS)


def bin_edges(cfg: BinConfig) -> np.ndarray:
    """Bin boundaries in label frames, starting at 0."""
    return np.round(np.array((0.0, *cfg.boundaries_s)) * LABEL_FRAME_RATE).astype(int)


def _bin_bits(active: np.ndarray, edges: np.ndarray, ratio: float) -> np.ndarray:
    counts = np.add.reduceat(active.astype(np.int64), edges[:-1], axis=-1)
    sizes = np.diff(edges)
    return counts >= ratio * sizes - 1e-9


def window_from_labels(vad_a: np.ndarray, vad_b: np.ndarray, cfg: BinConfig = BinConfig()) -> ProjectionWindow:
    edges = bin_edges(cfg)
    horizon = int(edges[-1])
    vad_a, vad_b = np.asarray(vad_a, dtype=bool), np.asarray(vad_b, dtype=bool)
    if vad_a.size < horizon or vad_b.size < horizon:
        raise HorizonTooShortError(
            f"Label slices must cover {horizon} frames, got {vad_a.size} and {vad_b.size}"
        )
    stacked = np.stack((vad_a[:horizon], vad_b[:horizon]))
    return ProjectionWindow(_bin_bits(stacked, edges, cfg.activity_ratio))


def state_targets(
        vad_a: np.ndarray,
        vad_b: np.ndarray,
        starts: np.ndarray,
        cfg: BinConfig = BinConfig(),
) -> np.ndarray:
    """State index for every label-frame start; NO_TARGET where the horizon overruns."""
    edges = bin_edges(cfg)
    stacked = np.stack((np.asarray(vad_a, dtype=bool), np.asarray(vad_b, dtype=bool)))
    length = stacked.shape[1]
    cumulative = np.concatenate((np.zeros((2, 1), dtype=np.int64), np.cumsum(stacked, axis=1)), axis=1)
    starts = np.asarray(starts, dtype=np.int64)
    targets = np.full(starts.shape, NO_TARGET, dtype=np.int64)
    valid = starts + edges[-1] <= length
    if not np.any(valid):
        return targets

    lo = starts[valid, None] + edges[None, :-1]
    hi = starts[valid, None] + edges[None, 1:]
    counts = cumulative[:, hi] - cumulative[:, lo]
    bits = counts >= cfg.activity_ratio * np.diff(edges)[None, None, :] - 1e-9
    codes = np.sum(bits.astype(np.int64) << _SHIFTS[:, None, :], axis=(0, 2))
    targets[valid] = codes
    return targets


def p_now_pair(probs: VapDistribution) -> np.ndarray:
    """(user, robot) p_now for one distribution or a (frames, 256) stack."""
    probs = np.asarray(probs, dtype=np.float64)
    activity = probs @ NOW_WEIGHTS
    total = activity.sum(axis=-1, keepdims=True)
    safe = np.where(total < 1e-9, 1.0, total)
    return np.where(total < 1e-9, 0.5, activity / safe)


def p_now(probs: VapDistribution, speaker: int) -> float:
    if speaker not in (0, 1):
        raise ValueError(f"speaker must be 0 or 1, got {speaker}")
    return float(p_now_pair(probs)[speaker])


def vap_entropy(probs: VapDistribution) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    nonzero = probs[probs > 0]
    return float(-np.sum(nonzero * np.log(nonzero)))
