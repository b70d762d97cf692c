"""Real-time inference: 5 s ring buffers, one prediction per 100 ms of audio."""
import logging
import time
from collections import deque
from typing import Iterable, Iterator

import numpy as np
import torch

from app.audio import SAMPLE_RATE, ChannelMismatchError, Waveform
from app.codebook import p_now_pair, vap_entropy
from app.features import HOP_SAMPLES, extract_features, silent_features
from app.model import VapModel
from app.schemas import FrameResult


logger = logging.getLogger(__name__)

CONTEXT_SECONDS = 5.0
CONTEXT_SAMPLES = int(CONTEXT_SECONDS * SAMPLE_RATE)
TICK_SECONDS = HOP_SAMPLES / SAMPLE_RATE


class ModelNotAttachedError(RuntimeError):
    pass


class RingBuffer:
    """Fixed-capacity circular sample buffer; ``snapshot`` is oldest-first."""

    def __init__(self, capacity: int = CONTEXT_SAMPLES):
        self.capacity = capacity
        self.data = np.zeros(capacity)
        self.write_index = 0

    def write(self, chunk: np.ndarray) -> None:
        chunk = chunk[-self.capacity:]
        end = self.write_index + chunk.size
        if end <= self.capacity:
            self.data[self.write_index:end] = chunk
        else:
            split = self.capacity - self.write_index
            self.data[self.write_index:] = chunk[:split]
            self.data[: chunk.size - split] = chunk[split:]
        self.write_index = end % self.capacity

    def snapshot(self) -> np.ndarray:
        return np.concatenate((self.data[self.write_index:], self.data[: self.write_index]))

    def clear(self) -> None:
        self.data[:] = 0.0
        self.write_index = 0


def predict_window(model: VapModel, window_a: np.ndarray, window_b: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """VAP distribution and VAD pair of the last frame of a 5 s window."""
    features_a = extract_features(Waveform(window_a), model.cfg.feature_bands)
    if window_b is None:
        features_b = silent_features(features_a.shape[0], model.cfg.feature_bands)
    else:
        features_b = extract_features(Waveform(window_b), model.cfg.feature_bands)
    with torch.no_grad():
        out = model(
            torch.tensor(features_a[None], dtype=torch.float32),
            torch.tensor(features_b[None], dtype=torch.float32),
        )
    return out.vap[0, -1].double().numpy(), out.vad[0, -1].double().numpy()


def frame_result(
        frame_index: int,
        vap: np.ndarray,
        vad: np.ndarray,
        compute_ms: float = 0.0,
) -> FrameResult:
    p_user, p_robot = p_now_pair(vap)
    return FrameResult(
        frame_index=frame_index,
        timestamp_s=round(frame_index * TICK_SECONDS, 6),
        p_now_user=float(p_user),
        p_now_robot=float(p_robot),
        vad=(float(vad[0]), float(vad[1])),
        vap_entropy=vap_entropy(vap),
        compute_ms=compute_ms,
    )


class StreamContext:
    """One dialogue's inference state: single writer, single ticker.

    Pushed audio is cut into 100 ms hops; a hop enters the ring buffers when
    its tick runs, so the queue holds only audio that has not been predicted yet.
    """

    def __init__(self, model: VapModel | None = None):
        self.model = model
        self.ring_a = RingBuffer()
        self.ring_b = RingBuffer()
        self.clock = 0
        self._partial_a: list[np.ndarray] = []
        self._partial_b: list[np.ndarray] = []
        self._since_tick = 0
        self._robot_seen = False
        self._pending: deque[tuple[np.ndarray, np.ndarray, bool]] = deque()
        if model is not None:
            model.eval()

    def attach(self, model: VapModel) -> None:
        model.eval()
        self.model = model

    @property
    def pending_ticks(self) -> int:
        return len(self._pending)

    @property
    def held_samples(self) -> int:
        """Samples held per channel: the ring plus queued and partial hops."""
        return self.ring_a.capacity + len(self._pending) * HOP_SAMPLES + self._since_tick

    def push_audio(self, chunk_a: np.ndarray, chunk_b: np.ndarray | None = None) -> None:
        chunk_a = np.array(chunk_a, dtype=np.float64).reshape(-1)
        if chunk_b is None:
            chunk_b = np.zeros_like(chunk_a)
        else:
            chunk_b = np.array(chunk_b, dtype=np.float64).reshape(-1)
            if chunk_b.size != chunk_a.size:
                raise ChannelMismatchError(f"Chunk lengths differ: {chunk_a.size} vs {chunk_b.size}")

        position = 0
        while position < chunk_a.size:
            take = min(HOP_SAMPLES - self._since_tick, chunk_a.size - position)
            piece_b = chunk_b[position:position + take]
            self._partial_a.append(chunk_a[position:position + take])
            self._partial_b.append(piece_b)
            self._robot_seen = self._robot_seen or bool(np.any(piece_b))
            position += take
            self._since_tick += take
            if self._since_tick == HOP_SAMPLES:
                self._pending.append(
                    (np.concatenate(self._partial_a), np.concatenate(self._partial_b), self._robot_seen)
                )
                self._partial_a, self._partial_b = [], []
                self._since_tick = 0

    def tick(self) -> FrameResult | None:
        """Next due prediction, or None when less than 100 ms of new audio arrived."""
        if self.model is None:
            raise ModelNotAttachedError("tick() called before a model was attached")
        if not self._pending:
            return None
        hop_a, hop_b, robot_seen = self._pending.popleft()
        self.ring_a.write(hop_a)
        self.ring_b.write(hop_b)
        window_b = self.ring_b.snapshot() if robot_seen else None
        started = time.perf_counter()
        vap, vad = predict_window(self.model, self.ring_a.snapshot(), window_b)
        compute_ms = (time.perf_counter() - started) * 1000.0
        self.clock += 1
        return frame_result(self.clock, vap, vad, compute_ms)

    def reset(self) -> None:
        self.ring_a.clear()
        self.ring_b.clear()
        self.clock = 0
        self._partial_a, self._partial_b = [], []
        self._since_tick = 0
        self._robot_seen = False
        self._pending.clear()


def chunk_sizes(n_samples: int, chunk_samples: int, rng: np.random.Generator | None = None) -> Iterable[int]:
    position = 0
    while position < n_samples:
        size = int(rng.integers(1, 2 * chunk_samples)) if rng is not None else chunk_samples
        size = min(size, n_samples - position)
        yield size
        position += size


def iter_stream(
        ctx: StreamContext,
        user: Waveform,
        robot: Waveform | None = None,
        *,
        chunk_samples: int = 320,
        rng: np.random.Generator | None = None,
        realtime: bool = False,
) -> Iterator[FrameResult]:
    """Replay a recording through ``ctx`` as if it were live audio, yielding each tick as it happens."""
    if robot is not None and len(robot) != len(user):
        raise ChannelMismatchError(f"Channel lengths differ: {len(user)} vs {len(robot)} samples")
    started = time.perf_counter()
    position = 0
    for size in chunk_sizes(len(user), chunk_samples, rng):
        chunk_b = None if robot is None else robot.samples[position:position + size]
        ctx.push_audio(user.samples[position:position + size], chunk_b)
        position += size
        while (result := ctx.tick()) is not None:
            yield result
        if realtime:
            lag = position / SAMPLE_RATE - (time.perf_counter() - started)
            if lag > 0:
                time.sleep(lag)


def stream_waveform(
        ctx: StreamContext,
        user: Waveform,
        robot: Waveform | None = None,
        *,
        chunk_samples: int = 320,
        rng: np.random.Generator | None = None,
        realtime: bool = False,
) -> list[FrameResult]:
    return list(iter_stream(ctx, user, robot, chunk_samples=chunk_samples, rng=rng, realtime=realtime))


def context_window(samples: np.ndarray, end: int) -> np.ndarray:
    """The 5 s ending at sample ``end``, left-padded with zeros."""
    window = samples[max(0, end - CONTEXT_SAMPLES):end]
    return np.concatenate((np.zeros(CONTEXT_SAMPLES - window.size), window))


def offline_prediction(
        model: VapModel,
        user: Waveform,
        robot: Waveform | None,
        frame_index: int,
) -> FrameResult:
    """Recompute tick ``frame_index`` from scratch over the same 5 s of audio."""
    end = frame_index * HOP_SAMPLES
    window_b = None if robot is None else context_window(robot.samples, end)
    vap, vad = predict_window(model, context_window(user.samples, end), window_b)
    return frame_result(frame_index, vap, vad)


def real_time_factor(results: Iterable[FrameResult]) -> float:
    timings = [result.compute_ms for result in results]
    if not timings:
        return 0.0
    return float(np.mean(timings)) / (TICK_SECONDS * 1000.0)
