import time

import numpy as np
import pytest
import torch

from app.audio import ChannelMismatchError, Waveform
from app.features import HOP_SAMPLES
from app.model import VapModel
from app.schemas import FrameResult
from app.streaming import (
    CONTEXT_SAMPLES,
    ModelNotAttachedError,
    RingBuffer,
    StreamContext,
    chunk_sizes,
    context_window,
    iter_stream,
    offline_prediction,
    real_time_factor,
    stream_waveform,
)


def _speechlike(rng, seconds: float) -> Waveform:
    n = int(seconds * 16000)
    envelope = (np.sin(np.linspace(0, 12 * np.pi, n)) > 0).astype(float)
    return Waveform(rng.uniform(-0.2, 0.2, n) * envelope)


# ------------------ RING BUFFER ------------------ #

def test_ring_buffer_keeps_latest_samples():
    ring = RingBuffer(capacity=5)
    ring.write(np.array([1.0, 2.0, 3.0]))
    assert ring.snapshot().tolist() == [0.0, 0.0, 1.0, 2.0, 3.0]

    ring.write(np.array([4.0, 5.0, 6.0]))
    assert ring.snapshot().tolist() == [2.0, 3.0, 4.0, 5.0, 6.0]

    ring.write(np.arange(10.0, 18.0))
    assert ring.snapshot().tolist() == [13.0, 14.0, 15.0, 16.0, 17.0]

    ring.clear()
    assert not ring.snapshot().any()


def test_context_window_left_pads():
    samples = np.arange(1.0, 11.0)
    window = context_window(samples, 4)
    assert window.size == CONTEXT_SAMPLES
    assert window[-4:].tolist() == [1.0, 2.0, 3.0, 4.0]
    assert not window[:-4].any()


# ------------------ CONTEXT ------------------ #

def test_one_tick_per_hop(tiny_model):
    ctx = StreamContext(tiny_model)
    ctx.push_audio(np.zeros(1599))
    assert ctx.pending_ticks == 0
    assert ctx.tick() is None

    ctx.push_audio(np.zeros(1))
    assert ctx.pending_ticks == 1

    result = ctx.tick()
    assert result.frame_index == 1
    assert result.timestamp_s == pytest.approx(0.1)
    assert result.p_now_user + result.p_now_robot == pytest.approx(1.0)


def test_buffer_holds_last_five_seconds(tiny_model, rng):
    ctx = StreamContext(tiny_model)
    audio = rng.uniform(-0.1, 0.1, CONTEXT_SAMPLES + 4800)
    ctx.push_audio(audio)
    while ctx.tick() is not None:
        pass
    assert np.array_equal(ctx.ring_a.snapshot(), audio[-CONTEXT_SAMPLES:])


def test_backlog_holds_only_unticked_audio():
    ctx = StreamContext()
    ctx.push_audio(np.zeros(60 * 16000 + 700))

    assert ctx.pending_ticks == 600
    assert ctx.held_samples == CONTEXT_SAMPLES + 600 * HOP_SAMPLES + 700
    queued_bytes = sum(hop_a.nbytes + hop_b.nbytes for hop_a, hop_b, _ in ctx._pending)
    assert queued_bytes == 2 * 600 * HOP_SAMPLES * 8


def test_backlog_drains_to_the_ring(tiny_model):
    ctx = StreamContext(tiny_model)
    ctx.push_audio(np.ones(3 * HOP_SAMPLES + 10))
    while ctx.tick() is not None:
        pass

    assert ctx.pending_ticks == 0
    assert ctx.held_samples == CONTEXT_SAMPLES + 10
    assert ctx.ring_a.snapshot()[-3 * HOP_SAMPLES:].tolist() == [1.0] * (3 * HOP_SAMPLES)


def test_tick_without_model():
    ctx = StreamContext()
    ctx.push_audio(np.zeros(1600))
    with pytest.raises(ModelNotAttachedError):
        ctx.tick()


def test_attach_later(tiny_model):
    ctx = StreamContext()
    ctx.push_audio(np.zeros(1600))
    ctx.attach(tiny_model)
    assert ctx.tick().frame_index == 1


def test_mismatched_chunks(tiny_model):
    with pytest.raises(ChannelMismatchError):
        StreamContext(tiny_model).push_audio(np.zeros(100), np.zeros(90))


def test_ten_seconds_give_hundred_results(tiny_model, rng):
    audio = _speechlike(rng, 10.0)
    results = stream_waveform(StreamContext(tiny_model), audio, rng=np.random.default_rng(5))

    assert len(results) == 100
    assert [r.frame_index for r in results] == list(range(1, 101))
    assert results[-1].timestamp_s == pytest.approx(10.0)


def test_realtime_replay_yields_ticks_as_they_happen(tiny_model, rng):
    started = time.perf_counter()
    ticks = iter_stream(StreamContext(tiny_model), _speechlike(rng, 2.0), chunk_samples=1600, realtime=True)

    first = next(ticks)
    first_at = time.perf_counter() - started
    rest = list(ticks)

    assert first.frame_index == 1
    assert first_at < 1.0
    assert len(rest) == 19


def test_chunking_invariance(tiny_model, rng):
    audio = _speechlike(rng, 3.0)

    fixed = stream_waveform(StreamContext(tiny_model), audio, chunk_samples=1600)
    random_a = stream_waveform(StreamContext(tiny_model), audio, rng=np.random.default_rng(1))
    random_b = stream_waveform(StreamContext(tiny_model), audio, chunk_samples=5000, rng=np.random.default_rng(2))

    expected = [r.p_now_robot for r in fixed]
    assert [r.p_now_robot for r in random_a] == expected
    assert [r.p_now_robot for r in random_b] == expected


def test_streaming_matches_offline(tiny_model, dialogue):
    user = dialogue.channel_a.slice(0, 8 * 16000)

    results = stream_waveform(StreamContext(tiny_model), user, rng=np.random.default_rng(3))

    for frame_index in (1, 7, 50, 51, 80):
        offline = offline_prediction(tiny_model, user, None, frame_index)
        assert abs(results[frame_index - 1].p_now_robot - offline.p_now_robot) <= 1e-5


def test_reset_behaves_like_fresh_context(tiny_model, rng):
    first, second = _speechlike(rng, 1.0), _speechlike(rng, 1.0)

    ctx = StreamContext(tiny_model)
    stream_waveform(ctx, first)
    ctx.reset()
    ctx.reset()
    after_reset = stream_waveform(ctx, second)
    fresh = stream_waveform(StreamContext(tiny_model), second)

    assert [r.p_now_robot for r in after_reset] == [r.p_now_robot for r in fresh]
    assert after_reset[0].frame_index == 1


def test_stereo_stream_uses_robot_channel(tiny_model, rng):
    user, robot = _speechlike(rng, 1.0), _speechlike(rng, 1.0)

    mono = stream_waveform(StreamContext(tiny_model), user)
    stereo = stream_waveform(StreamContext(tiny_model), user, robot)

    assert len(stereo) == len(mono) == 10
    assert [r.p_now_robot for r in stereo] != [r.p_now_robot for r in mono]


# ------------------ HELPERS ------------------ #

def test_chunk_sizes_cover_input():
    assert list(chunk_sizes(1000, 320)) == [320, 320, 320, 40]
    sizes = list(chunk_sizes(10000, 320, np.random.default_rng(0)))
    assert sum(sizes) == 10000
    assert all(1 <= size < 640 for size in sizes)


def test_real_time_factor():
    results = [
        FrameResult(frame_index=i, timestamp_s=i / 10, p_now_user=0.5, p_now_robot=0.5,
                    vad=(0.0, 0.0), vap_entropy=0.0, compute_ms=ms)
        for i, ms in ((1, 10.0), (2, 30.0))
    ]
    assert real_time_factor(results) == pytest.approx(0.2)
    assert real_time_factor([]) == 0.0


def test_default_model_keeps_up_with_real_time(rng):
    torch.manual_seed(0)
    results = stream_waveform(StreamContext(VapModel()), _speechlike(rng, 3.0))
    assert real_time_factor(results) < 1.0
