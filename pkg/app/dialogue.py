"""Synthetic two-party dialogues with exact voice-activity labels.

Speech is rendered as spectrally tilted, syllable-modulated noise bursts: the
user is low-frequency heavy, the robot flatter and brighter. Turn-final
segments fade over their last 300 ms; segments that precede an intra-turn
pause stop abruptly, so end-of-turn is learnable from audio alone.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from app.audio import (
    LABEL_FRAME_RATE,
    SAMPLE_RATE,
    StereoDialogue,
    TurnSpan,
    VadTrack,
    Waveform,
    label_frames_for,
)
from app.endpointing import sample_delay
from app.noise import NoiseBank, apply_condition
from app.schemas import Condition, DelayDistribution, DialogueScript


logger = logging.getLogger(__name__)

GRID_S = 0.1
LEAD_SILENCE_S = 0.5
TAIL_SILENCE_S = 2.5
MIN_SEGMENT_S = 0.3
MAX_PAUSE_S = 0.7
SPEECH_RMS = 0.08
FINAL_FADE_S = 0.3
FINAL_FADE_FLOOR = 0.5
USER, ROBOT = 0, 1


@dataclass(frozen=True)
class SpeakerVoice:
    tilt: float
    low_hz: float
    high_hz: float
    syllable_hz: float


VOICES = {
    USER: SpeakerVoice(tilt=1.5, low_hz=80.0, high_hz=3500.0, syllable_hz=4.0),
    ROBOT: SpeakerVoice(tilt=0.3, low_hz=300.0, high_hz=6500.0, syllable_hz=5.5),
}


@dataclass(frozen=True)
class Segment:
    speaker: int
    start_s: float
    end_s: float
    final: bool


def on_grid(seconds: float, minimum: float = GRID_S) -> float:
    return max(minimum, round(seconds / GRID_S) * GRID_S)


def _draw(dist: DelayDistribution, rng: np.random.Generator, minimum: float = GRID_S) -> float:
    return on_grid(sample_delay(dist, rng), minimum)


def _user_turn(script: DialogueScript, rng: np.random.Generator, start: float) -> list[Segment]:
    n_segments = int(rng.integers(script.segments_per_turn[0], script.segments_per_turn[1] + 1))
    total = on_grid(rng.uniform(*script.user_utterance_s), MIN_SEGMENT_S * n_segments)
    cuts = np.sort(rng.uniform(0.0, 1.0, n_segments - 1))
    shares = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    lengths = [on_grid(MIN_SEGMENT_S + share * (total - MIN_SEGMENT_S * n_segments), MIN_SEGMENT_S) for share in shares]

    segments, t = [], start
    for i, length in enumerate(lengths):
        final = i == n_segments - 1
        segments.append(Segment(USER, round(t, 6), round(t + length, 6), final))
        t += length
        if not final:
            t += min(_draw(script.pause_before_end_s, rng), MAX_PAUSE_S)
    return segments


def plan_segments(script: DialogueScript) -> tuple[list[Segment], float]:
    """Alternating user/robot segments on the 100 ms grid, and total duration."""
    rng = np.random.default_rng(script.seed)
    segments: list[Segment] = []
    t = LEAD_SILENCE_S
    for _ in range(script.n_turns):
        user = _user_turn(script, rng, t)
        segments.extend(user)
        robot_start = user[-1].end_s + _draw(script.robot_gap_s, rng)
        robot_end = robot_start + on_grid(rng.uniform(*script.robot_utterance_s))
        segments.append(Segment(ROBOT, round(robot_start, 6), round(robot_end, 6), True))
        t = robot_end + _draw(script.user_reaction_s, rng)
    if not segments:
        return [], 0.0
    return segments, round(segments[-1].end_s + TAIL_SILENCE_S, 6)


def _voiced_noise(voice: SpeakerVoice, n: int, rng: np.random.Generator) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    band = (freqs >= voice.low_hz) & (freqs <= voice.high_hz)
    spectrum *= band * np.maximum(freqs, voice.low_hz) ** (-voice.tilt / 2.0)
    return np.fft.irfft(spectrum, n)


def render_segment(segment: Segment, rng: np.random.Generator) -> np.ndarray:
    voice = VOICES[segment.speaker]
    n = int(round((segment.end_s - segment.start_s) * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    phase = rng.uniform(0.0, 2.0 * np.pi)
    envelope = 0.5 + 0.5 * np.sin(np.pi * voice.syllable_hz * t + phase) ** 2
    if segment.final:
        fade = int(FINAL_FADE_S * SAMPLE_RATE)
        envelope[-fade:] *= np.linspace(1.0, FINAL_FADE_FLOOR, min(fade, n))
    burst = _voiced_noise(voice, n, rng)
    burst *= SPEECH_RMS / math.sqrt(np.mean(np.square(burst)))
    return burst * envelope


def _turn_spans(segments: list[Segment]) -> tuple[TurnSpan, ...]:
    spans: list[TurnSpan] = []
    for segment in segments:
        if spans and spans[-1].speaker == segment.speaker:
            spans[-1] = TurnSpan(segment.speaker, spans[-1].start_s, segment.end_s)
        else:
            spans.append(TurnSpan(segment.speaker, segment.start_s, segment.end_s))
    return tuple(spans)


def generate_dialogue(
        script: DialogueScript,
        *,
        bank: NoiseBank | None = None,
        condition: Condition | None = None,
) -> StereoDialogue:
    segments, duration = plan_segments(script)
    n_samples = int(round(duration * SAMPLE_RATE))
    n_labels = label_frames_for(n_samples)
    channels = [np.zeros(n_samples), np.zeros(n_samples)]
    labels = [np.zeros(n_labels, dtype=bool), np.zeros(n_labels, dtype=bool)]
    render_rng = np.random.default_rng([script.seed, 1])

    for segment in segments:
        start = int(round(segment.start_s * SAMPLE_RATE))
        burst = render_segment(segment, render_rng)
        channels[segment.speaker][start:start + burst.size] += burst
        labels[segment.speaker][
            int(round(segment.start_s * LABEL_FRAME_RATE)):int(round(segment.end_s * LABEL_FRAME_RATE))
        ] = True

    dialogue = StereoDialogue(
        channel_a=Waveform.clipped(channels[USER])[0],
        channel_b=Waveform.clipped(channels[ROBOT])[0],
        vad_a=VadTrack(labels[USER]),
        vad_b=VadTrack(labels[ROBOT]),
        turns=_turn_spans(segments),
    )
    if condition is not None and not condition.is_clean:
        dialogue = apply_condition(dialogue, bank, condition, np.random.default_rng([script.seed, 2])).dialogue
    return dialogue


def generate_corpus(script: DialogueScript, n_dialogues: int) -> list[StereoDialogue]:
    """``n_dialogues`` scripts that differ only in seed (``script.seed + i``)."""
    return [generate_dialogue(script.model_copy(update={"seed": script.seed + i})) for i in range(n_dialogues)]
