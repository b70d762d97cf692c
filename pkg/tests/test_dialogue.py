import numpy as np
import pytest

from app.audio import vad_from_energy
from app.dialogue import (
    GRID_S,
    ROBOT,
    USER,
    generate_corpus,
    generate_dialogue,
    plan_segments,
)
from app.schemas import Condition, DialogueScript


def _on_grid(seconds: float) -> bool:
    return abs(seconds / GRID_S - round(seconds / GRID_S)) < 1e-6


def test_zero_turns_is_empty():
    assert plan_segments(DialogueScript(n_turns=0)) == ([], 0.0)


def test_generation_is_deterministic(short_script):
    a, b = generate_dialogue(short_script), generate_dialogue(short_script)

    assert np.array_equal(a.channel_a.samples, b.channel_a.samples)
    assert np.array_equal(a.vad_b.frames, b.vad_b.frames)
    assert a.turns == b.turns


def test_seeds_differ(short_script):
    other = generate_dialogue(short_script.model_copy(update={"seed": 8}))
    assert other.turns != generate_dialogue(short_script).turns


def test_turns_alternate_and_sit_on_grid(dialogue, short_script):
    speakers = [turn.speaker for turn in dialogue.turns]

    assert speakers == [USER, ROBOT] * short_script.n_turns
    for turn in dialogue.turns:
        assert _on_grid(turn.start_s) and _on_grid(turn.end_s)
        assert turn.end_s > turn.start_s
    for earlier, later in zip(dialogue.turns, dialogue.turns[1:]):
        assert later.start_s > earlier.end_s


def test_labels_match_turns(dialogue):
    for turn in dialogue.turns_of(ROBOT):
        start, end = round(turn.start_s * 100), round(turn.end_s * 100)
        assert dialogue.vad_b.frames[start:end].all()
        assert not dialogue.vad_a.frames[start:end].any()


def test_energy_vad_agrees_with_labels(dialogue):
    for channel, labels in ((dialogue.channel_a, dialogue.vad_a), (dialogue.channel_b, dialogue.vad_b)):
        detected = vad_from_energy(channel, hangover_ms=0)
        assert np.mean(detected.frames == labels.frames) >= 0.99


def test_channels_are_quiet_outside_speech(dialogue):
    silent = ~dialogue.vad_a.frames
    per_frame = dialogue.channel_a.samples[: silent.size * 160].reshape(-1, 160)
    assert not per_frame[silent].any()


def test_noise_condition_reaches_user_channel_only(short_script, noise_bank):
    clean = generate_dialogue(short_script)
    noisy = generate_dialogue(short_script, bank=noise_bank, condition=Condition(noise_name="babble", snr_db=5.0))

    assert np.array_equal(noisy.channel_b.samples, clean.channel_b.samples)
    assert np.array_equal(noisy.vad_a.frames, clean.vad_a.frames)
    assert not np.array_equal(noisy.channel_a.samples, clean.channel_a.samples)
    assert np.max(np.abs(noisy.channel_a.samples)) <= 1.0


def test_corpus_seeds_follow_index():
    script = DialogueScript(n_turns=1, seed=40)
    corpus = generate_corpus(script, 3)

    assert len(corpus) == 3
    assert corpus[2].turns == generate_dialogue(script.model_copy(update={"seed": 42})).turns


@pytest.mark.parametrize("bad", [(0.0, 1.0), (2.0, 1.0)])
def test_script_rejects_bad_ranges(bad):
    with pytest.raises(ValueError):
        DialogueScript(user_utterance_s=bad)
