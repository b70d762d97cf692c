import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.codebook import (
    N_STATES,
    NO_TARGET,
    HorizonTooShortError,
    ProjectionWindow,
    StateIndexError,
    decode_state,
    encode_state,
    p_now,
    p_now_pair,
    state_targets,
    swap_speakers,
    vap_entropy,
    window_from_labels,
)


# ------------------ ENCODE / DECODE ------------------ #

def test_codebook_is_a_bijection():
    for idx in range(N_STATES):
        assert encode_state(decode_state(idx)) == idx

    for bits in itertools.product((False, True), repeat=8):
        window = ProjectionWindow(np.array(bits).reshape(2, 4))
        assert decode_state(encode_state(window)) == window


def test_encoding_examples():
    zeros = np.zeros((2, 4), dtype=bool)
    user_now = zeros.copy()
    user_now[0, 0] = True
    robot_now = zeros.copy()
    robot_now[1, 0] = True

    assert encode_state(ProjectionWindow(zeros)) == 0
    assert encode_state(ProjectionWindow(~zeros)) == 255
    assert encode_state(ProjectionWindow(user_now)) == 1
    assert encode_state(ProjectionWindow(robot_now)) == 16
    assert not decode_state(0).bits.any()
    assert decode_state(255).bits.all()


@pytest.mark.parametrize("idx", [-1, 256, 1000])
def test_decode_out_of_range(idx):
    with pytest.raises(StateIndexError):
        decode_state(idx)


@given(st.integers(0, N_STATES - 1))
def test_swap_speakers_swaps_rows(idx):
    swapped = decode_state(swap_speakers(idx)).bits
    assert np.array_equal(swapped, decode_state(idx).bits[::-1])
    assert swap_speakers(swap_speakers(idx)) == idx


# ------------------ LABELS ------------------ #

def test_window_from_labels_examples():
    silent = np.zeros(200, dtype=bool)
    user = np.ones(200, dtype=bool)

    assert encode_state(window_from_labels(silent, silent)) == 0
    assert encode_state(window_from_labels(user, silent)) == 15


def test_activity_ratio_boundary():
    half = np.zeros(200, dtype=bool)
    half[:10] = True
    short = np.zeros(200, dtype=bool)
    short[:9] = True
    silent = np.zeros(200, dtype=bool)

    assert window_from_labels(half, silent).bits[0, 0]
    assert not window_from_labels(short, silent).bits[0, 0]


@settings(max_examples=50, deadline=None)
@given(
    vad_a=arrays(bool, 200), vad_b=arrays(bool, 200),
    extra_a=arrays(bool, 200), extra_b=arrays(bool, 200),
)
def test_more_activity_never_clears_a_bin(vad_a, vad_b, extra_a, extra_b):
    before = window_from_labels(vad_a, vad_b).bits
    after = window_from_labels(vad_a | extra_a, vad_b | extra_b).bits
    assert np.all(after[before])


def test_window_needs_full_horizon():
    with pytest.raises(HorizonTooShortError):
        window_from_labels(np.zeros(150, dtype=bool), np.zeros(200, dtype=bool))


def test_state_targets_match_window_from_labels(rng):
    vad_a = rng.random(600) < 0.4
    vad_b = rng.random(600) < 0.4
    starts = np.arange(0, 600, 10)

    targets = state_targets(vad_a, vad_b, starts)

    for start, target in zip(starts, targets):
        if start + 200 <= 600:
            assert target == encode_state(window_from_labels(vad_a[start:], vad_b[start:]))
        else:
            assert target == NO_TARGET


# ------------------ P_NOW ------------------ #

def _brute_force_p_now(probs: np.ndarray) -> np.ndarray:
    activity = np.zeros(2)
    for idx in range(N_STATES):
        bits = decode_state(idx).bits
        for speaker in (0, 1):
            activity[speaker] += probs[idx] * (bits[speaker, 0] + bits[speaker, 1]) / 2.0
    return activity / activity.sum()


def test_p_now_uniform_is_half():
    uniform = np.full(N_STATES, 1.0 / N_STATES)
    assert p_now(uniform, 0) == pytest.approx(0.5)
    assert p_now(uniform, 1) == pytest.approx(0.5)


def test_p_now_one_hot_user():
    bits = np.zeros((2, 4), dtype=bool)
    bits[0, :2] = True
    probs = np.zeros(N_STATES)
    probs[encode_state(ProjectionWindow(bits))] = 1.0

    assert p_now(probs, 0) == 1.0
    assert p_now(probs, 1) == 0.0


def test_p_now_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        probs = rng.dirichlet(np.full(N_STATES, 0.3))
        pair = p_now_pair(probs)
        assert np.allclose(pair, _brute_force_p_now(probs), atol=1e-9)
        assert pair.sum() == pytest.approx(1.0, abs=1e-6)


def test_p_now_on_silent_mass_is_half():
    probs = np.zeros(N_STATES)
    probs[0] = 1.0
    assert p_now_pair(probs).tolist() == [0.5, 0.5]


def test_vap_entropy_bounds():
    assert vap_entropy(np.full(N_STATES, 1.0 / N_STATES)) == pytest.approx(np.log(N_STATES))
    one_hot = np.zeros(N_STATES)
    one_hot[3] = 1.0
    assert vap_entropy(one_hot) == 0.0


def test_p_now_follows_speaker_swap():
    rng = np.random.default_rng(1)
    swapped_index = swap_speakers(np.arange(N_STATES))
    for _ in range(100):
        probs = rng.dirichlet(np.full(N_STATES, 0.3))
        swapped = np.zeros(N_STATES)
        swapped[swapped_index] = probs
        assert p_now(swapped, 0) == pytest.approx(p_now(probs, 1), abs=1e-12)
        assert p_now(swapped, 1) == pytest.approx(p_now(probs, 0), abs=1e-12)
