import math

import numpy as np
import pytest
import torch

from app.audio import ChannelMismatchError
from app.codebook import N_STATES, NO_TARGET
from app.model import (
    CheckpointFormatError,
    FrameBatch,
    NoTargetsError,
    PredictionOutput,
    VapModel,
    build_frame_batch,
    hop_activity,
    load_checkpoint,
    loss,
    save_checkpoint,
)
from app.schemas import ModelConfig


def _random_features(n_windows: int = 2, n_frames: int = 50, seed: int = 0) -> torch.Tensor:
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(n_windows, n_frames, 40, generator=generator) * 3.0 - 10.0


# ------------------ BATCHES ------------------ #

def test_hop_activity_majority():
    vad = np.zeros(30, dtype=bool)
    vad[:10] = True
    vad[10:15] = True
    vad[20:24] = True

    assert hop_activity(vad, 3).tolist() == [True, True, False]
    assert hop_activity(vad, 4).tolist() == [True, True, False, False]


def test_build_frame_batch_shapes(dialogue, tiny_cfg):
    batch = build_frame_batch(dialogue, tiny_cfg)
    n_frames = int(dialogue.duration_s * 10 + 1e-9)
    n_windows = math.ceil(n_frames / 50)

    assert batch.features_a.shape == (n_windows, 50, 40)
    assert batch.target_state.shape == (n_windows, 50)
    assert batch.target_vad.shape == (n_windows, 50, 2)
    # the last 2 s of a dialogue never have a full horizon
    assert bool(batch.mask.any())
    assert batch.target_state.view(-1)[n_frames - 20:].eq(NO_TARGET).all()


def test_zero_robot_batch_is_silent(dialogue, tiny_cfg):
    batch = build_frame_batch(dialogue, tiny_cfg, zero_robot=True)
    assert torch.all(batch.features_b == batch.features_b.flatten()[0])


def test_frame_batch_channel_mismatch():
    with pytest.raises(ChannelMismatchError):
        FrameBatch(
            torch.zeros(1, 50, 40), torch.zeros(1, 49, 40),
            torch.zeros(1, 50, dtype=torch.long), torch.zeros(1, 50, 2),
        )


# ------------------ FORWARD ------------------ #

def test_forward_shapes_and_normalization(tiny_model):
    features = _random_features()
    with torch.no_grad():
        out = tiny_model(features, _random_features(seed=1))

    assert out.vap.shape == (2, 50, N_STATES)
    assert out.vad.shape == (2, 50, 2)
    assert torch.allclose(out.vap.sum(dim=-1), torch.ones(2, 50), atol=1e-6)
    assert bool(((out.vad > 0) & (out.vad < 1)).all())


def test_forward_rejects_bad_inputs(tiny_model):
    with pytest.raises(ChannelMismatchError):
        tiny_model(_random_features(), _random_features(n_frames=40))
    with pytest.raises(ValueError):
        tiny_model(_random_features(n_frames=51), _random_features(n_frames=51))


def test_zero_heads_give_uniform_output(tiny_model):
    tiny_model.zero_heads()
    with torch.no_grad():
        out = tiny_model(_random_features(), _random_features(seed=1))

    assert torch.allclose(out.vap, torch.full_like(out.vap, 1.0 / N_STATES))
    assert torch.allclose(out.vad, torch.full_like(out.vad, 0.5))


@pytest.mark.parametrize("t", [1, 17, 49])
def test_outputs_are_causal(tiny_model, t):
    features_a, features_b = _random_features(), _random_features(seed=1)
    changed_a, changed_b = features_a.clone(), features_b.clone()
    changed_a[:, t:] += 5.0
    changed_b[:, t:] -= 5.0

    with torch.no_grad():
        base = tiny_model(features_a, features_b)
        moved = tiny_model(changed_a, changed_b)

    assert torch.allclose(base.vap[:, :t], moved.vap[:, :t], atol=1e-6, rtol=0)
    assert torch.allclose(base.vad[:, :t], moved.vad[:, :t], atol=1e-6, rtol=0)
    assert not torch.allclose(base.vap[:, t:], moved.vap[:, t:])


def test_tied_channels_swap_vad(tiny_cfg):
    torch.manual_seed(5)
    model = VapModel(tiny_cfg.model_copy(update={"tie_channels": True})).eval()
    features_a, features_b = _random_features(), _random_features(seed=1)

    with torch.no_grad():
        forward = model(features_a, features_b)
        swapped = model(features_b, features_a)

    assert torch.allclose(forward.vad, swapped.vad.flip(-1), atol=1e-6)


# ------------------ LOSS ------------------ #

def test_uniform_output_loss_is_analytic(tiny_model, dialogue, tiny_cfg):
    batch = build_frame_batch(dialogue, tiny_cfg)
    tiny_model.zero_heads()

    with torch.no_grad():
        breakdown = loss(tiny_model.predict(batch), batch)

    assert float(breakdown.vap) == pytest.approx(math.log(N_STATES), abs=1e-5)
    assert float(breakdown.vad) == pytest.approx(math.log(2.0), abs=1e-5)
    assert float(breakdown.total) == pytest.approx(6.238, abs=1e-3)


def test_fresh_model_loss_near_uniform(tiny_model, dialogue, tiny_cfg):
    batch = build_frame_batch(dialogue, tiny_cfg)
    with torch.no_grad():
        l_vap = float(loss(tiny_model.predict(batch), batch).vap)
    assert abs(l_vap - math.log(N_STATES)) < 0.5


def test_perfect_output_loss_is_zero(dialogue, tiny_cfg):
    batch = build_frame_batch(dialogue, tiny_cfg)
    states = batch.target_state.clamp_min(0)
    vap = torch.nn.functional.one_hot(states, N_STATES).float()

    breakdown = loss(PredictionOutput(vap=vap, vad=batch.target_vad), batch)

    assert float(breakdown.total) == pytest.approx(0.0, abs=1e-6)


def test_loss_without_targets():
    batch = FrameBatch(
        torch.zeros(1, 50, 40), torch.zeros(1, 50, 40),
        torch.full((1, 50), NO_TARGET, dtype=torch.long), torch.zeros(1, 50, 2),
    )
    out = PredictionOutput(vap=torch.full((1, 50, N_STATES), 1.0 / N_STATES), vad=torch.full((1, 50, 2), 0.5))
    with pytest.raises(NoTargetsError):
        loss(out, batch)


# ------------------ CHECKPOINTS ------------------ #

def test_checkpoint_round_trip(tmp_path, tiny_model):
    path = tmp_path / "checkpoint.pt"
    save_checkpoint(tiny_model, path, extra={"epochs": 0})

    loaded = load_checkpoint(path)
    features_a, features_b = _random_features(), _random_features(seed=1)
    with torch.no_grad():
        expected = tiny_model(features_a, features_b).vap
        actual = loaded(features_a, features_b).vap

    assert loaded.cfg == tiny_model.cfg
    assert torch.equal(expected, actual)


def test_checkpoint_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")

    stale = tmp_path / "stale.pt"
    torch.save({"format_version": 99}, str(stale))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(stale)


def test_model_config_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ModelConfig(model_dim=15, heads=2)
    with pytest.raises(ValueError):
        ModelConfig(context_frames=40)
