import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from pydantic import BaseModel

from app.audio import StereoDialogue, VadTrack
from app.noise import CLEAN, ConditionRecord, NoiseBank, apply_condition, item_rng, sample_condition
from app.model import (
    DialogueFrames,
    FrameBatch,
    LossBreakdown,
    NoTargetsError,
    VapModel,
    batch_slice,
    dialogue_frames,
    loss,
    window_batch,
)
from app.schemas import BinConfig, Condition, ModelConfig, TrainConfig
from app.streaming import TICK_SECONDS, offline_prediction


logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_vap", "train_vad", "valid_loss", "valid_vap", "valid_vad")


class TrainingDivergedError(RuntimeError):
    def __init__(self, *, epoch: int, batch: int, value: float):
        super().__init__(f"Non-finite loss {value} at epoch {epoch}, batch {batch}; lower the learning rate")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_vap: float
    train_vad: float
    valid_loss: float
    valid_vap: float
    valid_vad: float


@dataclass
class FitResult:
    model: VapModel
    history: list[EpochRecord]
    best_epoch: int
    conditions: dict[int, list[ConditionRecord]] = field(default_factory=dict)


#------------------------ DATA

@dataclass
class TrainingData:
    """Dialogues with stable ids; ids seed the per-item augmentation."""
    dialogues: Sequence[StereoDialogue]
    ids: Sequence[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.dialogues))]
        if len(self.ids) != len(self.dialogues):
            raise ValueError("TrainingData ids and dialogues differ in length")

    def __len__(self) -> int:
        return len(self.dialogues)


def _augmented_frames(
        data: TrainingData,
        train_cfg: TrainConfig,
        bins: BinConfig,
        bank: NoiseBank | None,
        seed_for: Callable[[str], np.random.Generator],
        manifest: list[ConditionRecord] | None = None,
) -> list[DialogueFrames]:
    frames = []
    for item_id, dialogue in zip(data.ids, data.dialogues):
        rng = seed_for(item_id)
        condition = CLEAN
        if train_cfg.augmentation == "mc" and bank is not None:
            augmented = apply_condition(
                dialogue, bank, sample_condition(rng, bank, train_cfg.snr_set, clean_prob=train_cfg.clean_prob), rng
            )
            dialogue, condition = augmented.dialogue, augmented.condition
        if manifest is not None:
            manifest.append(ConditionRecord(
                item_id=item_id, noise_name=condition.noise_name, snr_db=condition.snr_db, seed=train_cfg.seed
            ))
        zero_robot = bool(rng.random() < train_cfg.zero_robot_prob)
        frames.append(dialogue_frames(dialogue, bins, zero_robot=zero_robot))
    return frames


def _with_targets(batch: FrameBatch) -> FrameBatch:
    keep = torch.nonzero(batch.mask.any(dim=1)).squeeze(1)
    if keep.numel() == 0:
        raise NoTargetsError("No window has a frame with a full 2 s horizon")
    return batch_slice(batch, keep)


@torch.no_grad()
def evaluate_batch(model: VapModel, batch: FrameBatch, batch_size: int = 64) -> tuple[float, float, float]:
    """Frame-weighted mean (L, L_vap, L_vad) over every targeted frame."""
    model.eval()
    totals = np.zeros(3)
    n_frames = 0
    for start in range(0, batch.features_a.shape[0], batch_size):
        part = batch_slice(batch, torch.arange(start, min(start + batch_size, batch.features_a.shape[0])))
        count = int(part.mask.sum())
        if count == 0:
            continue
        totals += np.array(loss(model.predict(part), part).as_floats()) * count
        n_frames += count
    if n_frames == 0:
        raise NoTargetsError("Nothing to evaluate")
    return tuple(totals / n_frames)


def evaluate_loss(
        model: VapModel,
        dialogues: Sequence[StereoDialogue],
        bins: BinConfig = BinConfig(),
        *,
        zero_robot: bool = False,
) -> tuple[float, float, float]:
    frames = [dialogue_frames(d, bins, zero_robot=zero_robot) for d in dialogues]
    return evaluate_batch(model, window_batch(frames, model.cfg.context_frames))


#------------------------ FIT

def fit(
        train: TrainingData,
        valid: TrainingData,
        model_cfg: ModelConfig = ModelConfig(),
        train_cfg: TrainConfig = TrainConfig(),
        *,
        bins: BinConfig = BinConfig(),
        bank: NoiseBank | None = None,
) -> FitResult:
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("fit needs non-empty train and valid sets")
    if train_cfg.augmentation == "mc" and bank is None:
        raise ValueError("Multi-condition training needs a noise bank")

    torch.manual_seed(model_cfg.seed)
    model = VapModel(model_cfg)
    optimizer = torch.optim.SGD(model.parameters(), lr=train_cfg.lr, momentum=train_cfg.momentum)
    scheduler = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=train_cfg.lr_decay)
    shuffler = torch.Generator().manual_seed(train_cfg.seed)
    context = model_cfg.context_frames

    valid_batch = _with_targets(window_batch(
        _augmented_frames(valid, train_cfg, bins, bank, lambda item_id: item_rng(train_cfg.seed, f"valid/{item_id}")),
        context,
    ))

    conditions: dict[int, list[ConditionRecord]] = {}

    def epoch_batch(epoch: int) -> FrameBatch:
        conditions[epoch] = []
        frames = _augmented_frames(
            train, train_cfg, bins, bank, lambda item_id: item_rng(train_cfg.seed, f"train/{epoch}/{item_id}"),
            conditions[epoch],
        )
        offset = int(torch.randint(context, (1,), generator=shuffler))
        return _with_targets(window_batch(frames, context, offset=offset))

    log_every = max(1, train_cfg.epochs // 10)
    initial = evaluate_batch(model, epoch_batch(1))
    history = [_record(0, initial, evaluate_batch(model, valid_batch))]
    logger.info("Epoch 0 (fresh): train L_vap=%.4f valid L_vap=%.4f", history[0].train_vap, history[0].valid_vap)
    best_state, best_epoch, best_valid = copy.deepcopy(model.state_dict()), 0, history[0].valid_loss

    for epoch in range(1, train_cfg.epochs + 1):
        batch = epoch_batch(epoch)
        model.train()
        order = torch.randperm(batch.features_a.shape[0], generator=shuffler)
        totals, n_frames = np.zeros(3), 0
        for step, start in enumerate(range(0, order.numel(), train_cfg.batch_size)):
            part = batch_slice(batch, order[start:start + train_cfg.batch_size])
            count = int(part.mask.sum())
            if count == 0:
                continue
            breakdown: LossBreakdown = loss(model.predict(part), part)
            value = float(breakdown.total)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch=epoch, batch=step, value=value)
            optimizer.zero_grad()
            breakdown.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()
            totals += np.array(breakdown.as_floats()) * count
            n_frames += count
        scheduler.step()

        record = _record(epoch, tuple(totals / max(n_frames, 1)), evaluate_batch(model, valid_batch))
        history.append(record)
        if record.valid_loss < best_valid:
            best_state, best_epoch, best_valid = copy.deepcopy(model.state_dict()), epoch, record.valid_loss
        if epoch % log_every == 0 or epoch == train_cfg.epochs:
            logger.info(
                "Epoch %d: train L=%.4f (vap %.4f) valid L=%.4f (vap %.4f)",
                epoch, record.train_loss, record.train_vap, record.valid_loss, record.valid_vap,
            )

    model.load_state_dict(best_state)
    model.eval()
    logger.info("Training finished: best valid L=%.4f at epoch %d", best_valid, best_epoch)
    return FitResult(model=model, history=history, best_epoch=best_epoch, conditions=conditions)


def _record(epoch: int, train: tuple, valid: tuple) -> EpochRecord:
    return EpochRecord(
        epoch=epoch,
        train_loss=train[0], train_vap=train[1], train_vad=train[2],
        valid_loss=valid[0], valid_vap=valid[1], valid_vad=valid[2],
    )


def write_history_csv(history: Sequence[EpochRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for record in history:
            writer.writerow(record.model_dump())


#------------------------ GRADIENT CHECK

@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]

    @property
    def max_rel_error(self) -> float:
        return max((entry.rel_error for entry in self.entries), default=0.0)


def relative_error(analytic: float, numeric: float, *, floor: float = 1e-6) -> float:
    if analytic == 0.0 and abs(numeric) < 1e-8:
        return 0.0
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def analytic_gradients(model: VapModel, batch: FrameBatch) -> dict[str, torch.Tensor]:
    model.zero_grad()
    loss(model.predict(batch), batch).total.backward()
    return {
        name: parameter.grad.detach().clone() if parameter.grad is not None else torch.zeros_like(parameter)
        for name, parameter in model.named_parameters()
    }


def sample_coordinates(model: VapModel, n_params: int, seed: int) -> list[tuple[str, int]]:
    rng = np.random.default_rng(seed)
    named = [(name, parameter.numel()) for name, parameter in model.named_parameters()]
    sizes = np.array([size for _, size in named])
    flat = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    coordinates = []
    for position in np.sort(flat):
        slot = int(np.searchsorted(offsets, position, side="right") - 1)
        coordinates.append((named[slot][0], int(position - offsets[slot])))
    return coordinates


@torch.no_grad()
def compare_gradients(
        model: VapModel,
        batch: FrameBatch,
        analytic: dict[str, torch.Tensor],
        coordinates: Sequence[tuple[str, int]],
        *,
        step: float = 1e-4,
) -> GradCheckReport:
    parameters = dict(model.named_parameters())
    entries = []
    for name, index in coordinates:
        flat = parameters[name].data.view(-1)
        original = float(flat[index])
        flat[index] = original + step
        plus = float(loss(model.predict(batch), batch).total)
        flat[index] = original - step
        minus = float(loss(model.predict(batch), batch).total)
        flat[index] = original
        numeric = (plus - minus) / (2.0 * step)
        a = float(analytic[name].view(-1)[index])
        entries.append(GradCheckEntry(name, index, a, numeric, relative_error(a, numeric)))
    return GradCheckReport(tuple(entries))


def grad_check(
        model: VapModel,
        batch: FrameBatch,
        *,
        n_params: int = 20,
        step: float = 1e-4,
        seed: int = 0,
) -> GradCheckReport:
    """Analytic vs central-difference gradients, in float64 on a copy of ``model``."""
    replica = copy.deepcopy(model).double()
    replica.train()
    batch = batch.to(torch.float64)
    analytic = analytic_gradients(replica, batch)
    return compare_gradients(replica, batch, analytic, sample_coordinates(replica, n_params, seed), step=step)


#------------------------ PER-SNR EVALUATION

@dataclass(frozen=True)
class SnrLossRow:
    condition: str
    l_vap: float


def eval_conditions(snr_list: Sequence[float]) -> list[float | None]:
    return [None, *sorted(snr_list, reverse=True)]


def eval_per_snr(
        model: VapModel,
        test: TrainingData,
        bank: NoiseBank,
        snr_list: Sequence[float],
        *,
        bins: BinConfig = BinConfig(),
        seed: int = 0,
) -> list[SnrLossRow]:
    """Mean L_vap of ``test`` under clean audio and each SNR; same noise clip per item across SNRs."""
    if len(test) == 0:
        raise ValueError("eval_per_snr needs a non-empty test set")
    rows = []
    for snr_db in eval_conditions(snr_list):
        frames = []
        for item_id, dialogue in zip(test.ids, test.dialogues):
            rng = item_rng(seed, f"test/{item_id}")
            name = bank.names[int(rng.integers(len(bank)))]
            condition = CLEAN if snr_db is None else Condition(noise_name=name, snr_db=snr_db)
            frames.append(dialogue_frames(apply_condition(dialogue, bank, condition, rng).dialogue, bins))
        _, l_vap, _ = evaluate_batch(model, window_batch(frames, model.cfg.context_frames))
        rows.append(SnrLossRow(condition="clean" if snr_db is None else f"{snr_db:g}", l_vap=l_vap))
        logger.info("Eval %s: L_vap=%.4f", rows[-1].condition, l_vap)
    return rows


#------------------------ SHIFT / HOLD

@dataclass(frozen=True)
class SilenceOnset:
    onset_s: float
    previous_speaker: int
    next_speaker: int

    @property
    def is_shift(self) -> bool:
        return self.previous_speaker != self.next_speaker


def mutual_silences(dialogue: StereoDialogue) -> list[SilenceOnset]:
    """Gaps where neither speaker is active, bounded by speech on both sides."""
    vad_a, vad_b = dialogue.vad_a.frames, dialogue.vad_b.frames
    silent = VadTrack(~(vad_a | vad_b))
    onsets = []
    for start, stop in silent.segments():
        if start == 0 or stop >= len(silent):
            continue
        # overlap at either edge is ambiguous; skip it
        if vad_a[start - 1] == vad_b[start - 1] or vad_a[stop] == vad_b[stop]:
            continue
        onsets.append(SilenceOnset(
            onset_s=start / silent.frame_rate,
            previous_speaker=0 if vad_a[start - 1] else 1,
            next_speaker=0 if vad_a[stop] else 1,
        ))
    return onsets


def _score_onsets(model: VapModel, dialogue: StereoDialogue) -> tuple[int, int]:
    correct = total = 0
    for onset in mutual_silences(dialogue):
        frame_index = int(round(onset.onset_s / TICK_SECONDS))
        if frame_index < 1:
            continue
        result = offline_prediction(model, dialogue.channel_a, dialogue.channel_b, frame_index)
        predicted = 1 if result.p_now_robot > 0.5 else 0
        correct += int(predicted == onset.next_speaker)
        total += 1
    return correct, total


def shift_hold_accuracy(
        model: VapModel,
        dialogues: Sequence[StereoDialogue],
        bank: NoiseBank | None = None,
        condition: Condition = CLEAN,
        *,
        seed: int = 0,
) -> float:
    """Fraction of silence onsets where ``p_now_robot > 0.5`` on the tick ending at
    the onset agrees with whoever speaks next."""
    correct = total = 0
    for i, dialogue in enumerate(dialogues):
        noisy = apply_condition(dialogue, bank, condition, item_rng(seed, f"shift-hold/{i}")).dialogue
        scored = _score_onsets(model, noisy)
        correct, total = correct + scored[0], total + scored[1]
    if total == 0:
        raise NoTargetsError("No mutual-silence onsets to score")
    return correct / total


@dataclass(frozen=True)
class ShiftHoldRow:
    condition: str
    accuracy: float | None
    n_onsets: int


def shift_hold_per_snr(
        model: VapModel,
        test: TrainingData,
        bank: NoiseBank,
        snr_list: Sequence[float],
        *,
        seed: int = 0,
) -> list[ShiftHoldRow]:
    """Shift/hold accuracy under clean audio and each SNR, noised exactly as in ``eval_per_snr``."""
    rows = []
    for snr_db in eval_conditions(snr_list):
        correct = total = 0
        for item_id, dialogue in zip(test.ids, test.dialogues):
            rng = item_rng(seed, f"test/{item_id}")
            name = bank.names[int(rng.integers(len(bank)))]
            condition = CLEAN if snr_db is None else Condition(noise_name=name, snr_db=snr_db)
            scored = _score_onsets(model, apply_condition(dialogue, bank, condition, rng).dialogue)
            correct, total = correct + scored[0], total + scored[1]
        label = "clean" if snr_db is None else f"{snr_db:g}"
        if total == 0:
            logger.warning("No mutual-silence onsets under %s", label)
        rows.append(ShiftHoldRow(condition=label, accuracy=correct / total if total else None, n_onsets=total))
    return rows


def write_eval_csv(
        tables: dict[str, Sequence[SnrLossRow | ShiftHoldRow]],
        path: str | Path,
        *,
        value: str = "l_vap",
) -> None:
    """Rows per condition, one column per model; empty cells where ``value`` is undefined."""
    names = list(tables)
    conditions = [row.condition for row in next(iter(tables.values()))]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["snr_db", *names])
        for i, condition in enumerate(conditions):
            cells = [getattr(tables[name][i], value) for name in names]
            writer.writerow([condition, *("" if cell is None else f"{cell:.6f}" for cell in cells)])
