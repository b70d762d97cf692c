"""End-to-end session simulation: endpointing policies replayed over generated dialogues."""
import csv
import json
import logging
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from app.audio import LABEL_FRAME_RATE, StereoDialogue, TurnSpan, VadTrack
from app.dialogue import generate_dialogue
from app.endpointing import OnlineVapEndpointer, arbitrate, stt_decide
from app.model import VapModel, hop_activity
from app.noise import CLEAN, NoiseBank, item_rng, sample_condition
from app.schemas import (
    DEPLOYMENT_SNR_DB,
    Condition,
    DescriptiveStats,
    DialogueScript,
    FrameResult,
    GroupComparison,
    HistogramBin,
    ResponseTimeRecord,
    SessionStats,
    SttSimConfig,
    TurnEvent,
    TurnSource,
    VapEndpointerConfig,
)
from app.streaming import TICK_SECONDS, StreamContext, stream_waveform
from app.utils.stats import compare_groups, describe, histogram


logger = logging.getLogger(__name__)

POLICIES = ("stt", "vap", "hybrid")
USER, ROBOT = 0, 1
RECORD_COLUMNS = (
    "policy", "dialogue_id", "turn_id", "source", "robot_response_s", "user_response_s",
    "decision_time_s", "true_end_time_s", "stt_decision_time_s", "premature",
)


class PolicyError(ValueError):
    pass


#------------------------ PREDICTORS

class FramePredictor(Protocol):
    def predict(self, dialogue: StereoDialogue) -> list[FrameResult]: ...


class ModelPredictor:
    """Streams the user channel through a trained model; the robot channel stays silent."""

    def __init__(self, model: VapModel, *, chunk_samples: int = 320):
        self.model = model
        self.chunk_samples = chunk_samples

    def predict(self, dialogue: StereoDialogue) -> list[FrameResult]:
        return stream_waveform(StreamContext(self.model), dialogue.channel_a, chunk_samples=self.chunk_samples)


class OraclePredictor:
    """Label-derived p_now: the robot holds the turn once a tick has seen
    100 ms (plus ``delay_s``) past the true end of a user turn.

    Misses are drawn once per user turn, in the order dialogues are predicted.
    """

    def __init__(self, *, miss_rate: float = 0.0, delay_s: float = 0.0, confidence: float = 0.95, seed: int = 0):
        if not 0.0 <= miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {miss_rate}")
        self.miss_rate = miss_rate
        self.delay_s = delay_s
        self.confidence = confidence
        self.rng = np.random.default_rng(seed)

    def predict(self, dialogue: StereoDialogue) -> list[FrameResult]:
        n_ticks = int(dialogue.duration_s / TICK_SECONDS + 1e-9)
        timestamps = np.round(np.arange(1, n_ticks + 1) * TICK_SECONDS, 6)
        p_robot = np.full(n_ticks, 1.0 - self.confidence)
        users = dialogue.turns_of(USER)
        for turn_id, turn in enumerate(users):
            if self.rng.random() < self.miss_rate:
                continue
            until = users[turn_id + 1].start_s if turn_id + 1 < len(users) else np.inf
            fire = round(turn.end_s + TICK_SECONDS + self.delay_s, 6)
            p_robot[(timestamps >= fire - 1e-9) & (timestamps < until - 1e-9)] = self.confidence

        vad_a = hop_activity(dialogue.vad_a.frames, n_ticks)
        vad_b = hop_activity(dialogue.vad_b.frames, n_ticks)
        return [
            FrameResult(
                frame_index=i + 1,
                timestamp_s=float(timestamps[i]),
                p_now_user=float(1.0 - p_robot[i]),
                p_now_robot=float(p_robot[i]),
                vad=(float(vad_a[i]), float(vad_b[i])),
                vap_entropy=0.0,
            )
            for i in range(n_ticks)
        ]


#------------------------ DEPLOYMENT CORPUS

def deployment_conditions(
        n_dialogues: int,
        bank: NoiseBank | None,
        *,
        snr_set: Sequence[float] = DEPLOYMENT_SNR_DB,
        clean_prob: float = 0.25,
        seed: int = 0,
) -> list[Condition]:
    """One field condition per dialogue; all clean without a bank or SNR set."""
    if bank is None or len(bank) == 0 or not snr_set or clean_prob >= 1.0:
        return [CLEAN] * n_dialogues
    return [
        sample_condition(item_rng(seed, f"deploy/{index}"), bank, snr_set, clean_prob=clean_prob)
        for index in range(n_dialogues)
    ]


def deployment_corpus(
        script: DialogueScript,
        n_dialogues: int,
        *,
        bank: NoiseBank | None = None,
        snr_set: Sequence[float] = DEPLOYMENT_SNR_DB,
        clean_prob: float = 0.25,
        seed: int = 0,
) -> tuple[list[StereoDialogue], list[Condition]]:
    """Dialogues seeded ``script.seed + i`` whose user channel carries a sampled noise condition."""
    conditions = deployment_conditions(n_dialogues, bank, snr_set=snr_set, clean_prob=clean_prob, seed=seed)
    dialogues = [
        generate_dialogue(script.model_copy(update={"seed": script.seed + index}), bank=bank, condition=condition)
        for index, condition in enumerate(conditions)
    ]
    n_clean = sum(1 for condition in conditions if condition.is_clean)
    logger.info("Deployment corpus: %d dialogues, %d clean", n_dialogues, n_clean)
    return dialogues, conditions


#------------------------ SESSION

def _turn_rng(stt_cfg: SttSimConfig, dialogue_id: int, turn_id: int) -> np.random.Generator:
    return np.random.default_rng([stt_cfg.latency_model.seed, dialogue_id, turn_id])


def _vap_decision(
        frames: Sequence[FrameResult],
        turn: TurnSpan,
        until_s: float,
        cfg: VapEndpointerConfig,
) -> float | None:
    detector = OnlineVapEndpointer(cfg)
    for frame in frames:
        if frame.timestamp_s <= turn.start_s + 1e-9:
            continue
        if frame.timestamp_s > until_s + 1e-9:
            break
        decision = detector.update(frame)
        if decision is not None:
            return decision
    return None


def _user_response(dialogue: StereoDialogue, turn: TurnSpan) -> float | None:
    """Scripted gap between the robot turn after ``turn`` and the next user turn."""
    robot = next((t for t in dialogue.turns_of(ROBOT) if t.start_s >= turn.end_s), None)
    following = next((t for t in dialogue.turns_of(USER) if t.start_s > turn.end_s), None)
    if robot is None or following is None:
        return None
    return round(max(0.0, following.start_s - robot.end_s), 6)


def run_session(
        dialogue: StereoDialogue,
        policy: str,
        *,
        frames: Sequence[FrameResult] | None = None,
        predictor: FramePredictor | None = None,
        vap_cfg: VapEndpointerConfig = VapEndpointerConfig(),
        stt_cfg: SttSimConfig = SttSimConfig(),
        response_delay_s: float = 0.3,
        dialogue_id: int = 0,
) -> list[ResponseTimeRecord]:
    """One record per user turn (VAP-only: per turn where VAP fired).

    STT latency draws depend only on (latency seed, dialogue id, turn id), so
    every policy sees the same cloud timeline for the same dialogue.
    """
    if policy not in POLICIES:
        raise PolicyError(f"Unknown policy {policy!r}; expected one of {POLICIES}")
    if policy != "stt" and frames is None:
        if predictor is None:
            raise PolicyError(f"Policy {policy!r} needs a VAP predictor or precomputed frames")
        frames = predictor.predict(dialogue)

    users = dialogue.turns_of(USER)
    records = []
    for turn_id, turn in enumerate(users):
        history = VadTrack(dialogue.vad_a.frames[: int(round(turn.end_s * LABEL_FRAME_RATE))])
        stt_time = stt_decide(history, stt_cfg, _turn_rng(stt_cfg, dialogue_id, turn_id))

        if policy == "stt":
            decision, source = stt_time, TurnSource.STT
        else:
            next_start = users[turn_id + 1].start_s if turn_id + 1 < len(users) else dialogue.duration_s
            until = stt_time if policy == "hybrid" else next_start
            vap_time = _vap_decision(frames, turn, until, vap_cfg)
            if policy == "vap":
                if vap_time is None:
                    continue
                decision, source = vap_time, TurnSource.VAP
            else:
                event = arbitrate(vap_time, stt_time, turn_id=turn_id, true_end_time_s=turn.end_s)
                decision, source = event.decision_time_s, event.source

        records.append(ResponseTimeRecord(
            turn_id=turn_id,
            robot_response_s=round(max(0.0, decision + response_delay_s - turn.end_s), 6),
            user_response_s=_user_response(dialogue, turn),
            source=source,
            decision_time_s=round(decision, 6),
            true_end_time_s=turn.end_s,
            stt_decision_time_s=round(stt_time, 6),
            premature=decision < turn.end_s - 1e-9,
        ))
    return records


#------------------------ STATISTICS

def summarize(records: Sequence[ResponseTimeRecord]) -> SessionStats:
    if not records:
        raise ValueError("summarize needs at least one record")
    robot = [r.robot_response_s for r in records]
    user = [r.user_response_s for r in records if r.user_response_s is not None]
    n_vap = sum(1 for r in records if r.source == TurnSource.VAP)
    return SessionStats(
        robot=describe(robot),
        user=describe(user) if user else None,
        robot_histogram=histogram(robot),
        user_histogram=histogram(user),
        vap_source_fraction=n_vap / len(records),
        premature_fraction=sum(1 for r in records if r.premature) / len(records),
        source_counts={TurnSource.VAP.value: n_vap, TurnSource.STT.value: len(records) - n_vap},
    )


def vap_decided(records: Sequence[ResponseTimeRecord]) -> list[ResponseTimeRecord]:
    return [record for record in records if record.source == TurnSource.VAP]


def turn_event(record: ResponseTimeRecord) -> TurnEvent:
    return TurnEvent(
        turn_id=record.turn_id,
        decision_time_s=record.decision_time_s,
        true_end_time_s=record.true_end_time_s,
        source=record.source,
    )


def compare_policies(
        a: Sequence[ResponseTimeRecord],
        b: Sequence[ResponseTimeRecord],
) -> GroupComparison:
    return compare_groups([r.robot_response_s for r in a], [r.robot_response_s for r in b])


def run_policies(
        dialogues: Sequence[StereoDialogue],
        policies: Sequence[str],
        *,
        predictor: FramePredictor | None = None,
        vap_cfg: VapEndpointerConfig = VapEndpointerConfig(),
        stt_cfg: SttSimConfig = SttSimConfig(),
        response_delay_s: float = 0.3,
) -> dict[str, list[tuple[int, ResponseTimeRecord]]]:
    """Every policy over the same dialogues; predictions are computed once per dialogue."""
    for policy in policies:
        if policy not in POLICIES:
            raise PolicyError(f"Unknown policy {policy!r}; expected one of {POLICIES}")
    needs_frames = any(policy != "stt" for policy in policies)
    if needs_frames and predictor is None:
        raise PolicyError("VAP policies need a predictor")

    results: dict[str, list[tuple[int, ResponseTimeRecord]]] = {policy: [] for policy in policies}
    for dialogue_id, dialogue in enumerate(dialogues):
        frames = predictor.predict(dialogue) if needs_frames else None
        for policy in policies:
            records = run_session(
                dialogue, policy, frames=frames, vap_cfg=vap_cfg, stt_cfg=stt_cfg,
                response_delay_s=response_delay_s, dialogue_id=dialogue_id,
            )
            results[policy].extend((dialogue_id, record) for record in records)
        logger.debug("Simulated dialogue %d/%d", dialogue_id + 1, len(dialogues))
    return results


#------------------------ OUTPUT

def _rows(results: dict[str, Sequence[tuple[int, ResponseTimeRecord]]]):
    for policy, records in results.items():
        for dialogue_id, record in records:
            yield {"policy": policy, "dialogue_id": dialogue_id, **record.model_dump(mode="json")}


def write_records_jsonl(results: dict[str, Sequence[tuple[int, ResponseTimeRecord]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in _rows(results):
            handle.write(json.dumps(row) + "\n")


def write_records_csv(results: dict[str, Sequence[tuple[int, ResponseTimeRecord]]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        writer.writerows(_rows(results))


def write_histogram_csv(bins: Sequence[HistogramBin], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin_start", "count"])
        for item in bins:
            writer.writerow([f"{item.bin_start:.2f}", item.count])


def write_stats_json(
        stats: dict[str, SessionStats],
        comparisons: dict[str, GroupComparison],
        path: str | Path,
        *,
        subsets: dict[str, DescriptiveStats] | None = None,
) -> None:
    payload = {
        "policies": {name: block.model_dump(mode="json") for name, block in stats.items()},
        "comparisons": {name: block.model_dump(mode="json") for name, block in comparisons.items()},
        "subsets": {name: block.model_dump(mode="json") for name, block in (subsets or {}).items()},
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
