import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from app.audio import VadTrack
from app.schemas import (
    DelayDistribution,
    FrameResult,
    SttSimConfig,
    TurnEvent,
    TurnSource,
    VapEndpointerConfig,
)
from app.streaming import TICK_SECONDS


class SilentTrackError(ValueError):
    pass


#------------------------ VAP ENDPOINTER

class OnlineVapEndpointer:
    """Frame-by-frame end-of-turn detector for one stream; reset between turns."""

    def __init__(self, cfg: VapEndpointerConfig = VapEndpointerConfig()):
        self.cfg = cfg
        self.reset()

    def reset(self) -> None:
        self.consecutive = 0
        self.speech_ms = 0.0
        self.decision: float | None = None
        self._last_timestamp = -math.inf

    def update(self, frame: FrameResult) -> float | None:
        """Returns the decision time on the frame that completes it, else None."""
        if frame.timestamp_s <= self._last_timestamp:
            raise ValueError(
                f"Frames must be time-ordered: {frame.timestamp_s} after {self._last_timestamp}"
            )
        self._last_timestamp = frame.timestamp_s
        if not self.cfg.enabled or self.decision is not None:
            return None

        if frame.vad[0] >= 0.5:
            self.speech_ms += TICK_SECONDS * 1000.0
        self.consecutive = self.consecutive + 1 if frame.p_now_robot > self.cfg.theta else 0
        if self.consecutive >= self.cfg.consecutive_k and self.speech_ms >= self.cfg.min_user_speech_ms:
            self.decision = frame.timestamp_s
            return self.decision
        return None


def vap_decide(frames: Iterable[FrameResult], cfg: VapEndpointerConfig = VapEndpointerConfig()) -> float | None:
    detector = OnlineVapEndpointer(cfg)
    for frame in frames:
        decision = detector.update(frame)
        if decision is not None:
            return decision
    return None


#------------------------ SIMULATED CLOUD STT

def lognormal_params(mean_s: float, std_s: float) -> tuple[float, float]:
    sigma2 = math.log(1.0 + (std_s / mean_s) ** 2)
    return math.log(mean_s) - sigma2 / 2.0, math.sqrt(sigma2)


def sample_delay(dist: DelayDistribution, rng: np.random.Generator) -> float:
    """One draw, truncated at zero."""
    if dist.family == "constant" or dist.std_s == 0.0 or dist.mean_s == 0.0:
        return dist.mean_s
    if dist.family == "lognormal":
        mu, sigma = lognormal_params(dist.mean_s, dist.std_s)
        return float(rng.lognormal(mu, sigma))
    return max(0.0, float(rng.normal(dist.mean_s, dist.std_s)))


def stt_decide(vad: VadTrack, cfg: SttSimConfig, rng: np.random.Generator) -> float:
    """End of last speech + silence threshold for a "final" result + network delay."""
    segments = vad.segments()
    if not segments:
        raise SilentTrackError("STT endpointing needs at least one active region")
    speech_end = segments[-1][1] / vad.frame_rate
    return speech_end + cfg.silence_threshold_ms / 1000.0 + sample_delay(cfg.latency_model, rng)


#------------------------ ARBITER

def arbitrate(
        vap_decision: float | None,
        stt_decision: float,
        *,
        turn_id: int = 0,
        true_end_time_s: float = 0.0,
) -> TurnEvent:
    """Earlier decision wins; ties go to VAP, STT is the fallback."""
    if vap_decision is not None and vap_decision <= stt_decision:
        return TurnEvent(
            turn_id=turn_id, decision_time_s=vap_decision, true_end_time_s=true_end_time_s, source=TurnSource.VAP
        )
    return TurnEvent(
        turn_id=turn_id, decision_time_s=stt_decision, true_end_time_s=true_end_time_s, source=TurnSource.STT
    )


def write_turn_events(
        events: Sequence[TurnEvent],
        path: str | Path,
        *,
        labels: Sequence[dict] | None = None,
) -> None:
    """JSON lines; ``labels[i]`` (policy, dialogue id ...) leads line ``i`` when given."""
    if labels is not None and len(labels) != len(events):
        raise ValueError(f"Got {len(labels)} labels for {len(events)} events")
    with open(path, "w", encoding="utf-8") as handle:
        for i, event in enumerate(events):
            row = {**(labels[i] if labels is not None else {}), **event.model_dump(mode="json")}
            handle.write(json.dumps(row) + "\n")
