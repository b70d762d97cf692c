import enum
import math
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator


SNR_SET_DB: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
EVAL_SNR_DB: tuple[float, ...] = (20.0, 15.0, 10.0, 5.0)
# simulated field conditions reach below the training range
DEPLOYMENT_SNR_DB: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0)


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


#------------------------ NOISE

class Condition(FrozenModel):
    """One augmentation draw. ``snr_db=None`` is the CLEAN condition."""
    noise_name: str | None = None
    snr_db: float | None = None

    @model_validator(mode="after")
    def check_clean_pair(self):
        if (self.noise_name is None) != (self.snr_db is None):
            raise ValueError("Condition needs both noise_name and snr_db, or neither (clean).")
        return self

    @property
    def is_clean(self) -> bool:
        return self.snr_db is None

    @property
    def label(self) -> str:
        return "clean" if self.snr_db is None else f"{self.snr_db:g}"


#------------------------ CODEBOOK

class BinConfig(FrozenModel):
    boundaries_s: tuple[float, float, float, float] = (0.2, 0.6, 1.2, 2.0)
    activity_ratio: float = Field(0.5, gt=0.0, le=1.0)

    @field_validator("boundaries_s")
    @classmethod
    def validate_boundaries(cls, value):
        if any(b <= a for a, b in zip((0.0, *value[:-1]), value)):
            raise ValueError(f"Bin boundaries must be strictly ascending and positive, got {value}.")
        if not math.isclose(value[-1], 2.0):
            raise ValueError(f"Last bin boundary must be 2.0 s, got {value[-1]}.")
        return value

    @property
    def horizon_s(self) -> float:
        return self.boundaries_s[-1]


#------------------------ MODEL

class ModelConfig(FrozenModel):
    feature_bands: int = Field(40, ge=1)
    model_dim: int = Field(32, ge=2)
    channel_layers: int = Field(1, ge=1)
    cross_layers: int = Field(1, ge=1)
    heads: int = Field(2, ge=1)
    context_frames: int = 50
    ff_mult: int = Field(4, ge=1)
    tie_channels: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def check_shapes(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim={self.model_dim} is not divisible by heads={self.heads}.")
        if self.context_frames != 50:
            raise ValueError("context_frames must be 50 (5 s at 10 Hz).")
        return self


class TrainConfig(FrozenModel):
    epochs: int = Field(50, ge=0)
    lr: float = Field(0.3, gt=0.0)
    lr_decay: float = Field(0.98, gt=0.0, le=1.0)
    momentum: float = Field(0.0, ge=0.0, lt=1.0)
    batch_size: int = Field(16, ge=1)
    grad_clip: float = Field(1.0, gt=0.0)
    augmentation: Literal["clean", "mc"] = "mc"
    snr_set: tuple[float, ...] = SNR_SET_DB
    clean_prob: float = Field(0.2, ge=0.0, le=1.0)
    zero_robot_prob: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = 0

    @field_validator("snr_set")
    @classmethod
    def validate_snr_set(cls, value):
        if not value:
            raise ValueError("snr_set must not be empty.")
        return value


#------------------------ ENDPOINTING

class TurnSource(str, enum.Enum):
    VAP = "VAP"
    STT = "STT"


class VapEndpointerConfig(FrozenModel):
    enabled: bool = True
    theta: float = Field(0.6, gt=0.5, lt=1.0)
    consecutive_k: int = Field(3, ge=1)
    min_user_speech_ms: float = Field(300.0, ge=0.0)


class DelayDistribution(FrozenModel):
    family: Literal["lognormal", "normal", "constant"] = "lognormal"
    mean_s: float = Field(0.6, ge=0.0)
    std_s: float = Field(0.3, ge=0.0)


class LatencyModel(DelayDistribution):
    """Cloud round trip added after the STT silence timeout."""
    mean_s: float = Field(1.0, ge=0.0)
    std_s: float = Field(0.5, ge=0.0)
    seed: int = 0


class SttSimConfig(FrozenModel):
    silence_threshold_ms: float = Field(800.0, gt=0.0)
    latency_model: LatencyModel = LatencyModel()


class FrameResult(FrozenModel):
    frame_index: int = Field(..., ge=1)
    timestamp_s: float
    p_now_user: float
    p_now_robot: float
    vad: tuple[float, float]
    vap_entropy: float
    compute_ms: float = 0.0


class TurnEvent(FrozenModel):
    turn_id: int
    decision_time_s: float = Field(..., ge=0.0)
    true_end_time_s: float
    source: TurnSource

    @computed_field
    @property
    def latency_s(self) -> float:
        return self.decision_time_s - self.true_end_time_s


#------------------------ DIALOGUE SIMULATION

class DialogueScript(FrozenModel):
    n_turns: int = Field(8, ge=0)
    user_utterance_s: tuple[float, float] = (1.0, 3.0)
    robot_utterance_s: tuple[float, float] = (1.0, 3.0)
    user_reaction_s: DelayDistribution = DelayDistribution(family="lognormal", mean_s=2.35, std_s=0.8)
    pause_before_end_s: DelayDistribution = DelayDistribution(family="normal", mean_s=0.4, std_s=0.15)
    robot_gap_s: DelayDistribution = DelayDistribution(family="normal", mean_s=0.5, std_s=0.2)
    segments_per_turn: tuple[int, int] = (1, 2)
    seed: int = 0

    @field_validator("user_utterance_s", "robot_utterance_s")
    @classmethod
    def validate_range(cls, value):
        low, high = value
        if low <= 0 or high < low:
            raise ValueError(f"Utterance range must satisfy 0 < min <= max, got {value}.")
        return value

    @field_validator("segments_per_turn")
    @classmethod
    def validate_segments(cls, value):
        low, high = value
        if low < 1 or high < low:
            raise ValueError(f"segments_per_turn must satisfy 1 <= min <= max, got {value}.")
        return value


class ResponseTimeRecord(FrozenModel):
    model_config = ConfigDict(frozen=True, from_attributes=True)

    turn_id: int
    robot_response_s: float = Field(..., ge=0.0)
    user_response_s: float | None = Field(None, ge=0.0)
    source: TurnSource
    decision_time_s: float
    true_end_time_s: float
    stt_decision_time_s: float
    premature: bool = False


class DescriptiveStats(FrozenModel):
    count: int
    mean: float
    median: float
    stddev: float


class HistogramBin(FrozenModel):
    bin_start: float
    count: int


class SessionStats(FrozenModel):
    robot: DescriptiveStats
    user: DescriptiveStats | None
    robot_histogram: list[HistogramBin]
    user_histogram: list[HistogramBin]
    vap_source_fraction: float = Field(..., ge=0.0, le=1.0)
    premature_fraction: float = Field(..., ge=0.0, le=1.0)
    source_counts: dict[str, int]


class GroupComparison(FrozenModel):
    u_statistic: float
    rank_sum_p: float
    levene_p: float
    t_test: Literal["student", "welch"]
    t_statistic: float
    t_p: float


#------------------------ RUN CONFIG

class SimulationConfig(FrozenModel):
    policies: tuple[Literal["stt", "vap", "hybrid"], ...] = ("stt", "hybrid")
    n_dialogues: int = Field(25, ge=1)
    response_delay_s: float = Field(0.3, ge=0.0)
    predictor: Literal["model", "oracle"] = "model"
    oracle_miss_rate: float = Field(0.0, ge=0.0, le=1.0)
    oracle_delay_s: float = 0.0
    noise_snr_set: tuple[float, ...] = DEPLOYMENT_SNR_DB
    noise_clean_prob: float = Field(0.25, ge=0.0, le=1.0)
    store_results: bool = False
    seed: int = 0


class StreamConfig(FrozenModel):
    input_wav: str | None = None
    robot_wav: str | None = None
    realtime: bool = False
    chunk_ms: float = Field(20.0, gt=0.0)
    bench_seconds: float = Field(10.0, gt=0.0)


class EvalConfig(FrozenModel):
    checkpoints: tuple[str, ...] = ()
    snr_list: tuple[float, ...] = EVAL_SNR_DB
    include_uniform_baseline: bool = False


class RunConfig(FrozenModel):
    out_dir: str = "runs/default"
    data_dir: str = "runs/data"
    noise_dir: str | None = None
    checkpoint: str | None = None
    n_dialogues: int = Field(200, ge=10)
    seed: int = 0
    bins: BinConfig = BinConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    script: DialogueScript = DialogueScript()
    vap: VapEndpointerConfig = VapEndpointerConfig()
    stt: SttSimConfig = SttSimConfig()
    simulation: SimulationConfig = SimulationConfig()
    stream: StreamConfig = StreamConfig()
    eval: EvalConfig = EvalConfig()
