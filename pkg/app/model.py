import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.audio import LABEL_HOP, ChannelMismatchError, StereoDialogue
from app.codebook import N_STATES, NO_TARGET, state_targets
from app.features import HOP_SAMPLES, extract_features, silent_features
from app.schemas import BinConfig, ModelConfig


logger = logging.getLogger(__name__)

FEATURE_OFFSET = -5.0
FEATURE_SCALE = 10.0
PROB_EPS = 1e-12
CHECKPOINT_VERSION = 1
LABELS_PER_FRAME = HOP_SAMPLES // LABEL_HOP


class NoTargetsError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


#------------------------ BATCHES

@dataclass(frozen=True, eq=False)
class FrameBatch:
    features_a: torch.Tensor
    features_b: torch.Tensor
    target_state: torch.Tensor
    target_vad: torch.Tensor

    def __post_init__(self):
        if self.features_a.shape != self.features_b.shape:
            raise ChannelMismatchError(
                f"Feature shapes differ: {tuple(self.features_a.shape)} vs {tuple(self.features_b.shape)}"
            )

    @property
    def mask(self) -> torch.Tensor:
        return self.target_state != NO_TARGET

    def to(self, dtype: torch.dtype) -> "FrameBatch":
        return FrameBatch(
            self.features_a.to(dtype),
            self.features_b.to(dtype),
            self.target_state,
            self.target_vad.to(dtype),
        )


@dataclass(frozen=True, eq=False)
class DialogueFrames:
    """Per-dialogue features and targets before windowing."""
    features_a: np.ndarray
    features_b: np.ndarray
    target_state: np.ndarray
    target_vad: np.ndarray

    def __len__(self) -> int:
        return self.features_a.shape[0]


def hop_activity(vad: np.ndarray, n_frames: int) -> np.ndarray:
    """Majority activity of the label frames inside each 100 ms hop."""
    padded = np.zeros(n_frames * LABELS_PER_FRAME, dtype=bool)
    usable = min(vad.size, padded.size)
    padded[:usable] = vad[:usable]
    return padded.reshape(n_frames, LABELS_PER_FRAME).mean(axis=1) >= 0.5


def dialogue_frames(
        dialogue: StereoDialogue,
        bins: BinConfig = BinConfig(),
        *,
        zero_robot: bool = False,
) -> DialogueFrames:
    features_a = extract_features(dialogue.channel_a)
    n_frames = features_a.shape[0]
    features_b = silent_features(n_frames) if zero_robot else extract_features(dialogue.channel_b)
    starts = (np.arange(n_frames) + 1) * LABELS_PER_FRAME
    vad_a, vad_b = dialogue.vad_a.frames, dialogue.vad_b.frames
    return DialogueFrames(
        features_a=features_a,
        features_b=features_b,
        target_state=state_targets(vad_a, vad_b, starts, bins),
        target_vad=np.stack((hop_activity(vad_a, n_frames), hop_activity(vad_b, n_frames)), axis=1),
    )


def window_batch(
        frames: list[DialogueFrames],
        context_frames: int,
        *,
        offset: int = 0,
) -> FrameBatch:
    """Cut every dialogue into ``context_frames`` windows; the tail is padded without targets."""
    feats_a, feats_b, states, vads = [], [], [], []
    for item in frames:
        total = len(item)
        for start in range(min(offset, max(total - 1, 0)), total, context_frames):
            stop = min(start + context_frames, total)
            pad = context_frames - (stop - start)
            feats_a.append(np.pad(item.features_a[start:stop], ((0, pad), (0, 0)), mode="edge"))
            feats_b.append(np.pad(item.features_b[start:stop], ((0, pad), (0, 0)), mode="edge"))
            states.append(np.pad(item.target_state[start:stop], (0, pad), constant_values=NO_TARGET))
            vads.append(np.pad(item.target_vad[start:stop], ((0, pad), (0, 0))))
    if not feats_a:
        raise NoTargetsError("No frames to batch")
    return FrameBatch(
        features_a=torch.tensor(np.stack(feats_a), dtype=torch.float32),
        features_b=torch.tensor(np.stack(feats_b), dtype=torch.float32),
        target_state=torch.tensor(np.stack(states), dtype=torch.long),
        target_vad=torch.tensor(np.stack(vads), dtype=torch.float32),
    )


def build_frame_batch(
        dialogue: StereoDialogue,
        cfg: ModelConfig = ModelConfig(),
        bins: BinConfig = BinConfig(),
        *,
        zero_robot: bool = False,
) -> FrameBatch:
    return window_batch([dialogue_frames(dialogue, bins, zero_robot=zero_robot)], cfg.context_frames)


def batch_slice(batch: FrameBatch, index: torch.Tensor) -> FrameBatch:
    return FrameBatch(
        batch.features_a[index], batch.features_b[index], batch.target_state[index], batch.target_vad[index]
    )


#------------------------ NETWORK

def causal_mask(n_frames: int, device: torch.device | None = None) -> torch.Tensor:
    return torch.triu(torch.ones(n_frames, n_frames, dtype=torch.bool, device=device), diagonal=1)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, mult: int):
        super().__init__(
            nn.Linear(dim, mult * dim),
            nn.GELU(),
            nn.Linear(mult * dim, dim),
        )


class CausalSelfAttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ff_mult)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.attn_norm(x)
        attn_out, _ = self.attn(h, h, h, attn_mask=mask, need_weights=False)
        x = x + attn_out
        return x + self.ffn(self.ffn_norm(x))


class CausalCrossAttentionBlock(nn.Module):
    """Stream X (query) attends to stream Y (key/value) up to the same frame."""

    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.q_norm = nn.LayerNorm(dim)
        self.kv_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, dropout=0.0, batch_first=True)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ff_mult)

    def forward(self, x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        q = self.q_norm(x)
        kv = self.kv_norm(y)
        attn_out, _ = self.attn(q, kv, kv, attn_mask=mask, need_weights=False)
        x = x + attn_out
        return x + self.ffn(self.ffn_norm(x))


class ChannelEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.proj = nn.Linear(cfg.feature_bands, cfg.model_dim)
        self.position = nn.Parameter(torch.zeros(cfg.context_frames, cfg.model_dim))
        self.layers = nn.ModuleList(
            CausalSelfAttentionBlock(cfg.model_dim, cfg.heads, cfg.ff_mult) for _ in range(cfg.channel_layers)
        )
        nn.init.normal_(self.position, std=0.02)

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        n_frames = features.shape[1]
        x = self.proj((features - FEATURE_OFFSET) / FEATURE_SCALE) + self.position[:n_frames]
        for layer in self.layers:
            x = layer(x, mask)
        return x


@dataclass(frozen=True, eq=False)
class PredictionOutput:
    """Per-frame VAP distribution and per-speaker VAD probability.

    Logits are carried when the output comes from the network so the loss can
    stay in the log domain.
    """
    vap: torch.Tensor
    vad: torch.Tensor
    vap_logits: torch.Tensor | None = None
    vad_logits: torch.Tensor | None = None


class VapModel(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder_a = ChannelEncoder(cfg)
        self.encoder_b = self.encoder_a if cfg.tie_channels else ChannelEncoder(cfg)
        self.cross_ab = nn.ModuleList(
            CausalCrossAttentionBlock(cfg.model_dim, cfg.heads, cfg.ff_mult) for _ in range(cfg.cross_layers)
        )
        self.cross_ba = self.cross_ab if cfg.tie_channels else nn.ModuleList(
            CausalCrossAttentionBlock(cfg.model_dim, cfg.heads, cfg.ff_mult) for _ in range(cfg.cross_layers)
        )
        self.stream_norm = nn.LayerNorm(cfg.model_dim)
        self.fused_norm = nn.LayerNorm(cfg.model_dim)
        self.vap_head = nn.Linear(cfg.model_dim, N_STATES)
        vad_rows = 1 if cfg.tie_channels else 2
        self.vad_weight = nn.Parameter(torch.zeros(vad_rows, cfg.model_dim))
        self.vad_bias = nn.Parameter(torch.zeros(vad_rows))

        nn.init.normal_(self.vap_head.weight, std=0.02)
        nn.init.zeros_(self.vap_head.bias)
        nn.init.normal_(self.vad_weight, std=0.02)

    def forward(self, features_a: torch.Tensor, features_b: torch.Tensor) -> PredictionOutput:
        if features_a.shape != features_b.shape:
            raise ChannelMismatchError(
                f"Feature shapes differ: {tuple(features_a.shape)} vs {tuple(features_b.shape)}"
            )
        if features_a.shape[1] > self.cfg.context_frames:
            raise ValueError(f"At most {self.cfg.context_frames} frames per window, got {features_a.shape[1]}")

        mask = causal_mask(features_a.shape[1], features_a.device)
        a = self.encoder_a(features_a, mask)
        b = self.encoder_b(features_b, mask)
        for block_ab, block_ba in zip(self.cross_ab, self.cross_ba):
            a, b = block_ab(a, b, mask), block_ba(b, a, mask)

        vap_logits = self.vap_head(self.fused_norm(a + b))
        weight = self.vad_weight.expand(2, -1)
        bias = self.vad_bias.expand(2)
        vad_logits = torch.stack(
            (self.stream_norm(a) @ weight[0] + bias[0], self.stream_norm(b) @ weight[1] + bias[1]),
            dim=-1,
        )
        return PredictionOutput(
            vap=torch.softmax(vap_logits, dim=-1),
            vad=torch.sigmoid(vad_logits),
            vap_logits=vap_logits,
            vad_logits=vad_logits,
        )

    def predict(self, batch: FrameBatch) -> PredictionOutput:
        return self(batch.features_a, batch.features_b)

    @torch.no_grad()
    def zero_heads(self) -> "VapModel":
        """Uniform VAP rows and VAD = 0.5 regardless of input."""
        for parameter in (self.vap_head.weight, self.vap_head.bias, self.vad_weight, self.vad_bias):
            parameter.zero_()
        return self


#------------------------ LOSS

@dataclass(frozen=True)
class LossBreakdown:
    total: torch.Tensor
    vap: torch.Tensor
    vad: torch.Tensor

    def as_floats(self) -> tuple[float, float, float]:
        return float(self.total), float(self.vap), float(self.vad)


def loss(out: PredictionOutput, batch: FrameBatch) -> LossBreakdown:
    """L = L_vap + L_vad; L_vad is averaged over frames and both speakers."""
    mask = batch.mask
    if not bool(mask.any()):
        raise NoTargetsError("Batch has no frames with a full 2 s horizon")

    targets = batch.target_state[mask]
    vad_targets = batch.target_vad[mask]
    if out.vap_logits is not None and out.vad_logits is not None:
        l_vap = F.cross_entropy(out.vap_logits[mask], targets)
        l_vad = F.binary_cross_entropy_with_logits(out.vad_logits[mask], vad_targets)
    else:
        picked = out.vap[mask].gather(1, targets[:, None]).squeeze(1)
        l_vap = -torch.log(picked.clamp_min(PROB_EPS)).mean()
        vad = out.vad[mask].clamp(PROB_EPS, 1.0 - PROB_EPS)
        l_vad = -(vad_targets * torch.log(vad) + (1 - vad_targets) * torch.log(1 - vad)).mean()
    return LossBreakdown(l_vap + l_vad, l_vap, l_vad)


#------------------------ CHECKPOINTS

def save_checkpoint(model: VapModel, path: str | Path, *, extra: dict | None = None) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "config": model.cfg.model_dump(),
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        str(path),
    )
    logger.info("Saved checkpoint to %s", path)


def load_checkpoint(path: str | Path) -> VapModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint format {version!r}")
    model = VapModel(ModelConfig.model_validate(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
