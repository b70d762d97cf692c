"""Config resolution and dataset access shared by every subcommand."""
import argparse
import json
import logging
from pathlib import Path
from typing import Any, Sequence

from pydantic import BaseModel

from app.audio import StereoDialogue, TurnSpan, VadTrack, load_wav, save_wav
from app.noise import NoiseBank, load_noise_bank, synthetic_noise_bank
from app.schemas import RunConfig
from app.training import TrainingData


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"
SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


#------------------------ CONFIG

def parse_override(item: str) -> tuple[list[str], Any]:
    """``section.field=value``; the value is read as JSON, falling back to a plain string."""
    key, sep, raw = item.partition("=")
    if not sep or not key or any(not part for part in key.split(".")):
        raise ConfigError(f"Bad --set {item!r}; expected section.field=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def set_path(document: dict, path: Sequence[str], value: Any) -> None:
    node = document
    for part in path[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot set {'.'.join(path)}: {part} is not a section")
        node = child
    node[path[-1]] = value


def read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        document = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{config_path} must hold a JSON object")
    return document


def resolve_config(args: argparse.Namespace, flag_paths: dict[str, str]) -> RunConfig:
    """File, then explicit flags, then ``--set`` overrides; validated last.

    ``flag_paths`` maps argparse destinations to dotted config paths; flags
    left at ``None`` keep the file or default value.
    """
    document = read_config_file(getattr(args, "config", None))
    for dest, dotted in flag_paths.items():
        value = getattr(args, dest, None)
        if value is not None:
            set_path(document, dotted.split("."), list(value) if isinstance(value, tuple) else value)
    for item in getattr(args, "overrides", None) or []:
        path, value = parse_override(item)
        set_path(document, path, value)
    return RunConfig.model_validate(document)


def write_run_config(cfg: RunConfig, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / CONFIG_NAME
    path.write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def prepare_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    write_run_config(cfg, out)
    return out


#------------------------ DATASET

class DialogueLabels(BaseModel):
    n_frames: int
    vad_a: list[tuple[int, int]]
    vad_b: list[tuple[int, int]]
    turns: list[tuple[int, float, float]]


class ManifestItem(BaseModel):
    item_id: str
    seed: int
    duration_s: float


class Manifest(BaseModel):
    seed: int
    items: list[ManifestItem]
    splits: dict[str, list[str]]


def _track(n_frames: int, segments: Sequence[tuple[int, int]]) -> VadTrack:
    frames = [False] * n_frames
    for start, stop in segments:
        frames[start:stop] = [True] * (stop - start)
    return VadTrack(frames)


def save_dialogue(dialogue: StereoDialogue, directory: Path, item_id: str) -> None:
    save_wav(dialogue.channel_a, directory / f"{item_id}_a.wav")
    save_wav(dialogue.channel_b, directory / f"{item_id}_b.wav")
    labels = DialogueLabels(
        n_frames=len(dialogue.vad_a),
        vad_a=dialogue.vad_a.segments(),
        vad_b=dialogue.vad_b.segments(),
        turns=[tuple(turn) for turn in dialogue.turns],
    )
    (directory / f"{item_id}.vad.json").write_text(labels.model_dump_json() + "\n", encoding="utf-8")


def load_dialogue(directory: Path, item_id: str) -> StereoDialogue:
    labels_path = directory / f"{item_id}.vad.json"
    if not labels_path.is_file():
        raise FileNotFoundError(f"Label file not found: {labels_path}")
    labels = DialogueLabels.model_validate_json(labels_path.read_text(encoding="utf-8"))
    return StereoDialogue(
        channel_a=load_wav(directory / f"{item_id}_a.wav"),
        channel_b=load_wav(directory / f"{item_id}_b.wav"),
        vad_a=_track(labels.n_frames, labels.vad_a),
        vad_b=_track(labels.n_frames, labels.vad_b),
        turns=tuple(TurnSpan(*turn) for turn in labels.turns),
    )


def read_manifest(data_dir: str | Path) -> Manifest:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"Dataset manifest not found: {path}; run synth-data first")
    return Manifest.model_validate_json(path.read_text(encoding="utf-8"))


def load_split(data_dir: str | Path, split: str) -> TrainingData:
    if split not in SPLITS:
        raise ValueError(f"Unknown split {split!r}; expected one of {SPLITS}")
    manifest = read_manifest(data_dir)
    directory = Path(data_dir) / "dialogues"
    ids = manifest.splits[split]
    logger.info("Loading %d %s dialogues from %s", len(ids), split, directory)
    return TrainingData(dialogues=[load_dialogue(directory, item_id) for item_id in ids], ids=list(ids))


def noise_bank_for(cfg: RunConfig) -> NoiseBank:
    return load_noise_bank(cfg.noise_dir or Path(cfg.data_dir) / "noise")


def simulation_bank(cfg: RunConfig) -> NoiseBank:
    """The dataset's noise bank when there is one, else synthetic noise seeded from ``cfg.seed``."""
    if cfg.noise_dir is not None:
        return load_noise_bank(cfg.noise_dir)
    directory = Path(cfg.data_dir) / "noise"
    if directory.is_dir():
        return load_noise_bank(directory)
    logger.info("No noise bank under %s; simulating with synthetic noise", directory)
    return synthetic_noise_bank(cfg.seed)
