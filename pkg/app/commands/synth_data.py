import argparse
import logging
from pathlib import Path

from app.commands.dependencies import (
    MANIFEST_NAME,
    Manifest,
    ManifestItem,
    resolve_config,
    save_dialogue,
    write_run_config,
)
from app.dialogue import generate_dialogue
from app.noise import load_noise_bank, split_dataset, synthetic_noise_bank, write_noise_bank
from app.schemas import RunConfig


logger = logging.getLogger(__name__)

FLAG_PATHS = {
    "data_dir": "data_dir",
    "n_dialogues": "n_dialogues",
    "noise_dir": "noise_dir",
    "seed": "seed",
}


def item_id_for(index: int) -> str:
    return f"dlg{index:04d}"


def cmd_synth_data(cfg: RunConfig) -> Manifest:
    """Dialogue WAV pairs, label files, a noise bank and an 8:1:1 manifest under ``data_dir``."""
    data_dir = Path(cfg.data_dir)
    dialogue_dir = data_dir / "dialogues"
    dialogue_dir.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, data_dir)

    if cfg.noise_dir is None:
        write_noise_bank(synthetic_noise_bank(cfg.seed), data_dir / "noise")
    else:
        write_noise_bank(load_noise_bank(cfg.noise_dir), data_dir / "noise")

    items = []
    for index in range(cfg.n_dialogues):
        item_id = item_id_for(index)
        script = cfg.script.model_copy(update={"seed": cfg.script.seed + index})
        dialogue = generate_dialogue(script)
        save_dialogue(dialogue, dialogue_dir, item_id)
        items.append(ManifestItem(item_id=item_id, seed=script.seed, duration_s=round(dialogue.duration_s, 6)))

    train, valid, test = split_dataset([item.item_id for item in items], cfg.seed)
    manifest = Manifest(seed=cfg.seed, items=items, splits={"train": train, "valid": valid, "test": test})
    (data_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(
        "(SUCCESS) Wrote %d dialogues to %s (train %d / valid %d / test %d)",
        len(items), data_dir, len(train), len(valid), len(test),
    )
    return manifest


def run(args: argparse.Namespace) -> int:
    cmd_synth_data(resolve_config(args, FLAG_PATHS))
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("synth-data", parents=parents, help="Generate a labelled synthetic corpus")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--n-dialogues", dest="n_dialogues", type=int)
    parser.add_argument("--noise-dir", dest="noise_dir", help="Directory of noise WAVs to copy instead of synthesizing")
    parser.set_defaults(handler=run)
