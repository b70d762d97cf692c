import argparse
import logging

from app.commands.dependencies import load_split, noise_bank_for, prepare_out_dir, resolve_config
from app.model import save_checkpoint
from app.noise import write_condition_manifest
from app.schemas import RunConfig
from app.training import FitResult, fit, write_history_csv


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pt"
HISTORY_NAME = "history.csv"
CONDITIONS_DIR = "conditions"

FLAG_PATHS = {
    "out_dir": "out_dir",
    "data_dir": "data_dir",
    "noise_dir": "noise_dir",
    "augmentation": "train.augmentation",
    "epochs": "train.epochs",
    "lr": "train.lr",
    "seed": "train.seed",
}


def cmd_train(cfg: RunConfig) -> FitResult:
    out = prepare_out_dir(cfg)
    train = load_split(cfg.data_dir, "train")
    valid = load_split(cfg.data_dir, "valid")
    bank = noise_bank_for(cfg) if cfg.train.augmentation == "mc" else None

    logger.info("Startup: training %s model on %d dialogues", cfg.train.augmentation, len(train))
    result = fit(train, valid, cfg.model, cfg.train, bins=cfg.bins, bank=bank)
    save_checkpoint(
        result.model,
        out / CHECKPOINT_NAME,
        extra={"augmentation": cfg.train.augmentation, "best_epoch": result.best_epoch},
    )
    write_history_csv(result.history, out / HISTORY_NAME)
    (out / CONDITIONS_DIR).mkdir(exist_ok=True)
    for epoch, records in sorted(result.conditions.items()):
        write_condition_manifest(records, out / CONDITIONS_DIR / f"epoch_{epoch:03d}.jsonl")
    logger.info("(SUCCESS) Checkpoint, history and condition manifests written to %s", out)
    return result


def run(args: argparse.Namespace) -> int:
    cmd_train(resolve_config(args, FLAG_PATHS))
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("train", parents=parents, help="Train a VAP model")
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--noise-dir", dest="noise_dir")
    parser.add_argument("--augmentation", choices=("clean", "mc"))
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.set_defaults(handler=run)
