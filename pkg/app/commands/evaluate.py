import argparse
import logging
from pathlib import Path

from app.commands.dependencies import load_split, noise_bank_for, prepare_out_dir, resolve_config
from app.model import VapModel, load_checkpoint
from app.schemas import RunConfig
from app.training import SnrLossRow, eval_per_snr, shift_hold_per_snr, write_eval_csv


logger = logging.getLogger(__name__)

EVAL_NAME = "eval.csv"
SHIFT_HOLD_NAME = "shift_hold.csv"
UNIFORM_COLUMN = "uniform"

FLAG_PATHS = {
    "out_dir": "out_dir",
    "data_dir": "data_dir",
    "noise_dir": "noise_dir",
    "checkpoint": "checkpoint",
    "checkpoints": "eval.checkpoints",
    "snr_list": "eval.snr_list",
    "uniform_baseline": "eval.include_uniform_baseline",
    "seed": "seed",
}


def column_name(path: str | Path, taken: set[str]) -> str:
    """Checkpoint stem, or its run directory when the file keeps the default name."""
    path = Path(path)
    name = path.parent.name if path.stem == "checkpoint" and path.parent.name else path.stem
    candidate, suffix = name, 2
    while candidate in taken:
        candidate, suffix = f"{name}_{suffix}", suffix + 1
    return candidate


def cmd_eval(cfg: RunConfig) -> dict[str, list[SnrLossRow]]:
    """Test-set L_vap and shift/hold accuracy per SNR row, one column per checkpoint."""
    paths = list(cfg.eval.checkpoints) or ([cfg.checkpoint] if cfg.checkpoint else [])
    if not paths and not cfg.eval.include_uniform_baseline:
        raise FileNotFoundError("No checkpoint given; pass --checkpoint or --checkpoints")
    models: dict[str, VapModel] = {}
    for path in paths:
        models[column_name(path, set(models))] = load_checkpoint(path)
    if cfg.eval.include_uniform_baseline:
        models[UNIFORM_COLUMN] = VapModel(cfg.model).zero_heads()

    out = prepare_out_dir(cfg)
    test = load_split(cfg.data_dir, "test")
    bank = noise_bank_for(cfg)
    tables = {
        name: eval_per_snr(model, test, bank, cfg.eval.snr_list, bins=cfg.bins, seed=cfg.seed)
        for name, model in models.items()
    }
    write_eval_csv(tables, out / EVAL_NAME)
    shift_hold = {
        name: shift_hold_per_snr(model, test, bank, cfg.eval.snr_list, seed=cfg.seed)
        for name, model in models.items()
    }
    write_eval_csv(shift_hold, out / SHIFT_HOLD_NAME, value="accuracy")
    logger.info("(SUCCESS) Wrote %s and %s with columns %s", EVAL_NAME, SHIFT_HOLD_NAME, ", ".join(tables))
    return tables


def run(args: argparse.Namespace) -> int:
    cmd_eval(resolve_config(args, FLAG_PATHS))
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("eval", parents=parents, help="Per-SNR test loss table")
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--noise-dir", dest="noise_dir")
    parser.add_argument("--checkpoints", nargs="+")
    parser.add_argument("--snr", dest="snr_list", nargs="+", type=float)
    parser.add_argument("--uniform-baseline", dest="uniform_baseline", action="store_true", default=None)
    parser.set_defaults(handler=run)
