import argparse
import json
import logging
import os

import numpy as np
import torch
from dotenv import load_dotenv
from pydantic import BaseModel

from app.audio import SAMPLE_RATE, Waveform
from app.commands.dependencies import prepare_out_dir, resolve_config
from app.dialogue import generate_dialogue
from app.model import VapModel, load_checkpoint
from app.schemas import RunConfig
from app.streaming import StreamContext, real_time_factor, stream_waveform


load_dotenv()

logger = logging.getLogger(__name__)

rtf_limit = float(os.getenv("VAP_RTF_LIMIT", "1.0"))

FLAG_PATHS = {
    "out_dir": "out_dir",
    "checkpoint": "checkpoint",
    "bench_seconds": "stream.bench_seconds",
    "seed": "seed",
}


class BenchReport(BaseModel):
    n_frames: int
    mean_compute_ms: float
    p95_compute_ms: float
    real_time_factor: float
    rtf_limit: float

    @property
    def passed(self) -> bool:
        return self.real_time_factor < self.rtf_limit


def cmd_bench(cfg: RunConfig, limit: float | None = None) -> BenchReport:
    if cfg.checkpoint:
        model = load_checkpoint(cfg.checkpoint)
    else:
        torch.manual_seed(cfg.model.seed)
        model = VapModel(cfg.model)
    out = prepare_out_dir(cfg)

    dialogue = generate_dialogue(cfg.script.model_copy(update={"seed": cfg.seed}))
    n_samples = int(cfg.stream.bench_seconds * SAMPLE_RATE)
    # the generated dialogue can be shorter than the bench; loop it
    user = np.resize(dialogue.channel_a.samples, n_samples) if len(dialogue.channel_a) else np.zeros(n_samples)
    results = stream_waveform(StreamContext(model), Waveform(user))
    timings = np.array([result.compute_ms for result in results])
    report = BenchReport(
        n_frames=len(results),
        mean_compute_ms=float(np.mean(timings)) if timings.size else 0.0,
        p95_compute_ms=float(np.percentile(timings, 95)) if timings.size else 0.0,
        real_time_factor=real_time_factor(results),
        rtf_limit=rtf_limit if limit is None else limit,
    )
    (out / "bench.json").write_text(json.dumps(report.model_dump(), indent=2) + "\n", encoding="utf-8")
    logger.info(
        "Bench: %d frames, mean %.2f ms, p95 %.2f ms, RTF %.3f (limit %.2f)",
        report.n_frames, report.mean_compute_ms, report.p95_compute_ms, report.real_time_factor, report.rtf_limit,
    )
    return report


def run(args: argparse.Namespace) -> int:
    report = cmd_bench(resolve_config(args, FLAG_PATHS))
    if not report.passed:
        logger.error("Real-time factor %.3f exceeds limit %.2f", report.real_time_factor, report.rtf_limit)
        return 1
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("bench", parents=parents, help="Per-tick latency benchmark")
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--seconds", dest="bench_seconds", type=float)
    parser.set_defaults(handler=run)
