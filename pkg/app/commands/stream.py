import argparse
import logging
import sys
from typing import TextIO

from app.audio import SAMPLE_RATE, load_wav
from app.commands.dependencies import ConfigError, prepare_out_dir, resolve_config
from app.model import load_checkpoint
from app.schemas import FrameResult, RunConfig
from app.streaming import StreamContext, iter_stream, real_time_factor


logger = logging.getLogger(__name__)

FLAG_PATHS = {
    "out_dir": "out_dir",
    "checkpoint": "checkpoint",
    "input_wav": "stream.input_wav",
    "robot_wav": "stream.robot_wav",
    "realtime": "stream.realtime",
    "chunk_ms": "stream.chunk_ms",
}


def cmd_stream(cfg: RunConfig, output: TextIO | None = None) -> list[FrameResult]:
    """Replay a WAV as live audio, one JSON line per 100 ms tick on ``output`` (stdout by default)."""
    output = output or sys.stdout
    if cfg.stream.input_wav is None:
        raise ConfigError("stream needs --input")
    if cfg.checkpoint is None:
        raise ConfigError("stream needs --checkpoint")
    model = load_checkpoint(cfg.checkpoint)
    user = load_wav(cfg.stream.input_wav)
    robot = load_wav(cfg.stream.robot_wav) if cfg.stream.robot_wav else None
    prepare_out_dir(cfg)

    ctx = StreamContext(model)
    chunk_samples = max(1, int(round(cfg.stream.chunk_ms * SAMPLE_RATE / 1000.0)))
    results = []
    for result in iter_stream(ctx, user, robot, chunk_samples=chunk_samples, realtime=cfg.stream.realtime):
        output.write(result.model_dump_json() + "\n")
        output.flush()
        results.append(result)
    logger.info("(SUCCESS) %d frames, real-time factor %.3f", len(results), real_time_factor(results))
    return results


def run(args: argparse.Namespace) -> int:
    cmd_stream(resolve_config(args, FLAG_PATHS))
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("stream", parents=parents, help="Replay a WAV through the streaming engine")
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--input", dest="input_wav")
    parser.add_argument("--robot", dest="robot_wav")
    parser.add_argument("--realtime", action="store_true", default=None)
    parser.add_argument("--chunk-ms", dest="chunk_ms", type=float)
    parser.set_defaults(handler=run)
