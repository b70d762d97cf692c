import argparse
import asyncio
import itertools
import logging
from pathlib import Path

from app.audio import StereoDialogue
from app.commands.dependencies import prepare_out_dir, resolve_config, simulation_bank
from app.database import engine, init_db
from app.endpointing import write_turn_events
from app.model import load_checkpoint
from app.noise import ConditionRecord, write_condition_manifest
from app.schemas import Condition, GroupComparison, ResponseTimeRecord, RunConfig, SessionStats
from app.services import ResultsService
from app.simulation import (
    FramePredictor,
    ModelPredictor,
    OraclePredictor,
    PolicyError,
    compare_policies,
    deployment_corpus,
    run_policies,
    summarize,
    turn_event,
    vap_decided,
    write_histogram_csv,
    write_records_csv,
    write_records_jsonl,
    write_stats_json,
)
from app.utils.stats import describe


logger = logging.getLogger(__name__)

SIMULATION_SEED_OFFSET = 10_000

FLAG_PATHS = {
    "out_dir": "out_dir",
    "checkpoint": "checkpoint",
    "policies": "simulation.policies",
    "n_dialogues": "simulation.n_dialogues",
    "predictor": "simulation.predictor",
    "store": "simulation.store_results",
    "seed": "simulation.seed",
}

Results = dict[str, list[tuple[int, ResponseTimeRecord]]]


def build_predictor(cfg: RunConfig) -> FramePredictor | None:
    if all(policy == "stt" for policy in cfg.simulation.policies):
        return None
    if cfg.simulation.predictor == "oracle":
        return OraclePredictor(
            miss_rate=cfg.simulation.oracle_miss_rate,
            delay_s=cfg.simulation.oracle_delay_s,
            seed=cfg.simulation.seed,
        )
    if cfg.checkpoint is None:
        raise PolicyError("VAP policies need --checkpoint (or --predictor oracle)")
    return ModelPredictor(load_checkpoint(cfg.checkpoint))


def simulation_dialogues(cfg: RunConfig) -> tuple[list[StereoDialogue], list[Condition]]:
    base = cfg.script.seed + SIMULATION_SEED_OFFSET + cfg.simulation.seed
    return deployment_corpus(
        cfg.script.model_copy(update={"seed": base}),
        cfg.simulation.n_dialogues,
        bank=simulation_bank(cfg),
        snr_set=cfg.simulation.noise_snr_set,
        clean_prob=cfg.simulation.noise_clean_prob,
        seed=cfg.simulation.seed,
    )


async def store_results(cfg: RunConfig, results: Results) -> dict[str, int]:
    await init_db()
    service = ResultsService()
    try:
        return {
            policy: await service.store_session(
                policy=policy,
                records=records,
                n_dialogues=cfg.simulation.n_dialogues,
                seed=cfg.simulation.seed,
                label=Path(cfg.out_dir).name,
                config=cfg.model_dump(mode="json"),
            )
            for policy, records in results.items()
        }
    finally:
        await engine.dispose()


def cmd_simulate(cfg: RunConfig) -> tuple[dict[str, SessionStats], dict[str, GroupComparison]]:
    predictor = build_predictor(cfg)
    out = prepare_out_dir(cfg)
    dialogues, conditions = simulation_dialogues(cfg)
    write_condition_manifest(
        [
            ConditionRecord(item_id=str(index), noise_name=condition.noise_name, snr_db=condition.snr_db,
                            seed=cfg.simulation.seed)
            for index, condition in enumerate(conditions)
        ],
        out / "conditions.jsonl",
    )
    results = run_policies(
        dialogues,
        cfg.simulation.policies,
        predictor=predictor,
        vap_cfg=cfg.vap,
        stt_cfg=cfg.stt,
        response_delay_s=cfg.simulation.response_delay_s,
    )

    stats, comparisons, subsets = {}, {}, {}
    for policy, records in results.items():
        if not records:
            logger.warning("Policy %s produced no records", policy)
            continue
        stats[policy] = summarize([record for _, record in records])
        write_histogram_csv(stats[policy].robot_histogram, out / f"hist_robot_{policy}.csv")
        write_histogram_csv(stats[policy].user_histogram, out / f"hist_user_{policy}.csv")
        logger.info(
            "%s: robot mean %.3f s (n=%d), VAP share %.2f",
            policy, stats[policy].robot.mean, stats[policy].robot.count, stats[policy].vap_source_fraction,
        )
    if decided := vap_decided([record for _, record in results.get("hybrid", [])]):
        subsets["hybrid_vap_decided"] = describe([record.robot_response_s for record in decided])
    for a, b in itertools.combinations(stats, 2):
        if min(stats[a].robot.count, stats[b].robot.count) < 2:
            logger.warning("Skipping %s vs %s: fewer than two records", a, b)
            continue
        comparisons[f"{a}_vs_{b}"] = compare_policies(
            [record for _, record in results[a]], [record for _, record in results[b]]
        )

    write_records_jsonl(results, out / "records.jsonl")
    write_records_csv(results, out / "records.csv")
    rows = [(policy, dialogue_id, record) for policy, records in results.items() for dialogue_id, record in records]
    write_turn_events(
        [turn_event(record) for _, _, record in rows],
        out / "turn_events.jsonl",
        labels=[{"policy": policy, "dialogue_id": dialogue_id} for policy, dialogue_id, _ in rows],
    )
    write_stats_json(stats, comparisons, out / "stats.json", subsets=subsets)
    if cfg.simulation.store_results:
        run_ids = asyncio.run(store_results(cfg, results))
        logger.info("(SUCCESS) Stored runs %s", run_ids)
    return stats, comparisons


def run(args: argparse.Namespace) -> int:
    cmd_simulate(resolve_config(args, FLAG_PATHS))
    return 0


def add_parser(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser("simulate", parents=parents, help="Simulate robot/user response times")
    parser.add_argument("--out", dest="out_dir")
    parser.add_argument("--policies", nargs="+", choices=("stt", "vap", "hybrid"))
    parser.add_argument("--n-dialogues", dest="n_dialogues", type=int)
    parser.add_argument("--predictor", choices=("model", "oracle"))
    parser.add_argument("--store", action="store_true", default=None, help="Also persist records to the results database")
    parser.set_defaults(handler=run)
