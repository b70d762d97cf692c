import json
import logging
from typing import Sequence

from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker

from app.database import AsyncSessionLocal
from app.injections import get_record_repository, get_run_repository, get_session
from app.models import SimulationPolicy
from app.schemas import ResponseTimeRecord


logger = logging.getLogger(__name__)


class ResultsService:
    """Stores simulated sessions so runs can be compared after the fact."""

    def __init__(self, *, session_factory: async_sessionmaker[AsyncSession] = AsyncSessionLocal):
        self.session_factory = session_factory

    async def store_session(
            self,
            *,
            policy: str,
            records: Sequence[tuple[int, ResponseTimeRecord]],
            n_dialogues: int,
            seed: int,
            label: str | None = None,
            config: dict | None = None,
    ) -> int:
        try:
            policy_enum = SimulationPolicy(policy)
        except ValueError:
            raise ValueError(f"Service Warning: Unknown policy {policy!r}") from None

        async with get_session(self.session_factory) as session:
            run = await get_run_repository(session).create_run(
                policy=policy_enum,
                n_dialogues=n_dialogues,
                seed=seed,
                label=label,
                config_json=json.dumps(config or {}, sort_keys=True),
            )
            await get_record_repository(session).add_records(run_id=run.id, records=records)
            run_id = run.id
        logger.info("(SUCCESS) Stored %d %s records as run %d", len(records), policy, run_id)
        return run_id

    async def load_records(self, *, run_id: int) -> list[tuple[int, ResponseTimeRecord]]:
        async with get_session(self.session_factory) as session:
            run = await get_run_repository(session).get_by_id(run_id=run_id)
            if run is None:
                raise ValueError(f"Service Warning: Simulation run {run_id} not found")
            rows = await get_record_repository(session).get_by_run(run_id=run_id)
            return [(row.dialogue_id, ResponseTimeRecord.model_validate(row)) for row in rows]
