from typing import Sequence

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from app.models import SimulationPolicy, SimulationRunModel


class SimulationRunRepository:
    session: AsyncSession

    def __init__(self, *, session: AsyncSession):
        self.session = session

    async def create_run(
            self,
            *,
            policy: SimulationPolicy,
            n_dialogues: int,
            seed: int,
            label: str | None = None,
            config_json: str = "{}",
    ) -> SimulationRunModel:
        new_run = SimulationRunModel(
            policy=policy,
            n_dialogues=n_dialogues,
            seed=seed,
            label=label,
            config_json=config_json,
        )

        self.session.add(new_run)
        await self.session.flush()
        await self.session.refresh(new_run)

        return new_run

    async def get_by_id(self, *, run_id: int) -> SimulationRunModel | None:
        return await self.session.get(SimulationRunModel, run_id)

    async def list_runs(self, *, policy: SimulationPolicy | None = None) -> Sequence[SimulationRunModel]:
        statement = select(SimulationRunModel).order_by(SimulationRunModel.id)
        if policy is not None:
            statement = statement.where(SimulationRunModel.policy == policy)
        result = await self.session.execute(statement)
        return result.scalars().all()
