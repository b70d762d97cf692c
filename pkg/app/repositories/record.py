from typing import Sequence

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from app.models import ResponseRecordModel
from app.schemas import ResponseTimeRecord, TurnSource


class ResponseRecordRepository:
    session: AsyncSession

    def __init__(self, *, session: AsyncSession):
        self.session = session

    async def add_records(
            self,
            *,
            run_id: int,
            records: Sequence[tuple[int, ResponseTimeRecord]],
    ) -> list[ResponseRecordModel]:
        """``records`` are (dialogue_id, record) pairs as produced by the simulator."""
        rows = [
            ResponseRecordModel(run_id=run_id, dialogue_id=dialogue_id, **record.model_dump())
            for dialogue_id, record in records
        ]
        self.session.add_all(rows)
        await self.session.flush()
        return rows

    async def get_by_run(self, *, run_id: int) -> Sequence[ResponseRecordModel]:
        statement = (
            select(ResponseRecordModel)
            .where(ResponseRecordModel.run_id == run_id)
            .order_by(ResponseRecordModel.dialogue_id, ResponseRecordModel.turn_id)
        )
        result = await self.session.execute(statement)
        return result.scalars().all()

    async def get_by_source(self, *, run_id: int, source: TurnSource) -> Sequence[ResponseRecordModel]:
        statement = (
            select(ResponseRecordModel)
            .where(ResponseRecordModel.run_id == run_id, ResponseRecordModel.source == source)
            .order_by(ResponseRecordModel.dialogue_id, ResponseRecordModel.turn_id)
        )
        result = await self.session.execute(statement)
        return result.scalars().all()
