from contextlib import asynccontextmanager
from typing import AsyncGenerator

from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker

from app.database import AsyncSessionLocal
from app.repositories import ResponseRecordRepository, SimulationRunRepository


@asynccontextmanager
async def get_session(
        session_factory: async_sessionmaker[AsyncSession] = AsyncSessionLocal,
) -> AsyncGenerator[AsyncSession, None]:
    """One transaction: committed on clean exit, rolled back on error."""
    async with session_factory() as session:
        async with session.begin():
            yield session


def get_run_repository(session: AsyncSession) -> SimulationRunRepository:
    return SimulationRunRepository(session=session)


def get_record_repository(session: AsyncSession) -> ResponseRecordRepository:
    return ResponseRecordRepository(session=session)
