import os
from pathlib import Path

from dotenv import load_dotenv
from sqlalchemy.ext.asyncio import AsyncEngine, AsyncSession, async_sessionmaker, create_async_engine

from app.models import DbModel

load_dotenv()

RUN_DIR = os.getenv("VAP_RUN_DIR", "runs")
database_url = os.getenv("RESULTS_DATABASE_URL", f"sqlite+aiosqlite:///{Path(RUN_DIR) / 'results.db'}")
sql_echo = os.getenv("VAP_SQL_ECHO", "false").lower() in ("1", "true", "yes")


def normalize_url(url: str) -> str:
    if url.startswith("sqlite") and "aiosqlite" not in url:
        return url.replace("sqlite", "sqlite+aiosqlite", 1)
    return url


def make_engine(url: str = database_url, *, echo: bool = sql_echo) -> AsyncEngine:
    return create_async_engine(normalize_url(url), echo=echo)


def make_session_factory(bind: AsyncEngine) -> async_sessionmaker[AsyncSession]:
    return async_sessionmaker(bind=bind, class_=AsyncSession, expire_on_commit=False)


engine = make_engine()

AsyncSessionLocal = make_session_factory(engine)


async def init_db(bind: AsyncEngine = engine) -> None:
    # a file-backed SQLite database needs its directory before the first connect
    if bind.url.get_backend_name() == "sqlite" and bind.url.database not in (None, "", ":memory:"):
        Path(bind.url.database).parent.mkdir(parents=True, exist_ok=True)
    async with bind.begin() as conn:
        await conn.run_sync(DbModel.metadata.create_all)
