import pytest
import pytest_asyncio
from collections.abc import AsyncGenerator

import numpy as np
import torch
from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.pool import NullPool

from app.audio import StereoDialogue
from app.dialogue import generate_dialogue
from app.model import VapModel
from app.models import DbModel
from app.noise import NoiseBank, synthetic_noise_bank
from app.schemas import DialogueScript, ModelConfig

# File database with NullPool: every connection sees the same tables
TEST_DATABASE_URL = "sqlite+aiosqlite:///./test.db"


# ------------------ DATABASE ------------------ #

@pytest_asyncio.fixture(scope="function")
async def session_factory() -> AsyncGenerator[async_sessionmaker[AsyncSession], None]:
    engine = create_async_engine(TEST_DATABASE_URL, poolclass=NullPool)

    async with engine.begin() as conn:
        await conn.run_sync(DbModel.metadata.drop_all)
        await conn.run_sync(DbModel.metadata.create_all)

    yield async_sessionmaker(bind=engine, class_=AsyncSession, expire_on_commit=False)

    await engine.dispose()


@pytest_asyncio.fixture(scope="function")
async def session(session_factory: async_sessionmaker[AsyncSession]) -> AsyncGenerator[AsyncSession, None]:
    async with session_factory() as session:
        yield session
        await session.rollback()


# ------------------ AUDIO & MODEL ------------------ #

@pytest.fixture(scope="session")
def noise_bank() -> NoiseBank:
    return synthetic_noise_bank(seed=0, duration_s=2.0)


@pytest.fixture(scope="session")
def short_script() -> DialogueScript:
    return DialogueScript(n_turns=3, seed=7)


@pytest.fixture(scope="session")
def dialogue(short_script: DialogueScript) -> StereoDialogue:
    return generate_dialogue(short_script)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(model_dim=16, heads=2, ff_mult=2, seed=3)


@pytest.fixture
def tiny_model(tiny_cfg: ModelConfig) -> VapModel:
    torch.manual_seed(tiny_cfg.seed)
    model = VapModel(tiny_cfg)
    model.eval()
    return model
