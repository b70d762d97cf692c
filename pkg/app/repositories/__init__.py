from app.repositories.run import SimulationRunRepository
from app.repositories.record import ResponseRecordRepository

__all__ = [
    "SimulationRunRepository",
    "ResponseRecordRepository",
]
