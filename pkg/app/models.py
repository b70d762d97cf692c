import enum
from datetime import datetime

from sqlalchemy import Enum as SqlEnum
from sqlalchemy import DateTime, Float, ForeignKey, Integer, String, Text, func
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship

from app.schemas import TurnSource


class DbModel(DeclarativeBase):
    pass


#------------------------ SIMULATION RUN

class SimulationPolicy(str, enum.Enum):
    STT = "stt"
    VAP = "vap"
    HYBRID = "hybrid"


class SimulationRunModel(DbModel):
    __tablename__ = "simulation_runs"

    id: Mapped[int] = mapped_column(primary_key=True)
    policy: Mapped[SimulationPolicy] = mapped_column(SqlEnum(SimulationPolicy), nullable=False, index=True)
    n_dialogues: Mapped[int] = mapped_column(Integer, nullable=False)
    seed: Mapped[int] = mapped_column(Integer, nullable=False)
    label: Mapped[str | None] = mapped_column(String(length=100), nullable=True)
    config_json: Mapped[str] = mapped_column(Text, nullable=False, default="{}")
    created_at: Mapped[datetime] = mapped_column(DateTime(timezone=True), nullable=False, server_default=func.now())

    records: Mapped[list["ResponseRecordModel"]] = relationship(
        back_populates="run",
        cascade="all, delete-orphan",
    )

    def __repr__(self) -> str:
        return f"SimulationRunModel(id={self.id!r}, policy={self.policy!r}, n_dialogues={self.n_dialogues!r})"


#------------------------ RESPONSE RECORD

class ResponseRecordModel(DbModel):
    __tablename__ = "response_records"

    id: Mapped[int] = mapped_column(primary_key=True)
    run_id: Mapped[int] = mapped_column(
        ForeignKey("simulation_runs.id", ondelete="CASCADE"),
        nullable=False,
        index=True,
    )
    dialogue_id: Mapped[int] = mapped_column(Integer, nullable=False)
    turn_id: Mapped[int] = mapped_column(Integer, nullable=False)
    source: Mapped[TurnSource] = mapped_column(SqlEnum(TurnSource), nullable=False, index=True)
    robot_response_s: Mapped[float] = mapped_column(Float, nullable=False)
    user_response_s: Mapped[float | None] = mapped_column(Float, nullable=True)
    decision_time_s: Mapped[float] = mapped_column(Float, nullable=False)
    true_end_time_s: Mapped[float] = mapped_column(Float, nullable=False)
    stt_decision_time_s: Mapped[float] = mapped_column(Float, nullable=False)
    premature: Mapped[bool] = mapped_column(nullable=False, default=False)

    run: Mapped["SimulationRunModel"] = relationship(back_populates="records")

    def __repr__(self) -> str:
        return (
            f"ResponseRecordModel(id={self.id!r}, run_id={self.run_id!r}, "
            f"turn_id={self.turn_id!r}, source={self.source!r})"
        )
