"""Run ledger models."""
from sqlalchemy import Column, Integer, String, DateTime, JSON
from sqlalchemy.sql import func
from app.database import Base
import enum


class RunStatus(str, enum.Enum):
    """Run status enum."""
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"


class RunRecord(Base):
    """One executed scenario (or storage archive operation)."""
    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(80), unique=True, nullable=False, index=True)

    scenario_name = Column(String(120), nullable=False)
    # SHA-256 over the bytes of every file the scenario loaded
    scenario_hash = Column(String(64), nullable=False, index=True)

    command = Column(String(40), nullable=False)  # run, compare, store-write, store-read
    policy = Column(String(20))
    seed = Column(Integer)

    status = Column(String(20), default=RunStatus.RUNNING.value)
    error = Column(String(500))

    # {"trace": ".../trace.csv", "utilization": ..., "manifest": ...}
    artifacts = Column(JSON)

    started_at = Column(DateTime(timezone=True), server_default=func.now())
    finished_at = Column(DateTime(timezone=True))

    def __repr__(self):
        return f"<RunRecord {self.run_id} {self.status}>"
