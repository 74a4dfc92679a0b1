import datetime

from sqlalchemy import JSON, Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import relationship

from .base import Base


def _utcnow():
    return datetime.datetime.now(datetime.timezone.utc)


class ExperimentRun(Base):
    """
    One persisted experiment record.
    """
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=_utcnow)
    kind = Column(String, nullable=False, index=True)
    output_dir = Column(String, nullable=False)
    master_seed = Column(Integer, nullable=False)
    software_version = Column(String)
    n_curves = Column(Integer, default=0)
    n_estimates = Column(Integer, default=0)
    n_failures = Column(Integer, default=0)
    status = Column(String, default="complete")
    wall_seconds = Column(Float, nullable=True)
    config_json = Column(JSON, nullable=False)

    curves = relationship("RunCurve", back_populates="run", cascade="all, delete-orphan")


class RunCurve(Base):
    """
    Summary row for one averaged spreading curve of a run.
    """
    __tablename__ = "run_curves"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False)

    label = Column(String, nullable=False)
    mode = Column(String, nullable=False)
    s0 = Column(Float, nullable=False)
    fdot = Column(Float, nullable=True)
    eps = Column(Float, nullable=False)
    n_realizations = Column(Integer, nullable=False)
    final_variance = Column(Float)

    run = relationship("ExperimentRun", back_populates="curves")
