from typing import Optional

from sqlalchemy.orm import Session

from . import models
from .schemas import ExperimentRecord

# --- CRUD Operations for experiment runs ---

def get_run(db: Session, run_id: int) -> Optional[models.ExperimentRun]:
    """
    Reads a single run from the registry by its ID.
    """
    return db.query(models.ExperimentRun).filter(models.ExperimentRun.id == run_id).first()

def get_runs(db: Session, kind: Optional[str] = None, skip: int = 0, limit: int = 100):
    """
    Lists runs, newest first, optionally restricted to one experiment kind.
    """
    query = db.query(models.ExperimentRun)
    if kind is not None:
        query = query.filter(models.ExperimentRun.kind == kind)
    return query.order_by(models.ExperimentRun.id.desc()).offset(skip).limit(limit).all()

def create_run(db: Session, record: ExperimentRecord, output_dir: str) -> models.ExperimentRun:
    """
    Indexes a saved record together with one summary row per curve.
    """
    db_run = models.ExperimentRun(
        kind=record.kind,
        output_dir=str(output_dir),
        master_seed=record.config.master_seed,
        software_version=record.software_version,
        n_curves=len(record.curves),
        n_estimates=len(record.estimates),
        n_failures=len(record.failures),
        status=record.status,
        wall_seconds=record.wall_seconds,
        config_json=record.config.model_dump(mode="json"),
    )
    for curve in record.curves:
        db_run.curves.append(models.RunCurve(
            label=curve.label,
            mode=curve.mode,
            s0=curve.params.s0,
            fdot=curve.params.fdot,
            eps=curve.params.eps,
            n_realizations=curve.n_realizations,
            final_variance=curve.variance[-1] if curve.variance else None,
        ))
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run
