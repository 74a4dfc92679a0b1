import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.exc import OperationalError
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool
from tenacity import (before_sleep_log, retry, retry_if_exception_type,
                      stop_after_attempt, wait_exponential)

from .base import Base
from .config import db_config

# Setup logging
logger = logging.getLogger(__name__)

_engines = {}


def make_engine(url: Optional[str] = None) -> Engine:
    """Engine for the registry URL; one engine per URL per process."""
    url = url or db_config.URL
    if url not in _engines:
        options = {}
        if url.startswith("sqlite"):
            options["connect_args"] = {"check_same_thread": False}
        if url in ("sqlite://", "sqlite:///:memory:"):
            # in-memory databases live on one shared connection
            options["poolclass"] = StaticPool
        _engines[url] = create_engine(url, echo=db_config.ECHO, **options)
    return _engines[url]


@retry(
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=1, min=1, max=4),
    retry=retry_if_exception_type(OperationalError),
    before_sleep=before_sleep_log(logger, logging.WARNING),
    reraise=True,
)
def init_db(engine: Optional[Engine] = None) -> Engine:
    """
    Create the registry tables if they do not exist.
    Retries on transient connection failures (e.g. a locked SQLite file).
    """
    engine = engine or make_engine()
    try:
        logger.info(f"Initializing run registry at {engine.url}")
        Base.metadata.create_all(bind=engine)
    except Exception as e:
        logger.error(f"Failed to initialize run registry: {str(e)}", exc_info=True)
        raise
    return engine


@contextmanager
def get_db(engine: Optional[Engine] = None) -> Iterator[Session]:
    """
    Session bound to the registry engine; rolled back on error and always closed.
    """
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine or make_engine())
    db = SessionLocal()
    try:
        yield db
    except Exception as e:
        logger.error(f"Registry session error: {str(e)}", exc_info=True)
        db.rollback()
        raise
    finally:
        db.close()
        logger.debug("Registry session closed")


def check_database_health(engine: Optional[Engine] = None) -> bool:
    """Check if the registry connection is healthy."""
    try:
        with (engine or make_engine()).connect() as conn:
            conn.execute(text("SELECT 1"))
        return True
    except Exception as e:
        logger.error(f"Registry health check failed: {str(e)}")
        return False
