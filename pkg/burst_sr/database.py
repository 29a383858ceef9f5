"""Run registry schema and connection management."""
import logging
import os
import uuid
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

from burst_sr.config import get_config

logger = logging.getLogger(__name__)

Base = declarative_base()


class Run(Base):
    """One CLI command invocation."""
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(50), unique=True, nullable=False, index=True)
    command = Column(String(20), nullable=False, index=True)  # simulate, sr, train, evaluate
    seed = Column(Integer)
    config_hash = Column(String(64))
    manifest_path = Column(String(500))
    output_dir = Column(String(500))
    wall_time = Column(Float)  # seconds
    exit_code = Column(Integer, default=0)
    created_at = Column(DateTime, default=datetime.utcnow, index=True)

    metrics = relationship("Metric", back_populates="run")


class Metric(Base):
    """Named scalar result of a run."""
    __tablename__ = 'metrics'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String(50), ForeignKey('runs.run_id'), nullable=False, index=True)
    name = Column(String(100), nullable=False)
    value = Column(Float)

    run = relationship("Run", back_populates="metrics")


def get_database_path(db_path=None):
    """Get the database file path."""
    if db_path is None:
        db_path = get_config()['runtime']['database']
        if not os.path.isabs(db_path):
            db_path = os.path.join(os.path.dirname(__file__), '..', db_path)
    db_dir = os.path.dirname(db_path)
    if db_dir:
        os.makedirs(db_dir, exist_ok=True)
    return db_path


def create_database(db_path=None):
    """Create database and tables."""
    engine = create_engine(f'sqlite:///{get_database_path(db_path)}', echo=False)
    Base.metadata.create_all(engine)
    return engine


def get_session(db_path=None):
    """Get database session."""
    engine = create_database(db_path)
    Session = sessionmaker(bind=engine)
    return Session()


def register_run(manifest, metrics=None, db_path=None, exit_code=0):
    """Record a finished run and its metrics. Returns the run id, or None on failure.

    Failures are logged; the registry never decides whether a command succeeded.
    """
    try:
        session = get_session(db_path)
    except Exception as e:
        logger.warning("Run registry unavailable: %s", e)
        return None

    try:
        run_id = str(uuid.uuid4())
        run = Run(
            run_id=run_id,
            command=manifest.get('command'),
            seed=manifest.get('seed'),
            config_hash=manifest.get('config_hash'),
            manifest_path=manifest.get('manifest_path'),
            output_dir=manifest.get('output_dir'),
            wall_time=manifest.get('wall_time'),
            exit_code=exit_code,
        )
        session.add(run)
        for name, value in sorted((metrics or {}).items()):
            session.add(Metric(run_id=run_id, name=name, value=float(value)))
        session.commit()
        logger.debug("Registered run %s (%s)", run_id, run.command)
        return run_id
    except Exception as e:
        session.rollback()
        logger.warning("Could not register run: %s", e)
        return None
    finally:
        session.close()


def run_metrics(run_id, db_path=None):
    """Metrics of one run as a name → value dict."""
    session = get_session(db_path)
    try:
        rows = session.query(Metric).filter(Metric.run_id == run_id).all()
        return {row.name: row.value for row in rows}
    finally:
        session.close()


def recent_runs(limit=20, db_path=None):
    """Most recent runs, newest first."""
    session = get_session(db_path)
    try:
        runs = session.query(Run).order_by(Run.created_at.desc(), Run.id.desc()).limit(limit).all()
        return [{
            'run_id': r.run_id,
            'command': r.command,
            'seed': r.seed,
            'exit_code': r.exit_code,
            'wall_time': r.wall_time,
            'output_dir': r.output_dir,
            'created_at': r.created_at.strftime('%Y-%m-%d %H:%M:%S'),
        } for r in runs]
    finally:
        session.close()
