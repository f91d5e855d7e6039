"""SQLite results sink: one TrialRecord per trial, one TaskOutcome per task."""
import logging
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import sessionmaker

from models.results import Base, TaskOutcome, TrialRecord

logger = logging.getLogger(__name__)

DB_NAME = "results.db"


def _session_factory(db_path):
    engine = create_engine(f"sqlite:///{Path(db_path)}")
    Base.metadata.create_all(engine)
    return engine, sessionmaker(bind=engine)


def setup_database(db_path=DB_NAME):
    engine, _ = _session_factory(db_path)
    engine.dispose()
    logger.info(f"Results database ready at {db_path}")


def store_trial_results(db_path, results, run_name):
    """Persist TrialResult objects; returns {'success': bool, 'message': str}."""
    engine, Session = _session_factory(db_path)
    session = Session()
    try:
        for result in results:
            record = TrialRecord(
                run_name=run_name,
                trial_index=result.trial_index,
                seed=result.seed,
                mode=result.mode,
                memory=result.memory,
                model=result.model,
                valid=result.valid,
                invalid_reason=result.invalid_reason,
            )
            for position, task in enumerate(result.tasks.values()):
                record.outcomes.append(TaskOutcome(
                    position=position,
                    task=task.task,
                    success=task.success,
                    task_retention=task.task_retention,
                    env_retention=task.env_retention,
                    failure_reasons=",".join(task.failure_reasons),
                    transcript_path=task.transcript_path,
                ))
            session.add(record)

        session.commit()
        return {'success': True, 'message': f'{len(results)} trials stored for {run_name}'}

    except SQLAlchemyError as e:
        session.rollback()
        logger.error(f"Could not store trials for {run_name}: {e}")
        return {'success': False, 'message': str(e)}
    finally:
        session.close()
        engine.dispose()


def load_trial_results(db_path):
    """All stored trials as plain dicts, in insertion order."""
    db_path = Path(db_path)
    if not db_path.exists():
        raise FileNotFoundError(f"No results database at {db_path}")

    engine, Session = _session_factory(db_path)
    session = Session()
    try:
        records = session.query(TrialRecord).order_by(TrialRecord.id).all()
        return [r.to_dict() for r in records]
    finally:
        session.close()
        engine.dispose()


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    setup_database()
