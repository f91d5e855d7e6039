from sqlalchemy import Boolean, Column, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class TrialRecord(Base):
    __tablename__ = 'trial'
    id = Column(Integer, primary_key=True)
    run_name = Column(String, nullable=False)
    trial_index = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    mode = Column(String, nullable=False)
    memory = Column(Boolean, nullable=False)
    model = Column(String, nullable=False)
    valid = Column(Boolean, nullable=False, default=True)
    invalid_reason = Column(Text)

    outcomes = relationship('TaskOutcome', backref='trial', lazy=True, cascade="all, delete-orphan",
                            order_by='TaskOutcome.position')

    def __repr__(self):
        return f'<TrialRecord {self.run_name}#{self.trial_index}>'

    def to_dict(self):
        return {
            'trial_index': self.trial_index,
            'seed': self.seed,
            'mode': self.mode,
            'memory': self.memory,
            'model': self.model,
            'valid': self.valid,
            'invalid_reason': self.invalid_reason,
            'tasks': [o.to_dict() for o in self.outcomes],
        }


class TaskOutcome(Base):
    __tablename__ = 'task_outcome'
    id = Column(Integer, primary_key=True)
    position = Column(Integer, nullable=False)
    task = Column(String, nullable=False)
    success = Column(Boolean, nullable=False)
    task_retention = Column(Float, nullable=False)
    env_retention = Column(Float, nullable=False)
    failure_reasons = Column(Text, nullable=False, default='')
    transcript_path = Column(String)

    trial_id = Column(Integer, ForeignKey('trial.id'), nullable=False)

    def to_dict(self):
        return {
            'task': self.task,
            'success': self.success,
            'task_retention': self.task_retention,
            'env_retention': self.env_retention,
            'failure_reasons': [r for r in self.failure_reasons.split(',') if r],
            'transcript_path': self.transcript_path,
        }
