from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from database import Base


def _now():
    return datetime.now(timezone.utc)


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    command = Column(String, nullable=False, index=True)
    parameters = Column(Text, nullable=False)  # JSON
    run_dir = Column(String, nullable=False)
    tool_version = Column(String)
    status = Column(String, default="ok")
    created_at = Column(DateTime(timezone=True), default=_now)
    outputs = relationship("RunOutput", back_populates="run", cascade="all, delete")


class RunOutput(Base):
    __tablename__ = "run_outputs"

    id = Column(Integer, primary_key=True, index=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id"))
    name = Column(String, nullable=False)
    sha256 = Column(String(64), nullable=False)
    run = relationship("RunRecord", back_populates="outputs")
