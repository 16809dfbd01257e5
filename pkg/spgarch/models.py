from datetime import datetime
from enum import Enum
from typing import Optional

from sqlmodel import Field, SQLModel


class RunStatus(str, Enum):
    ok = "ok"
    failed = "failed"


class RunLog(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    command: str
    model: Optional[str] = None
    seed: int
    out_dir: Optional[str] = None
    data_sha256: Optional[str] = None
    status: RunStatus = Field(default=RunStatus.ok)
    exit_code: int = 0
    message: Optional[str] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)


class ReplicationLog(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[int] = Field(default=None, foreign_key="runlog.id")
    dgp: int
    replication: int
    model: Optional[str] = None
    loss_in_p1: Optional[float] = None
    loss_in_p2: Optional[float] = None
    forecast: Optional[float] = None
    truth: Optional[float] = None
    knot_mode: Optional[int] = None
    failed: bool = False
    message: Optional[str] = None
    created_at: datetime = Field(default_factory=datetime.utcnow)
