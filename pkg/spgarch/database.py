from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Iterator

from sqlmodel import Session, SQLModel, create_engine

from spgarch import models  # noqa: F401  (registers the tables)


def get_database_url() -> str:
    return os.getenv("DATABASE_URL", "sqlite:///./spgarch.db")


def create_app_engine(url: str):
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, echo=False, connect_args=connect_args)


_engines: dict[str, object] = {}


def get_engine():
    """Engine for the current DATABASE_URL, created on first use."""
    url = get_database_url()
    if url not in _engines:
        _engines[url] = create_app_engine(url)
    return _engines[url]


def init_db() -> None:
    SQLModel.metadata.create_all(get_engine())


@contextmanager
def get_session() -> Iterator[Session]:
    with Session(get_engine()) as session:
        yield session
