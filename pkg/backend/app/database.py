from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base


def make_engine(url: str):
    if url.startswith("sqlite"):
        return create_engine(url, connect_args={"check_same_thread": False})
    return create_engine(url)


Base = declarative_base()


def init_db(bind):
    # Import models so their tables register on Base.metadata
    from app import models  # noqa: F401

    database = bind.url.database
    if bind.url.get_backend_name() == "sqlite" and database and database != ":memory:":
        Path(database).parent.mkdir(parents=True, exist_ok=True)
    Base.metadata.create_all(bind=bind)
