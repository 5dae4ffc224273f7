from functools import lru_cache

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from utils import get_settings

Base = declarative_base()


@lru_cache(maxsize=None)
def get_engine(url: str):
    import models  # noqa: F401  registers the tables on Base

    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args)
    Base.metadata.create_all(bind=engine)
    return engine


def get_sessionmaker(url: str = None):
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url or get_settings().database_url))


def get_db(url: str = None):
    db = get_sessionmaker(url)()
    try:
        yield db
    finally:
        db.close()
