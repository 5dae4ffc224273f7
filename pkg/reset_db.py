from sqlalchemy.engine import make_url

import models  # noqa: F401
from database import Base, get_engine
from utils import get_settings, setup_logging, logger

setup_logging()
url = get_settings().database_url
engine = get_engine(url)

logger.info("🔨 Dropping run registry tables at %s", make_url(url).render_as_string(hide_password=True))
Base.metadata.drop_all(bind=engine)

logger.info("🚀 Creating tables from models...")
Base.metadata.create_all(bind=engine)

logger.info("✅ Run registry reset complete")
