import logging
import logging.handlers
import os
import sys
from typing import Optional

from app.config import settings


def setup_logging(log_dir: Optional[str] = None, level: Optional[str] = None):
    """Configure logging to write to stderr and a rotating file.

    stdout is left alone: the CLI prints machine-readable results there.
    """
    log_dir = log_dir or settings.LOG_DIR
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    log_file = os.path.join(log_dir, f"{settings.APP_NAME}.log")

    file_formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    console_formatter = logging.Formatter(
        '%(name)s - %(levelname)s - %(message)s'
    )

    file_handler = logging.handlers.RotatingFileHandler(
        log_file,
        maxBytes=10*1024*1024,  # 10MB
        backupCount=5
    )
    file_handler.setFormatter(file_formatter)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(console_formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, (level or settings.LOG_LEVEL).upper()))

    # Remove existing handlers to avoid duplicates if re-initialized
    root_logger.handlers = []

    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)

    # LangGraph and SQLAlchemy are chatty at INFO
    logging.getLogger("sqlalchemy.engine").setLevel(logging.WARNING)
    logging.getLogger("langgraph").setLevel(logging.WARNING)

    logger = logging.getLogger("app")
    logger.info(f"Logging configured. Writing to {log_file}")
