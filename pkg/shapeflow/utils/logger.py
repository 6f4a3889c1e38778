"""
Logging configuration for ShapeFlow.

loguru with a colorized console sink, an optional rotating file sink and
per-run sinks that mirror one training run into a log next to its checkpoint.
Every record carries a `component` tag ("-" unless bound via get_logger).
"""

import os
import sys
from contextlib import contextmanager
from pathlib import Path

from loguru import logger

from .config import settings

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<magenta>{extra[component]: <8}</magenta> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[component]} | {name}:{function}:{line} | {message}"


def setup_logging(level: str = None) -> None:
    """(Re)configure the console sink and, when LOG_TO_FILE is on, the rotating file sink."""
    logger.remove()
    logger.configure(extra={"component": "-"})
    logger.add(sys.stderr, level=(level or settings.LOG_LEVEL).upper(), format=CONSOLE_FORMAT, colorize=True)

    if not settings.LOG_TO_FILE:
        return
    os.makedirs(settings.LOG_DIR, exist_ok=True)
    logger.add(
        os.path.join(settings.LOG_DIR, "shapeflow.log"),
        level="DEBUG",
        format=FILE_FORMAT,
        rotation="10 MB",
        retention="30 days",
        compression="zip",
        encoding="utf-8",
    )


setup_logging()


def get_logger(component: str = None):
    """Logger whose records are tagged with `component` (e.g. "trainer", "cli")."""
    if component:
        return logger.bind(component=component)
    return logger


@contextmanager
def run_log(path, level: str = "INFO"):
    """Mirror every record emitted inside the block into `path` (created, appended)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sink_id = logger.add(str(path), level=level.upper(), format=FILE_FORMAT, encoding="utf-8")
    try:
        yield path
    finally:
        logger.remove(sink_id)
