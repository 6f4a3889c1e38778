"""
Runtime settings and logging shared by the services and the CLI.
"""

from .config import get_settings, settings
from .logger import get_logger, logger, run_log, setup_logging

__all__ = ["get_logger", "get_settings", "logger", "run_log", "settings", "setup_logging"]
