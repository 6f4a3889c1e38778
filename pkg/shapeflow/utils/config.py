"""
Configuration management for ShapeFlow.

Loads runtime settings from environment variables with sensible defaults.
Experiment hyperparameters live in shapeflow.models.config instead.
"""

import os
from pathlib import Path
from functools import lru_cache

# Try to load .env file if python-dotenv is available
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv not installed, rely on system env vars

import psutil

# Project root: two levels up from this file (shapeflow/utils/config.py -> project root)
_PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent


def _env_bool(key: str, default: str) -> bool:
    return os.getenv(key, default).strip().lower() in ("1", "true", "yes", "on")


def _default_workers() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


class Settings:
    """Runtime settings loaded from environment variables."""

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("LOG_DIR", str(_PROJECT_ROOT / "logs"))
    LOG_TO_FILE: bool = _env_bool("LOG_TO_FILE", "true")

    # Paths
    DATA_DIR: str = os.getenv("DATA_DIR", str(_PROJECT_ROOT / "data"))
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", str(_PROJECT_ROOT / "runs"))

    # Compute
    NUM_WORKERS: int = int(os.getenv("NUM_WORKERS", "0")) or _default_workers()
    TORCH_THREADS: int = int(os.getenv("TORCH_THREADS", "0"))  # 0 = torch default

    # Tests
    RUN_SLOW: bool = _env_bool("SHAPEFLOW_RUN_SLOW", "false")

    @classmethod
    def system_info(cls) -> dict:
        """CPU / memory summary logged at the start of a run."""
        mem = psutil.virtual_memory()
        return {
            "cpu_physical": psutil.cpu_count(logical=False),
            "cpu_logical": psutil.cpu_count(),
            "memory_total_gb": round(mem.total / 1024 ** 3, 1),
            "memory_available_gb": round(mem.available / 1024 ** 3, 1),
        }


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Convenience export
settings = get_settings()
