"""Configuration management for the request-cloning simulator."""

import logging
import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    """Application configuration."""

    # Output locations
    OUTPUT_DIR: str = os.getenv("CLONESIM_OUTPUT_DIR", "results")
    PRESETS_DIR: str = os.getenv("CLONESIM_PRESETS_DIR", "presets")

    # Runner
    JOBS: int = int(os.getenv("CLONESIM_JOBS", "1"))
    SEED: int = int(os.getenv("CLONESIM_SEED", "42"))

    # Emitters
    ECDF_POINTS: int = int(os.getenv("CLONESIM_ECDF_POINTS", "2000"))
    SEGMENT_HALF_WIDTH: float = float(os.getenv("CLONESIM_SEGMENT_HALF_WIDTH", "0.02"))

    # Logging
    DEBUG: bool = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_FILE: Optional[str] = os.getenv("CLONESIM_LOG_FILE")

    @classmethod
    def log_level(cls) -> int:
        """Resolve the effective logging level."""
        if cls.DEBUG:
            return logging.DEBUG
        return getattr(logging, cls.LOG_LEVEL, logging.INFO)

    @classmethod
    def validate(cls) -> bool:
        """Check configured values and warn about the ones out of range."""
        valid = True
        if cls.JOBS < 1:
            logger.warning(f"CLONESIM_JOBS={cls.JOBS} is not positive; runs will use 1 worker")
            valid = False
        if cls.SEED < 0:
            logger.warning(f"CLONESIM_SEED={cls.SEED} is negative; numpy seed sequences need a nonnegative seed")
            valid = False
        if cls.ECDF_POINTS < 2:
            logger.warning(f"CLONESIM_ECDF_POINTS={cls.ECDF_POINTS} is too small to draw a curve")
            valid = False
        if cls.SEGMENT_HALF_WIDTH <= 0:
            logger.warning("CLONESIM_SEGMENT_HALF_WIDTH must be positive")
            valid = False
        if not hasattr(logging, cls.LOG_LEVEL):
            logger.warning(f"Unknown LOG_LEVEL '{cls.LOG_LEVEL}', falling back to INFO")
            valid = False
        return valid


# Global config instance
config = Config()
