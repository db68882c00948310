"""
Logging setup shared by the library, the CLI and the study scripts.

The level comes from PARTICLESWARM_LOG_LEVEL (DEBUG, INFO, WARNING, ERROR); records go
to stderr so they never mix with CSV output.
"""
import logging
import os

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _level_from_env() -> int:
    name = os.getenv("PARTICLESWARM_LOG_LEVEL", "INFO").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


logging.basicConfig(format=LOG_FORMAT, level=_level_from_env())


def get_logger(name: str) -> logging.Logger:
    """Logger for a module; pass __name__."""
    return logging.getLogger(name)
