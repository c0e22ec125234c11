"""
Runtime configuration
Values are read from the environment (or a .env file next to this module)
and fall back to desk-scale defaults.
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

env_path = Path(__file__).parent / ".env"
if env_path.exists():
    load_dotenv(env_path)

# Largest |X| any enumeration-based operation will touch
ENUMERATION_CAP = int(os.environ.get("PMAP_ENUMERATION_CAP") or 2 ** 20)

DEFAULT_SEED = int(os.environ.get("PMAP_SEED") or 0)
WORKERS = int(os.environ.get("PMAP_WORKERS") or 1)
OUTPUT_DIR = os.environ.get("PMAP_OUTPUT_DIR") or "output"
LOG_LEVEL = os.environ.get("PMAP_LOG_LEVEL") or "INFO"

MAX_RESTARTS = int(os.environ.get("PMAP_MAX_RESTARTS") or 1000)
REFERENCE_M = int(os.environ.get("PMAP_REFERENCE_M") or 1000)

# Quadrature
QUAD_TOL = float(os.environ.get("PMAP_QUAD_TOL") or 1e-8)
QUAD_MAX_EVAL = int(os.environ.get("PMAP_QUAD_MAX_EVAL") or 10 ** 6)


def configure_logging(level: str = None) -> None:
    """Route package log records to stderr as bare "[TAG] message" lines"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(message)s",
    )
