"""Logging configuration"""

import logging
import sys
from pathlib import Path
from typing import Optional

import structlog

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(log_level: str = "INFO", output_dir: Optional[str] = None) -> Optional[Path]:
    """Setup logging configuration

    Stdlib logging gets a stdout handler and, when ``output_dir`` is given, a
    file handler at ``<output_dir>/prism.log``. structlog events are rendered
    as key=value text and routed through the same handlers.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        output_dir: Directory for the log file

    Returns:
        Path of the log file, if one was opened
    """
    handlers = [logging.StreamHandler(sys.stdout)]
    log_file = None
    if output_dir:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        log_file = Path(output_dir) / "prism.log"
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.processors.KeyValueRenderer(key_order=["event"], sort_keys=True),
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )

    logger.info(f"Logging initialized - Level: {log_level}, File: {log_file}")
    return log_file
