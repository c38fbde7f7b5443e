import logging
import sys
from typing import Optional

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
_DATEFMT = '%Y-%m-%d %H:%M:%S'


def get_logger(name: str, level: Optional[str] = None) -> logging.Logger:
    """
    Get or create a logger with the specified name.

    Args:
        name: Logger name (typically __name__)
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL);
            defaults to the configured settings level

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    # Only configure if not already configured
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(fmt=_FORMAT, datefmt=_DATEFMT))
        logger.addHandler(handler)
        logger.propagate = False

        if level is None:
            # Imported lazily: config imports torch, logger must stay cheap
            from tsbsmamba.core.config import get_settings
            level = get_settings().log_level
        logger.setLevel(getattr(logging, level.upper()))

    return logger


def set_level(level: str) -> None:
    """Change the level of every tsbsmamba logger created so far."""
    numeric = getattr(logging, level.upper())
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("tsbsmamba") and isinstance(logger, logging.Logger):
            logger.setLevel(numeric)
