import logging
import os
import sys

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _default_level():
    """Reads LOG_LEVEL from the environment, falling back to INFO."""
    name = os.getenv("LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def setup_logger(name, level=None):
    """Sets up a custom logger."""
    logger = logging.getLogger(name)
    logger.setLevel(level if level is not None else _default_level())

    # Modules may be re-imported by the test runner; attach one handler only.
    if not any(getattr(h, "_gist_handler", False) for h in logger.handlers):
        formatter = logging.Formatter(_FORMAT)
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(formatter)
        handler._gist_handler = True
        logger.addHandler(handler)
    logger.propagate = False  # Prevent duplicate logs in parent loggers

    return logger


def set_global_level(level):
    """Applies a level to every logger created through setup_logger."""
    for logger in logging.Logger.manager.loggerDict.values():
        if isinstance(logger, logging.Logger) and any(
            getattr(h, "_gist_handler", False) for h in logger.handlers
        ):
            logger.setLevel(level)


log = setup_logger(__name__)
