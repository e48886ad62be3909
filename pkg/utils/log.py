import logging
import os

# --- Configuration ---
LOG_ENV_VAR = "TELEM_LOG"
DEFAULT_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
DATE_FORMAT = "%H:%M:%S"

_configured = False


def configure_logging(level=None):
    """
    Sets up root logging once. Level comes from the argument, then the
    TELEM_LOG environment variable, then INFO.
    """
    global _configured
    name = (level or os.environ.get(LOG_ENV_VAR) or DEFAULT_LEVEL).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    root = logging.getLogger()
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
        root.addHandler(handler)
        _configured = True
    root.setLevel(numeric)
    return numeric


def get_logger(name):
    return logging.getLogger(name)
