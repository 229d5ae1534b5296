"""
Logging configuration for psflow
"""
import contextlib
import logging
import logging.config
from pathlib import Path
from typing import Dict, Iterator, Optional

PACKAGE_LOGGERS = ("numerics", "pipeline", "api", "utils", "launcher")
QUIET_LOGGERS = ("uvicorn", "fastapi", "httpx")
RUN_LOG_NAME = "run.log"

DETAILED_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(filename)s:%(lineno)d - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _logger_entry(level: str, handlers) -> Dict:
    return {"level": level, "handlers": list(handlers), "propagate": False}


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None):
    """
    Set up logging for the solvers, the command pipeline and the results service

    Args:
        log_level: The logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional rotating log file. If None, logs to console only.
    """
    log_level = log_level.upper()
    handlers = {
        "console": {
            "class": "logging.StreamHandler",
            "level": log_level,
            "formatter": "detailed",
            "stream": "ext://sys.stdout",
        }
    }
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers["file"] = {
            "class": "logging.handlers.RotatingFileHandler",
            "level": log_level,
            "formatter": "detailed",
            "filename": str(log_file),
            "maxBytes": 10485760,  # 10MB
            "backupCount": 5,
            "encoding": "utf8",
        }
    names = list(handlers)

    loggers = {"": _logger_entry(log_level, names)}
    loggers.update({name: _logger_entry(log_level, names) for name in PACKAGE_LOGGERS})
    # Third-party loggers stay at INFO
    loggers.update({name: _logger_entry("INFO", names) for name in QUIET_LOGGERS})

    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "detailed": {"format": DETAILED_FORMAT, "datefmt": DATE_FORMAT},
            "simple": {"format": "%(levelname)s - %(message)s"},
        },
        "handlers": handlers,
        "loggers": loggers,
    })

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging configured with level: {log_level}")
    if log_file:
        logger.info(f"Log file: {log_file}")


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the given name"""
    return logging.getLogger(name)


@contextlib.contextmanager
def run_log(out_dir: Path, level: int = logging.INFO) -> Iterator[Path]:
    """
    Copy package log records into <out_dir>/run.log while a command runs

    The handler is attached to the package loggers (they do not propagate),
    and removed again on exit.
    """
    path = Path(out_dir) / RUN_LOG_NAME
    handler = logging.FileHandler(path, mode="a", encoding="utf8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(DETAILED_FORMAT, DATE_FORMAT))
    targets = [logging.getLogger(name) for name in PACKAGE_LOGGERS]
    for target in targets:
        target.addHandler(handler)
    try:
        yield path
    finally:
        for target in targets:
            target.removeHandler(handler)
        handler.close()
