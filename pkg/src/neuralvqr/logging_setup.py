"""
Structured logging for the CLI and the server
"""

import json
import logging
import os
import sys
from typing import Optional

LOG_LEVEL = os.getenv("NEURALVQR_LOG_LEVEL", "INFO").upper()


class JsonLineFormatter(logging.Formatter):
    """One JSON object per record: timestamp, level, logger, message"""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "timestamp": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def configure_logging(level: Optional[str] = None, stream=None) -> None:
    """Install a single JSON-line handler on the package logger"""
    root = logging.getLogger("neuralvqr")
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root.addHandler(handler)
    root.setLevel((level or LOG_LEVEL).upper())
    root.propagate = False
