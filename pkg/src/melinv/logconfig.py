"""
melinv logging setup
Console logging with optional color, configured once by the CLI
"""

import logging
import sys
from typing import Optional

import colorlog

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

_handler: Optional[logging.Handler] = None


def configure_logging(level: str = "INFO", color: bool = True) -> None:
    """Install (or replace) the melinv stderr handler on the root logger"""
    global _handler

    handler = logging.StreamHandler(sys.stderr)
    if color and sys.stderr.isatty():
        handler.setFormatter(colorlog.ColoredFormatter('%(log_color)s' + LOG_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root = logging.getLogger()
    if _handler is not None:
        root.removeHandler(_handler)
    root.addHandler(handler)
    root.setLevel(level.upper())
    _handler = handler
