from __future__ import annotations

import logging
import sys
from typing import Optional

from app.core.config import Settings, settings as default_settings

_HANDLER_NAME = "sfd-stderr"


def configure_logging(settings: Optional[Settings] = None, level: Optional[str] = None) -> None:
    """Install one stderr handler on the root logger (idempotent)."""
    settings = settings or default_settings
    root = logging.getLogger()
    for handler in list(root.handlers):
        if handler.get_name() == _HANDLER_NAME:
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter(settings.LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel((level or settings.LOG_LEVEL).upper())
    # matplotlib and PIL are chatty at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("PIL").setLevel(logging.WARNING)
