from __future__ import annotations

import logging
import sys
from typing import List, Optional

from app.core.cli_error import CliError
from app.core.config import settings
from app.core.exceptions import EXIT_OK
from app.core.logging import configure_logging
from app.presentation.cli.cli import build_parser

logger = logging.getLogger(__name__)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; any failure ends with a single JSON error record on stderr."""
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging(settings)
    try:
        args = build_parser().parse_args(argv)
        if args.log_level:
            configure_logging(settings, args.log_level)
        code = args.handler(args, argv)
        return EXIT_OK if code is None else int(code)
    except Exception as exc:
        error = CliError.from_exception(exc)
        if error.error_code == "internal_error":
            logger.exception("unhandled error")
        else:
            logger.debug("command failed", exc_info=True)
        sys.stderr.flush()
        print(error.to_record(), file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
