import logging
import signal
import sys
import threading
from functools import partial
from typing import Optional, Sequence

from onestep_sr.logging_config import Logger
from onestep_sr.start_modes.args_mode import ArgsParser, UsageError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


def graceful_shutdown(signum, frame, stop_event: threading.Event):
    """
    Handles SIGINT: training and calibration loops finish the current step and return.

    Args:
        signum (int): Signal number.
        frame (frame): Current stack frame.
        stop_event (threading.Event): Event checked by the long-running loops.
    """
    logging.info("Gracefully shutting down after the current step...")
    stop_event.set()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Entry point of the onestep-sr command. Returns 0 on success, 1 on a usage error and 2 on a runtime failure.
    """
    Logger.init_core_logger()

    stop_event = threading.Event()
    signal.signal(signal.SIGINT, partial(graceful_shutdown, stop_event=stop_event))

    try:
        ArgsParser.run(argv, stop_event)
    except UsageError as e:
        logging.error(f"Usage error: {e}")
        return EXIT_USAGE
    except (ValueError, RuntimeError, FloatingPointError, OSError) as e:
        logging.error(e)
        return EXIT_FAILURE
    except Exception as e:
        logging.critical(f"An error occurred: {e}", exc_info=True)
        return EXIT_FAILURE

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
