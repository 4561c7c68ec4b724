import datetime
import locale
import logging

_LOG_FORMAT = ('[%(asctime)s] %(levelname)s | '
               'module: %(module)s | '
               'funcName: %(funcName)s | '
               '%(message)s')
_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class Logger:
    IS_CORE_LOGGER_ENABLED: bool = False
    IS_WARNING_LOGGER_ENABLED: bool = False

    @staticmethod
    def init_core_logger(level: int = logging.INFO):
        """
        Configures the root logger once for the whole run.
        Messages carry timestamp, level, module, function name and text.

        Args:
            level (int): Root logging level; the CLI lowers it to DEBUG with --verbose.
        """
        if not Logger.IS_CORE_LOGGER_ENABLED:
            logging.basicConfig(
                level=level,
                format=_LOG_FORMAT,
                datefmt=_DATE_FORMAT,
                encoding=locale.getpreferredencoding()
            )

            Logger.IS_CORE_LOGGER_ENABLED = True

    @staticmethod
    def init_warning_logger():
        """
        Adds a file handler collecting WARNING and above into onestep_sr_errors_<date>.log.
        """
        if not Logger.IS_WARNING_LOGGER_ENABLED:
            current_date = datetime.datetime.now().strftime('%Y-%m-%d')
            file_handler = logging.FileHandler(
                f"onestep_sr_errors_{current_date}.log",
                encoding=locale.getpreferredencoding()
            )
            file_handler.setLevel(logging.WARNING)
            file_handler.setFormatter(logging.Formatter(_LOG_FORMAT, datefmt=_DATE_FORMAT))

            logging.getLogger().addHandler(file_handler)

            Logger.IS_WARNING_LOGGER_ENABLED = True
