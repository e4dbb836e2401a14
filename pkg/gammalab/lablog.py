import logging.handlers
from gammalab.core.constants import MB_TO_BYTES
from gammalab.core.log_utils import (
    check_directory_permissions,
    cleanup_logger_handlers,
    get_level,
    get_logger_and_formatter,
    get_stream_handler,
)
from gammalab.core.settings import get_lab_settings
from gammalab.core.thread_safety import auto_thread_safe
from pathlib import Path


@auto_thread_safe(["init"])
class LabLog:
    """Run logger for the ``gammalab`` package with context manager support for handler cleanup.

    Records go to stderr and, when a directory is given and ``log_to_file`` is set
    (argument or settings), to a size-rotating file inside it.
    """

    def __init__(
        self,
        level: str | None = None,
        name: str | None = None,
        directory: str | Path | None = None,
        filename: str | None = None,
        maxmbytes: int | None = None,
        backups: int | None = None,
        encoding: str | None = None,
        datefmt: str | None = None,
        timezone: str | None = None,
        streamhandler: bool = True,
        showlocation: bool | None = None,
        log_to_file: bool | None = None,
    ):
        _settings = get_lab_settings()
        self.level = get_level(level or _settings.log_level)
        self.appname = name or _settings.appname
        self.directory = directory
        self.filename = filename or _settings.log_filename
        self.maxmbytes = maxmbytes or _settings.max_log_size_mb
        self.backups = _settings.log_backups if backups is None else backups
        self.encoding = encoding or _settings.encoding
        self.datefmt = datefmt or _settings.date_format
        self.timezone = timezone or _settings.timezone
        self.streamhandler = streamhandler
        self.showlocation = _settings.show_location if showlocation is None else showlocation
        log_to_file = _settings.log_to_file if log_to_file is None else log_to_file
        self.log_to_file = directory is not None and log_to_file
        self.logger = None

    @property
    def log_path(self) -> Path | None:
        return Path(self.directory) / self.filename if self.log_to_file else None

    def init(self) -> logging.Logger:
        logger, formatter = get_logger_and_formatter(self.appname, self.datefmt, self.showlocation, self.timezone)
        if logger.level != self.level:
            logger.setLevel(self.level)

        if self.log_to_file:
            check_directory_permissions(self.directory)
            file_handler = logging.handlers.RotatingFileHandler(
                filename=self.log_path,
                mode="a",
                maxBytes=self.maxmbytes * MB_TO_BYTES,
                backupCount=self.backups,
                encoding=self.encoding,
            )
            file_handler.setFormatter(formatter)
            file_handler.setLevel(self.level)
            logger.addHandler(file_handler)

        if self.streamhandler:
            logger.addHandler(get_stream_handler(self.level, formatter))

        self.logger = logger
        return logger

    def __enter__(self) -> logging.Logger:
        if self.logger is None:
            self.init()
        return self.logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        cleanup_logger_handlers(self.logger)
        if self.logger is not None:
            self.logger.addHandler(logging.NullHandler())
