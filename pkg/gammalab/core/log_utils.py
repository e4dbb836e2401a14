import logging
import os
import sys
import threading
import time
from collections.abc import Callable
from datetime import UTC, datetime
from functools import lru_cache
from gammalab.core.constants import DEFAULT_FILE_MODE, LEVEL_MAP
from gammalab.core.settings import get_lab_settings
from pathlib import Path
from zoneinfo import ZoneInfo

# Output directories already checked for write access
_checked_directories: set[str] = set()
_directory_lock = threading.Lock()
_max_cached_directories = 100


def get_stream_handler(level: int, formatter: logging.Formatter) -> logging.StreamHandler:
    stream_hdlr = logging.StreamHandler()
    stream_hdlr.setFormatter(formatter)
    if stream_hdlr.level != level:
        stream_hdlr.setLevel(level)
    return stream_hdlr


def get_logger_and_formatter(
    name: str,
    datefmt: str,
    show_location: bool,
    timezone_: str,
) -> tuple[logging.Logger, logging.Formatter]:
    """Return the named logger stripped of old handlers, plus a run formatter."""
    logger = logging.getLogger(name)
    cleanup_logger_handlers(logger)

    formatter = logging.Formatter(get_format(show_location, name, timezone_), datefmt=datefmt)
    formatter.converter = get_timezone_function(timezone_)
    return logger, formatter


def check_directory_permissions(directory_path: str | Path) -> None:
    """Create the directory if needed and make sure it is writable."""
    directory_path = str(directory_path)
    if directory_path in _checked_directories:
        return

    with _directory_lock:
        if directory_path in _checked_directories:
            return

        path_obj = Path(directory_path)
        if path_obj.exists():
            if not os.access(directory_path, os.W_OK | os.X_OK):
                err_msg = f"Unable to access directory | {directory_path}"
                write_stderr(err_msg)
                raise PermissionError(err_msg)
        else:
            try:
                path_obj.mkdir(mode=DEFAULT_FILE_MODE, parents=True, exist_ok=True)
            except PermissionError as e:
                err_msg = f"Unable to create directory | {directory_path}"
                write_stderr(f"{err_msg} | {type(e).__name__}: {e}")
                raise PermissionError(err_msg) from e

        if len(_checked_directories) >= _max_cached_directories:
            _checked_directories.pop()
        _checked_directories.add(directory_path)


def clear_directory_cache() -> None:
    """Forget which directories were checked, e.g. after a test removed one."""
    with _directory_lock:
        _checked_directories.clear()


@lru_cache(maxsize=8)
def _zone(timezone_: str) -> ZoneInfo | None:
    """None stands for local time, including zones missing from the tz database."""
    if timezone_.lower() == "localtime":
        return None
    try:
        return ZoneInfo(timezone_)
    except (KeyError, ValueError):
        return None


def write_stderr(msg: str) -> None:
    """Timestamped ``[time]:[ERROR]:msg`` line for failures outside the run logger."""
    try:
        zone = _zone(get_lab_settings().timezone)
    except ValueError:
        zone = None
    dt = datetime.now() if zone is None else datetime.now(UTC).astimezone(zone)
    sys.stderr.write(f"[{dt.strftime('%Y-%m-%dT%H:%M:%S.%f%z')}]:[ERROR]:{msg}\n")


def get_level(level: str) -> int:
    """Map a level name onto a logging level, INFO when unknown"""
    if not isinstance(level, str):
        write_stderr(f"Unable to get log level. Setting default level to: 'INFO' ({logging.INFO})")
        return logging.INFO
    return LEVEL_MAP.get(level.lower(), logging.INFO)


@lru_cache(maxsize=8)
def get_timezone_offset(timezone_: str) -> str:
    zone = _zone(timezone_)
    return time.strftime("%z") if zone is None else datetime.now(zone).strftime("%z")


def get_format(show_location: bool, name: str, timezone_: str) -> str:
    _logger_name = f"[{name}]:" if name else ""
    _location = "[%(filename)s:%(funcName)s:%(lineno)d]:" if show_location else ""
    utc_offset = get_timezone_offset(timezone_)
    return f"[%(asctime)s.%(msecs)03d{utc_offset}]:[%(levelname)s]:{_logger_name}{_location}%(message)s"


@lru_cache(maxsize=8)
def get_timezone_function(time_zone: str) -> Callable:
    if time_zone.lower() == "utc":
        return time.gmtime
    zone = _zone(time_zone)
    if zone is None:
        return time.localtime
    return lambda *args: datetime.now(tz=zone).timetuple()


def cleanup_logger_handlers(logger: logging.Logger | None) -> None:
    """Close and detach every handler of the logger (None is accepted)."""
    if logger is None:
        return

    for handler in list(logger.handlers):
        try:
            handler.close()
        except (OSError, ValueError):
            pass
        finally:
            logger.removeHandler(handler)
