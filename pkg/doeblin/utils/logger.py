"""
Logging configuration with colorized output and UTC/local timestamps
"""

import logging
import os
import sys
from datetime import datetime
from typing import Optional

import numpy as np
import pytz
from colorama import Fore, Style, just_fix_windows_console

from doeblin.core.config import settings


class ColoredFormatter(logging.Formatter):
    """Formatter with colors, UTC and/or local timestamps, and key=value highlighting"""

    COLORS = {
        "utc_timestamp": Fore.LIGHTCYAN_EX,
        "local_timestamp": Fore.LIGHTBLUE_EX,
        "debug": Fore.LIGHTBLACK_EX,
        "info": Fore.LIGHTGREEN_EX,
        "warn": Fore.LIGHTYELLOW_EX,
        "error": Fore.LIGHTRED_EX,
        "context": Fore.LIGHTMAGENTA_EX,
        "key": Fore.CYAN,
        "reset": Style.RESET_ALL,
    }

    LEVEL_NAMES = {
        "DEBUG": "debug",
        "INFO": "info",
        "WARNING": "warn",
        "ERROR": "error",
        "CRITICAL": "error",
    }

    def __init__(self, use_colors: bool = True):
        super().__init__()
        self.use_colors = use_colors and self._should_use_colors()
        self.timestamp_mode = settings.LOG_TIMESTAMP.lower()
        self.precision = settings.LOG_TIMESTAMP_PRECISION
        self.local_tz = pytz.timezone(settings.LOG_TIMEZONE)

    def _should_use_colors(self) -> bool:
        """Determine if colors should be used"""
        if os.environ.get("NO_COLOR", settings.NO_COLOR) == "1":
            return False

        log_color = settings.LOG_COLOR.lower()
        if log_color == "false":
            return False
        if log_color == "true":
            return True

        # Auto mode: containers and CI usually have no TTY
        if os.path.exists("/.dockerenv") or os.environ.get("CI"):
            return False
        return hasattr(sys.stdout, "isatty") and sys.stdout.isatty()

    def _colorize(self, text: str, color_key: str) -> str:
        if not self.use_colors:
            return text
        return f"{self.COLORS.get(color_key, '')}{text}{self.COLORS['reset']}"

    def _fraction(self, record: logging.LogRecord) -> str:
        if self.precision == 3:
            return f"{int(record.msecs):03d}"
        return f"{int(record.msecs * 1000):06d}"

    def _format_timestamp_utc(self, record: logging.LogRecord) -> str:
        dt = datetime.fromtimestamp(record.created, tz=pytz.utc)
        timestamp = f"{dt.strftime('%Y-%m-%d %H:%M:%S')}.{self._fraction(record)} UTC"
        return self._colorize(f"[{timestamp}]", "utc_timestamp")

    def _format_timestamp_local(self, record: logging.LogRecord) -> str:
        """Timestamp in LOG_TIMEZONE, independent of the host clock zone"""
        dt = datetime.fromtimestamp(record.created, tz=pytz.utc).astimezone(self.local_tz)
        timestamp = f"{dt.strftime('%Y-%m-%d %H:%M:%S')}.{self._fraction(record)} {dt.tzname()}"
        return self._colorize(f"[{timestamp}]", "local_timestamp")

    def _format_level(self, levelname: str) -> str:
        level = self.LEVEL_NAMES.get(levelname, levelname.lower())
        return self._colorize(f"[{level}]", level)

    def _format_context(self, record: logging.LogRecord) -> str:
        """Context comes from the `context` extra or the logger name minus the package"""
        context = getattr(record, "context", None)
        if not context:
            name_parts = record.name.split(".")
            if len(name_parts) > 1 and name_parts[0] == "doeblin":
                context = ".".join(name_parts[1:])
            elif record.name != "root":
                context = record.name
            else:
                return ""
        return " " + self._colorize(f"[{context}]", "context")

    def _colorize_kvs(self, message: str) -> str:
        """Highlight the key of every whitespace-separated key=value token"""
        if not self.use_colors or "=" not in message:
            return message
        tokens = []
        for token in message.split(" "):
            key, sep, value = token.partition("=")
            if sep and key and not key.startswith(('"', "'")):
                tokens.append(self._colorize(key, "key") + "=" + value)
            else:
                tokens.append(token)
        return " ".join(tokens)

    def format(self, record: logging.LogRecord) -> str:
        timestamp_parts = []
        if self.timestamp_mode in ("utc", "both"):
            timestamp_parts.append(self._format_timestamp_utc(record))
        if self.timestamp_mode in ("local", "both"):
            timestamp_parts.append(self._format_timestamp_local(record))

        message = self._colorize_kvs(record.getMessage())
        if record.levelname in ("ERROR", "CRITICAL") and self.use_colors:
            message = self._colorize(message, "error")

        # [timestamp(s)][level] message [context]
        log_line = (
            f"{''.join(timestamp_parts)}{self._format_level(record.levelname)} "
            f"{message}{self._format_context(record)}"
        )
        if record.exc_info:
            log_line += f"\n{self.formatException(record.exc_info)}"
        return log_line


class StructuredLogger:
    """Helper for structured logging with key-value pairs"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    @staticmethod
    def _format_value(value):
        """Floats to 6 significant digits, arrays as compact bracketed lists"""
        if isinstance(value, np.ndarray):
            text = np.array2string(value, precision=4, separator=",", threshold=20)
            return "".join(text.split())
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.6g}"
        return value

    def _format_kvs(self, **kwargs) -> str:
        parts = []
        for key, value in kwargs.items():
            key = key.replace("-", "_").replace(" ", "_").lower()
            value = self._format_value(value)
            if isinstance(value, str) and (" " in value or '"' in value or "=" in value):
                value = f'"{value}"'
            parts.append(f"{key}={value}")
        return " ".join(parts)

    def _log(self, level: int, message: str, context: Optional[str], **kwargs):
        if not self.logger.isEnabledFor(level):
            return
        extra = {"context": context} if context else {}
        kv_str = self._format_kvs(**kwargs) if kwargs else ""
        self.logger.log(level, f"{message} {kv_str}".strip(), extra=extra)

    def debug(self, message: str, context: Optional[str] = None, **kwargs):
        self._log(logging.DEBUG, message, context, **kwargs)

    def info(self, message: str, context: Optional[str] = None, **kwargs):
        self._log(logging.INFO, message, context, **kwargs)

    def warning(self, message: str, context: Optional[str] = None, **kwargs):
        self._log(logging.WARNING, message, context, **kwargs)

    def error(self, message: str, context: Optional[str] = None, **kwargs):
        self._log(logging.ERROR, message, context, **kwargs)


def setup_logging(level: Optional[str] = None):
    """Configure root logging: colored console plus optional plain file handler"""
    just_fix_windows_console()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, level or settings.LOG_LEVEL))
    console_handler.setFormatter(ColoredFormatter(use_colors=True))

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)
    root_logger.handlers.clear()
    root_logger.addHandler(console_handler)

    if settings.log_file_enabled:
        file_handler = logging.FileHandler(settings.LOG_FILE, encoding="utf-8")
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(ColoredFormatter(use_colors=False))
        root_logger.addHandler(file_handler)

    logging.info("logging_configured")


def get_structured_logger(name: str) -> StructuredLogger:
    """Get a structured logger for a module"""
    return StructuredLogger(logging.getLogger(name))
