"""
Configuration management using Pydantic Settings V2
"""

import logging
from pathlib import Path

import pytz
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings with validation - Pydantic V2"""

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "logs/doeblin.log"  # empty string disables the file handler
    LOG_TIMESTAMP: str = "utc"  # utc | local | both
    LOG_TIMEZONE: str = "UTC"  # any pytz zone, used by the "local" timestamp
    LOG_COLOR: str = "auto"  # auto | true | false
    LOG_TIMESTAMP_PRECISION: int = 6  # 3=ms, 6=μs
    NO_COLOR: str = "0"  # 1=force disable colors

    # Sampling
    PARTICLE_WORKERS: int = 1  # threads used for particle sampling; never changes results

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Only stdlib level names are accepted"""
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {v!r}")
        return level

    @field_validator("LOG_FILE")
    @classmethod
    def create_log_directory(cls, v: str) -> str:
        """Ensure log directory exists"""
        if v:
            Path(v).parent.mkdir(parents=True, exist_ok=True)
        return v

    @field_validator("LOG_TIMESTAMP")
    @classmethod
    def validate_timestamp_mode(cls, v: str) -> str:
        mode = v.lower()
        if mode not in ("utc", "local", "both"):
            raise ValueError("LOG_TIMESTAMP must be one of: utc, local, both")
        return mode

    @field_validator("LOG_TIMEZONE")
    @classmethod
    def validate_timezone(cls, v: str) -> str:
        """Reject zone names pytz does not know"""
        try:
            pytz.timezone(v)
        except pytz.UnknownTimeZoneError as e:
            raise ValueError(f"Unknown LOG_TIMEZONE: {v}") from e
        return v

    @field_validator("PARTICLE_WORKERS")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("PARTICLE_WORKERS must be at least 1")
        return v

    @property
    def log_file_enabled(self) -> bool:
        return bool(self.LOG_FILE)


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get settings instance (for dependency injection)"""
    return settings
