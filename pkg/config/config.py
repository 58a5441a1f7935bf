"""
Process-wide settings for the segwatch toolkit
Loads environment variables (prefix SEGWATCH_) and provides typed settings
"""

from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings loaded from environment variables or a .env file"""

    model_config = SettingsConfigDict(
        env_prefix="SEGWATCH_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ============================================
    # APPLICATION
    # ============================================
    log_level: str = Field(default="INFO")
    log_file: Optional[str] = Field(default=None)

    @field_validator("log_level")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        """Loguru level names are upper case"""
        level = v.strip().upper()
        if level not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level '{v}'")
        return level

    def validate_paths(self) -> None:
        """Ensure the log directory exists when a log file is configured"""
        if not self.log_file:
            return
        try:
            Path(self.log_file).parent.mkdir(parents=True, exist_ok=True)
        except (OSError, PermissionError) as e:
            print(f"⚠️  Could not create log directory (using stderr only): {e}")


# Global settings instance
try:
    settings = Settings()
    settings.validate_paths()
except Exception as e:
    print(f"❌ Error loading configuration: {e}")
    print("Check the SEGWATCH_* environment variables or your .env file")
    raise


__all__ = ["settings", "Settings"]
