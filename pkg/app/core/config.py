import os
from functools import lru_cache
from typing import List, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings, read from GEVBEV_* variables or a local .env file."""

    model_config = SettingsConfigDict(env_prefix="GEVBEV_", env_file=".env", extra="ignore")

    threads: Optional[int] = Field(default=None, ge=1)
    log_level: str = "INFO"
    host: str = "0.0.0.0"
    port: int = 8000
    cors_origins: List[str] = ["*"]

    @property
    def worker_count(self) -> int:
        return self.threads or os.cpu_count() or 1


@lru_cache
def get_settings() -> Settings:
    return Settings()
