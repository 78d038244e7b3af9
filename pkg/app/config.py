"""
Process-level settings read from the environment (prefix ``LESR_``) and ``.env``.
"""

from functools import lru_cache
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="LESR_", env_file=".env", extra="ignore")

    runs_dir: str = "runs"
    log_level: str = "INFO"
    environment: Literal["development", "production"] = "development"
    llm_endpoint: Optional[str] = None
    llm_model: Optional[str] = None


@lru_cache
def get_settings() -> Settings:
    return Settings()
