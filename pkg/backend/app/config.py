"""Configuration settings for the application."""
from pydantic_settings import BaseSettings
from pathlib import Path

# Get project root (parent of backend/)
BASE_DIR = Path(__file__).resolve().parent.parent.parent
ENV_FILE = BASE_DIR / ".env"


class Settings(BaseSettings):
    APP_NAME: str = "autolab"
    LOG_LEVEL: str = "INFO"
    LOG_DIR: str = "logs"

    # Run ledger
    DATABASE_URL: str = "sqlite:///./runs/autolab.db"
    OUTPUT_DIR: str = "runs"
    SCENARIO_DIR: Path = BASE_DIR / "scenarios"

    # Engine
    DEFAULT_SEED: int = 7
    DEFAULT_BUDGET: int = 30
    TICKS_PER_MINUTE: int = 10
    PLATE_COLUMNS: int = 12

    # Storage workload
    DEFAULT_COVERAGE: int = 30
    INDEX_NT: int = 8
    PAYLOAD_NT: int = 16
    CONSENSUS_BAND: int = 4
    MAX_INDEX_DISTANCE: int = 2

    class Config:
        env_file = str(ENV_FILE)
        env_file_encoding = 'utf-8'
        env_prefix = "AUTOLAB_"
        extra = "ignore"


settings = Settings()
