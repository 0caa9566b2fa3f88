# app/hullshape/config.py
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv

from app.hullshape.errors import ConfigError

load_dotenv()

DEFAULT_CHUNK_PATHS = 2048
DEFAULT_OUTPUT_DIR = "results"


@dataclass(frozen=True)
class Settings:
    threads: int = 0
    log_level: str = "INFO"
    chunk_paths: int = DEFAULT_CHUNK_PATHS
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from None


def get_settings() -> Settings:
    """
    Read HULLSHAPE_* variables (a local .env is honoured).
    Called per use so tests can monkeypatch the environment.
    """
    return Settings(
        threads=_env_int("HULLSHAPE_THREADS", 0),
        log_level=os.getenv("HULLSHAPE_LOG_LEVEL", "INFO").strip().upper() or "INFO",
        chunk_paths=max(1, _env_int("HULLSHAPE_CHUNK_PATHS", DEFAULT_CHUNK_PATHS)),
        output_dir=Path(os.getenv("HULLSHAPE_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)),
    )


def resolve_threads(flag: Optional[int]) -> int:
    """--threads wins, then HULLSHAPE_THREADS; 0 means one worker per CPU."""
    threads = flag if flag is not None else get_settings().threads
    if threads < 0:
        raise ValueError("threads must be >= 0")
    if threads == 0:
        return os.cpu_count() or 1
    return threads


def load_config_file(path: Path) -> Dict[str, str]:
    """
    Flat key=value file -> {dest_name: raw string}.
    Keys may use dashes or underscores; blank values are dropped.
    """
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    raw = dotenv_values(path)
    out: Dict[str, str] = {}
    for key, value in raw.items():
        if value is None or not value.strip():
            continue
        out[key.strip().lstrip("-").replace("-", "_").lower()] = value.strip()
    return out
