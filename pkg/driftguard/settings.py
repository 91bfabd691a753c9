import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path


def _clean(value: str | None) -> str | None:
    if value is None:
        return None
    sanitized = value.strip().strip('"').strip("'")
    return sanitized or None


def _as_int(value: str | None, default: int) -> int:
    try:
        return int(value) if value is not None else default
    except ValueError:
        return default


@dataclass(frozen=True)
class Settings:
    data_dir: Path
    runs_dir: Path
    workers: int
    log_level: str
    air_quality_url: str | None
    tetouan_url: str | None


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Environment-backed settings, cached after the first read.
    Leading/trailing quotes are stripped so values copied from .env files behave.
    """
    return Settings(
        data_dir=Path(_clean(os.getenv("DRIFTGUARD_DATA_DIR")) or "data"),
        runs_dir=Path(_clean(os.getenv("DRIFTGUARD_RUNS_DIR")) or "runs"),
        workers=max(1, _as_int(_clean(os.getenv("DRIFTGUARD_WORKERS")), os.cpu_count() or 1)),
        log_level=(_clean(os.getenv("DRIFTGUARD_LOG_LEVEL")) or "INFO").upper(),
        air_quality_url=_clean(os.getenv("DRIFTGUARD_AIR_QUALITY_URL")),
        tetouan_url=_clean(os.getenv("DRIFTGUARD_TETOUAN_URL")),
    )


def reload_settings() -> Settings:
    # Clear cache so env injected after import (tests, dotenv) is picked up.
    get_settings.cache_clear()  # type: ignore[attr-defined]
    return get_settings()
