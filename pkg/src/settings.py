"""
プロセス設定 - config.env と環境変数から読み込む
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

from src.errors import ConfigError

DEFAULT_MAX_ENTRIES = 50_000_000


@dataclass(frozen=True)
class Settings:
    workers: int
    max_entries: int
    log_level: str


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{name} は整数である必要があります: {raw!r}")
    if value < 1:
        raise ConfigError(f"{name} は1以上である必要があります: {value}")
    return value


def load_settings(env_file: str = "config.env") -> Settings:
    # config.envから環境変数を読み込み (既存の環境変数は上書きしない)
    load_dotenv(env_file)
    return Settings(
        workers=_int_env("LOWRANK_WORKERS", min(4, os.cpu_count() or 1)),
        max_entries=_int_env("LOWRANK_MAX_ENTRIES", DEFAULT_MAX_ENTRIES),
        log_level=os.getenv("LOWRANK_LOG_LEVEL", "INFO").upper(),
    )
