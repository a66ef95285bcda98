import logging
import os
from functools import lru_cache

logger = logging.getLogger(__name__)

DEFAULT_MC_SHARD_SIZE = 250_000


@lru_cache(maxsize=1)
def get_worker_count() -> int:
    """Thread-pool width for Monte-Carlo shards and trials (PDP_WORKERS)."""
    default_workers = min(8, os.cpu_count() or 1)
    return _read_positive_int("PDP_WORKERS", default_workers)


@lru_cache(maxsize=1)
def get_mc_shard_size() -> int:
    return _read_positive_int("PDP_MC_SHARD_SIZE", DEFAULT_MC_SHARD_SIZE)


def _read_positive_int(env_var_name: str, default: int) -> int:
    raw_value = os.getenv(env_var_name)
    if raw_value in (None, ""):
        return default
    try:
        value = int(raw_value)
    except ValueError as exc:
        raise ValueError(f"{env_var_name} must be an integer") from exc
    if value < 1:
        raise ValueError(f"{env_var_name} must be positive")

    logger.debug("Using %s=%d from environment", env_var_name, value)
    return value
