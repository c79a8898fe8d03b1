import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

# .env 存在时加载（不覆盖已有环境变量）
load_dotenv(override=False)


def get_env_config() -> Dict[str, Any]:
    """从环境变量获取运行配置。"""
    return {
        "cache_dir": os.getenv("DEEMD_CACHE_DIR"),
        "jobs": int(os.getenv("DEEMD_JOBS", "1")),
        "log_level": os.getenv("DEEMD_LOG_LEVEL", "INFO"),
    }


def resolve_cache_dir(run_dir: Path, override: Optional[str] = None) -> Path:
    """阶段缓存目录：环境变量优先，否则为运行目录下的 .cache"""
    cache_dir = override or get_env_config()["cache_dir"]
    return Path(cache_dir) if cache_dir else run_dir / ".cache"
