from __future__ import annotations

import hashlib
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable

import pandas as pd

logger = logging.getLogger(__name__)

# 运行目录下的各阶段子目录
STAGE_DIRS = ("synth", "preprocess", "train", "eval", "maps", "score", "select_k")


def ensure_directory(directory: Path) -> None:
    """确保目录存在"""
    directory.mkdir(parents=True, exist_ok=True)


def load_config(config_path: Path) -> Dict[str, Any]:
    """加载配置文件"""
    if not config_path.exists():
        return {}

    with open(config_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_config(config_path: Path, config: Dict[str, Any]) -> None:
    """保存配置文件"""
    ensure_directory(config_path.parent)
    with open(config_path, 'w', encoding='utf-8') as f:
        json.dump(config, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


# 元数据管理功能
def load_metadata(file_path: Path) -> Dict[str, Any]:
    """加载JSON元数据文件"""
    if not file_path.exists():
        raise FileNotFoundError(f"元数据文件不存在: {file_path}")

    with open(file_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_metadata(file_path: Path, metadata: Dict[str, Any]) -> None:
    """保存JSON元数据文件（键排序，保证重复运行字节一致）"""
    save_config(file_path, metadata)


def update_timestamp(metadata: Dict[str, Any]) -> None:
    """更新元数据的时间戳"""
    metadata["updated_at"] = datetime.now().isoformat()


def save_table(file_path: Path, table: pd.DataFrame) -> Path:
    """以固定格式写出CSV表格"""
    ensure_directory(file_path.parent)
    table.to_csv(file_path, index=False, float_format="%.10g", lineterminator="\n")
    logger.info(f"已写出表格: {file_path} ({len(table)} 行)")
    return file_path


# 哈希工具
def file_sha256(file_path: Path, chunk_size: int = 1 << 20) -> str:
    """计算文件内容的SHA-256"""
    digest = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_hash(payload: Any) -> str:
    """对可JSON序列化对象做规范化哈希"""
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def files_digest(paths: Iterable[Path]) -> Dict[str, str]:
    """文件路径 -> 内容哈希"""
    return {Path(p).as_posix(): file_sha256(Path(p)) for p in sorted(paths, key=lambda p: Path(p).as_posix())}


# 目录管理功能
def create_run_structure(run_dir: Path) -> Path:
    """创建运行目录结构"""
    ensure_directory(run_dir)
    for name in STAGE_DIRS:
        ensure_directory(run_dir / name)
    return run_dir
