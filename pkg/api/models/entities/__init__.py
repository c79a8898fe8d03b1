"""
实体模型
"""

from .cache_record import CacheRecord

__all__ = ["CacheRecord"]
