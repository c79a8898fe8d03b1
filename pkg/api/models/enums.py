"""
业务枚举定义
"""

from enum import Enum


class StageName(str, Enum):
    """流水线阶段枚举"""
    CONFIG = "config"
    SYNTH = "synth"
    PREPROCESS = "preprocess"
    TRAIN = "train"
    EVAL = "eval"
    MAP = "map"
    SCORE = "score"
    SELECT_K = "select-k"

    @property
    def exit_code(self) -> int:
        """各阶段失败时的退出码"""
        return STAGE_EXIT_CODES[self]

    @property
    def directory(self) -> str:
        """运行目录下的子目录名"""
        return {StageName.MAP: "maps", StageName.SELECT_K: "select_k"}.get(self, self.value)


STAGE_EXIT_CODES = {
    StageName.CONFIG: 2,
    StageName.SYNTH: 10,
    StageName.PREPROCESS: 11,
    StageName.TRAIN: 12,
    StageName.EVAL: 13,
    StageName.MAP: 14,
    StageName.SCORE: 15,
    StageName.SELECT_K: 16,
}

UNKNOWN_EXIT_CODE = 1


class CacheStatus(str, Enum):
    """阶段缓存状态"""
    HIT = "hit"
    MISS = "miss"


class MapSampleScope(str, Enum):
    """生成感染图的样本范围"""
    TEST = "test"
    UNTREATED_TEST = "untreated_test"
    TREATED_TEST = "treated_test"
    ALL = "all"
